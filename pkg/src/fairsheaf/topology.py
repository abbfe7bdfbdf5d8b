"""Fairness-encoding graph constructions over tabular data.

Three families: k-nearest-neighbour and unit-ball graphs connect similar
rows (individual fairness), while the subset graph adds one virtual
aggregator node per group of a partition and wires the aggregators
together (group fairness). Graphs can be unioned with convex weights for
mixed configurations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, DegenerateDataError, PartitionError


@dataclass
class FairGraph:
    """Weighted undirected graph over n_real data rows plus virtual nodes.

    Edges are stored once per unordered pair with u < v and weight > 0.
    virtual_meta maps each virtual node id to the real rows it aggregates.
    """

    n_real: int
    n_virtual: int
    edges: list[tuple[int, int, float]]
    virtual_meta: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n_total = self.n_real + self.n_virtual
        seen = set()
        normalized = []
        for u, v, w in self.edges:
            u, v = int(u), int(v)
            if u > v:
                u, v = v, u
            if u == v:
                raise ConfigurationError(f"self-loop on node {u}")
            if not 0 <= u < n_total or not v < n_total:
                raise ConfigurationError(f"edge ({u},{v}) outside [0, {n_total})")
            if w <= 0:
                raise ConfigurationError(f"edge ({u},{v}) has non-positive weight {w}")
            if (u, v) in seen:
                raise ConfigurationError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            normalized.append((u, v, float(w)))
        self.edges = normalized

    @property
    def n_total(self) -> int:
        return self.n_real + self.n_virtual

    def degrees(self) -> np.ndarray:
        """Sum of incident edge weights per node."""
        deg = np.zeros(self.n_total)
        for u, v, w in self.edges:
            deg[u] += w
            deg[v] += w
        return deg


@dataclass
class Partition:
    """Disjoint groups of real row indices covering all rows."""

    groups: list[np.ndarray]
    name: str = ""

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=int) for g in self.groups]

    def validate(self, n_real: int) -> None:
        if not self.groups:
            raise PartitionError(f"partition '{self.name}' has no groups")
        seen = np.zeros(n_real, dtype=bool)
        for j, group in enumerate(self.groups):
            if len(group) == 0:
                raise PartitionError(f"partition '{self.name}' group {j} is empty")
            if seen[group].any():
                raise PartitionError(f"partition '{self.name}' groups overlap")
            seen[group] = True
        if not seen.all():
            missing = int(np.flatnonzero(~seen)[0])
            raise PartitionError(
                f"partition '{self.name}' does not cover row {missing}"
            )


def partition_by_sensitive(ds: Dataset, name: str = "sensitive") -> Partition:
    """Two groups: protected rows (a=0) and privileged rows (a=1)."""
    groups = [np.flatnonzero(ds.sensitive == 0), np.flatnonzero(ds.sensitive == 1)]
    groups = [g for g in groups if len(g) > 0]
    part = Partition(groups=groups, name=name)
    part.validate(ds.n)
    return part


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

_BLOCK = 2048  # rows per distance block, bounds peak memory at ~ n*_BLOCK floats


def _block_distances(X: np.ndarray, rows: slice) -> np.ndarray:
    """Euclidean distances from X[rows] to all of X."""
    diff = X[rows, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn_indices(X: np.ndarray, k: int) -> np.ndarray:
    """The k nearest other rows for every row, ties broken by lower index.

    Returns an (n, k) integer array; the point itself is never its own
    neighbour.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    out = np.empty((n, k), dtype=int)
    for start in range(0, n, _BLOCK):
        rows = slice(start, min(start + _BLOCK, n))
        dist = _block_distances(X, rows)
        for i in range(rows.start, rows.stop):
            row = dist[i - rows.start].copy()
            row[i] = np.inf
            # stable sort on distance keeps ascending index order among ties
            out[i] = np.argsort(row, kind="stable")[:k]
    return out


def pairwise_distances_condensed(X: np.ndarray) -> np.ndarray:
    """All n(n-1)/2 pairwise Euclidean distances (pairs with i < j)."""
    from scipy.spatial.distance import pdist

    return pdist(np.asarray(X, dtype=float), metric="euclidean")


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Quantile by the nearest-rank rule: the sorted value at rank round(q*m).

    q must lie in (0, 1]; the rank is clamped to [1, m].
    """
    if not 0.0 < q <= 1.0:
        raise ConfigurationError(f"quantile level must lie in (0, 1], got {q}")
    values = np.sort(np.asarray(values, dtype=float))
    m = len(values)
    if m == 0:
        raise ConfigurationError("cannot take a quantile of an empty set")
    rank = int(np.floor(q * m + 0.5))
    rank = min(max(rank, 1), m)
    return float(values[rank - 1])


def quantile_distance(ds: Dataset, q: float) -> float:
    """Nearest-rank quantile of all pairwise feature distances."""
    dists = pairwise_distances_condensed(ds.features)
    if np.max(dists) == 0.0:
        raise DegenerateDataError("all points identical: distance quantile undefined")
    return nearest_rank(dists, q)


# ---------------------------------------------------------------------------
# Graph builders
# ---------------------------------------------------------------------------


def build_knn_graph(ds: Dataset, k: int) -> FairGraph:
    """Symmetrized k-nearest-neighbour graph with unit weights.

    (u, v) is an edge iff u is among v's k nearest or vice versa; ties in
    distance go to the lower row index.
    """
    neighbours = knn_indices(ds.features, k)
    pairs = set()
    for i in range(ds.n):
        for j in neighbours[i]:
            pairs.add((min(i, int(j)), max(i, int(j))))
    edges = [(u, v, 1.0) for u, v in sorted(pairs)]
    return FairGraph(n_real=ds.n, n_virtual=0, edges=edges)


def build_unit_ball_graph(
    ds: Dataset, delta: float, inverse_distance_weights: bool = False
) -> FairGraph:
    """Graph joining every pair strictly closer than delta.

    May be empty when delta is below the minimum pairwise distance. The
    optional flag weights each edge by the inverse of its length instead
    of 1 (off by default).
    """
    if delta <= 0:
        raise ConfigurationError(f"delta must be positive, got {delta}")
    X = ds.features
    edges = []
    for start in range(0, ds.n, _BLOCK):
        rows = slice(start, min(start + _BLOCK, ds.n))
        dist = _block_distances(X, rows)
        for i in range(rows.start, rows.stop):
            close = np.flatnonzero(dist[i - rows.start] < delta)
            for j in close:
                if j > i:
                    w = 1.0 / dist[i - rows.start, j] if inverse_distance_weights else 1.0
                    edges.append((i, int(j), w))
    return FairGraph(n_real=ds.n, n_virtual=0, edges=edges)


def build_subset_graph(ds: Dataset, partitions: list[Partition]) -> FairGraph:
    """Aggregator graph: one virtual node per group, wired within partitions.

    Every member connects to its group's aggregator with weight
    1/|group|, so the restriction map scale (the square root of the
    weight) is 1/sqrt(|group|) and the aggregator's diagonal block stays
    comparable to the rep-to-rep edges regardless of group size.
    Aggregators of the same partition are fully connected with weight 1;
    aggregators of different partitions are not connected. A
    single-group partition yields the star graph.
    """
    if not partitions:
        raise PartitionError("need at least one partition")
    edges: list[tuple[int, int, float]] = []
    virtual_meta: dict[int, np.ndarray] = {}
    next_id = ds.n
    for part in partitions:
        part.validate(ds.n)
        rep_ids = []
        for group in part.groups:
            vid = next_id
            next_id += 1
            rep_ids.append(vid)
            virtual_meta[vid] = np.asarray(group, dtype=int)
            w = 1.0 / len(group)
            for member in group:
                edges.append((int(member), vid, w))
        for i in range(len(rep_ids)):
            for j in range(i + 1, len(rep_ids)):
                edges.append((rep_ids[i], rep_ids[j], 1.0))
    return FairGraph(
        n_real=ds.n,
        n_virtual=next_id - ds.n,
        edges=edges,
        virtual_meta=virtual_meta,
    )


def union_graphs(parts: list[tuple[FairGraph, float]]) -> FairGraph:
    """Weighted union of graphs over the same real rows.

    Edge weights are scaled by each graph's coefficient and summed where
    pairs coincide; virtual nodes of later graphs are re-indexed past the
    earlier ones. The identity-sheaf Laplacian of the union equals the
    same convex combination of the parts' Laplacians (after padding).
    """
    if not parts:
        raise ConfigurationError("need at least one graph")
    n_real = parts[0][0].n_real
    merged: dict[tuple[int, int], float] = {}
    virtual_meta: dict[int, np.ndarray] = {}
    offset = 0
    for g, weight in parts:
        if g.n_real != n_real:
            raise ConfigurationError(
                f"graphs disagree on real node count: {g.n_real} vs {n_real}"
            )
        if weight <= 0:
            raise ConfigurationError(f"combination weight must be positive, got {weight}")

        def shift(node: int) -> int:
            return node if node < n_real else node + offset

        for u, v, w in g.edges:
            u2, v2 = shift(u), shift(v)
            if u2 > v2:
                u2, v2 = v2, u2
            merged[(u2, v2)] = merged.get((u2, v2), 0.0) + weight * w
        for vid, members in g.virtual_meta.items():
            virtual_meta[vid + offset] = members
        offset += g.n_virtual
    edges = [(u, v, w) for (u, v), w in sorted(merged.items())]
    return FairGraph(n_real=n_real, n_virtual=offset, edges=edges, virtual_meta=virtual_meta)


# ---------------------------------------------------------------------------
# Edge-list CSV round trip
# ---------------------------------------------------------------------------


def export_graph_csv(g: FairGraph, path: str | Path) -> None:
    """Write the edge list as `u,v,weight,is_virtual_u,is_virtual_v`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "weight", "is_virtual_u", "is_virtual_v"])
        for u, v, w in g.edges:
            writer.writerow([u, v, repr(w), int(u >= g.n_real), int(v >= g.n_real)])


def import_graph_csv(
    path: str | Path, n_real: int | None = None, n_virtual: int | None = None
) -> FairGraph:
    """Read an edge-list CSV written by export_graph_csv.

    Node counts are inferred from the virtual flags when not given;
    aggregator membership is not stored in the format and comes back
    empty.
    """
    edges = []
    max_real, max_virtual = -1, -1
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            u, v, w = int(row["u"]), int(row["v"]), float(row["weight"])
            edges.append((u, v, w))
            for node, flag in ((u, row["is_virtual_u"]), (v, row["is_virtual_v"])):
                if int(flag):
                    max_virtual = max(max_virtual, node)
                else:
                    max_real = max(max_real, node)
    if n_real is None:
        n_real = max_real + 1
    if n_virtual is None:
        n_virtual = max(max_virtual + 1 - n_real, 0)
    return FairGraph(n_real=n_real, n_virtual=n_virtual, edges=edges)
