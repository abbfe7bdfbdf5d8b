"""Coboundary and Laplacian assembly for sheaves on fairness graphs.

Two sheaf variants are supported. The identity sheaf gives every node
and edge the same stalk dimension with restriction maps proportional to
the identity; its Laplacian is the weighted graph Laplacian blown up by
a Kronecker identity. The vector sheaf keeps d-dimensional node stalks
but 1-dimensional edge stalks, restricting through a coefficient vector
so only the modelled score is exchanged.

Edge weights enter restriction maps as sqrt(weight) on both endpoints,
so the assembled operator reproduces the weighted graph Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ShapeError
from .topology import FairGraph

# Eigenvalues below KERNEL_RTOL * lambda_max count as kernel directions.
KERNEL_RTOL = 1e-8


@dataclass
class IdentitySheaf:
    """All restriction maps proportional to the identity on R^stalk_dim."""

    stalk_dim: int = 1

    def __post_init__(self):
        if self.stalk_dim < 1:
            raise ConfigurationError(f"stalk_dim must be >= 1, got {self.stalk_dim}")

    @property
    def edge_dim(self) -> int:
        return self.stalk_dim


@dataclass
class VectorSheaf:
    """Node stalks R^d, edge stalks R, restriction by a coefficient vector."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if self.beta.size == 0 or not np.any(self.beta):
            raise ConfigurationError("vector sheaf requires a non-zero coefficient vector")

    @property
    def stalk_dim(self) -> int:
        return self.beta.size

    @property
    def edge_dim(self) -> int:
        return 1


SheafSpec = IdentitySheaf | VectorSheaf


@dataclass
class Coboundary:
    """Per-edge difference operator delta: node signals -> edge signals.

    Row blocks follow the edge list order; for an edge (u, v) with u < v
    the u block carries the negative restriction and the v block the
    positive one. The sign choice cancels in delta^T delta.
    """

    matrix: sp.csr_matrix
    edge_dim: int
    stalk_dim: int
    orientation: str = "lower index negative"


@dataclass
class SheafLaplacian:
    """Symmetric PSD block operator over all node stalks.

    degree_blocks holds the (n_nodes, s, s) diagonal blocks of the raw
    operator; they drive degree normalization and are kept on the
    normalized object for reference.
    """

    matrix: sp.csr_matrix
    normalized: bool
    degree_blocks: np.ndarray
    stalk_dim: int
    n_nodes: int

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _restriction(spec: SheafSpec) -> np.ndarray:
    """Unweighted restriction map as an (edge_dim, stalk_dim) matrix."""
    if isinstance(spec, IdentitySheaf):
        return np.eye(spec.stalk_dim)
    return spec.beta[None, :]


def build_coboundary(g: FairGraph, spec: SheafSpec) -> Coboundary:
    """Assemble delta with one edge-stalk block row per edge."""
    s = spec.stalk_dim
    ed = spec.edge_dim
    base = _restriction(spec)
    rows, cols, vals = [], [], []
    for e, (u, v, w) in enumerate(g.edges):
        block = np.sqrt(w) * base
        for r in range(ed):
            for c in range(s):
                if block[r, c] == 0.0:
                    continue
                rows.append(e * ed + r)
                cols.append(u * s + c)
                vals.append(-block[r, c])
                rows.append(e * ed + r)
                cols.append(v * s + c)
                vals.append(block[r, c])
    shape = (len(g.edges) * ed, g.n_total * s)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    return Coboundary(matrix=matrix, edge_dim=ed, stalk_dim=s)


def build_sheaf_laplacian(g: FairGraph, spec: SheafSpec) -> SheafLaplacian:
    """Assemble the Laplacian block by block.

    Off-diagonal block for an edge (u, v): minus the product of the two
    endpoint restrictions; diagonal blocks accumulate over incident
    edges. Equals delta^T delta entrywise (checked in the test suite,
    which builds both routes independently).
    """
    s = spec.stalk_dim
    base = _restriction(spec)
    gram = base.T @ base  # (s, s) restriction product at unit weight
    n = g.n_total
    degree_blocks = np.zeros((n, s, s))
    rows, cols, vals = [], [], []
    nz = np.argwhere(gram != 0.0)
    for u, v, w in g.edges:
        degree_blocks[u] += w * gram
        degree_blocks[v] += w * gram
        for r, c in nz:
            value = -w * gram[r, c]
            rows.append(u * s + r)
            cols.append(v * s + c)
            vals.append(value)
            rows.append(v * s + r)
            cols.append(u * s + c)
            vals.append(value)
    for node in range(n):
        block = degree_blocks[node]
        for r in range(s):
            for c in range(s):
                if block[r, c] != 0.0:
                    rows.append(node * s + r)
                    cols.append(node * s + c)
                    vals.append(block[r, c])
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n * s, n * s))
    return SheafLaplacian(
        matrix=matrix,
        normalized=False,
        degree_blocks=degree_blocks,
        stalk_dim=s,
        n_nodes=n,
    )


def _pinv_sqrt(block: np.ndarray) -> np.ndarray:
    """Pseudoinverse square root of a small symmetric PSD block."""
    eigvals, eigvecs = np.linalg.eigh(block)
    cutoff = max(eigvals.max(initial=0.0), 0.0) * 1e-12
    inv = np.zeros_like(eigvals)
    keep = eigvals > cutoff
    inv[keep] = 1.0 / np.sqrt(eigvals[keep])
    return (eigvecs * inv) @ eigvecs.T


def normalize(L: SheafLaplacian) -> SheafLaplacian:
    """Degree-normalize: D^{-1/2} L D^{-1/2} with block-diagonal D = diag(L_vv).

    Rank-deficient diagonal blocks (vector sheaves, isolated nodes) use
    the pseudoinverse square root; the result's spectrum lies in [0, 2].
    """
    if L.normalized:
        raise ConfigurationError("Laplacian is already normalized")
    s = L.stalk_dim
    inv_blocks = [_pinv_sqrt(L.degree_blocks[v]) for v in range(L.n_nodes)]
    D_inv_sqrt = sp.block_diag([sp.csr_matrix(b) for b in inv_blocks], format="csr")
    mat = D_inv_sqrt @ L.matrix @ D_inv_sqrt
    mat = (mat + mat.T) * 0.5
    return SheafLaplacian(
        matrix=mat.tocsr(),
        normalized=True,
        degree_blocks=L.degree_blocks,
        stalk_dim=s,
        n_nodes=L.n_nodes,
    )


def combine_laplacians(
    parts: list[tuple[SheafLaplacian, float]]
) -> SheafLaplacian:
    """Weighted sum of Laplacians, padding smaller ones with zero blocks.

    Components built on fewer nodes (a local graph without the virtual
    aggregators, say) are extended by zero rows/columns at the tail. The
    kernel of the sum is the intersection of the component kernels.
    """
    if not parts:
        raise ConfigurationError("need at least one Laplacian")
    s = parts[0][0].stalk_dim
    for L, w in parts:
        if L.stalk_dim != s:
            raise ShapeError(f"stalk dims differ: {L.stalk_dim} vs {s}")
        if w <= 0:
            raise ConfigurationError(f"combination weight must be positive, got {w}")
    n_nodes = max(L.n_nodes for L, _ in parts)
    dim = n_nodes * s
    total = sp.csr_matrix((dim, dim))
    degree_blocks = np.zeros((n_nodes, s, s))
    for L, w in parts:
        mat = L.matrix.copy()
        mat.resize((dim, dim))
        total = total + w * mat
        degree_blocks[: L.n_nodes] += w * L.degree_blocks
    return SheafLaplacian(
        matrix=total.tocsr(),
        normalized=all(L.normalized for L, _ in parts),
        degree_blocks=degree_blocks,
        stalk_dim=s,
        n_nodes=n_nodes,
    )


def dirichlet_energy(L: SheafLaplacian, x: np.ndarray) -> float:
    """Quadratic form x^T L x: total squared edge disagreement of x."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != L.dimension:
        raise ShapeError(f"signal has length {x.size}, operator is {L.dimension}")
    return float(x @ (L.matrix @ x))


def export_laplacian_coo(L: SheafLaplacian, path) -> None:
    """Write non-zeros as `row col value` text for external verification."""
    coo = L.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
