"""Grid search over topologies and diffusion settings, with Pareto tooling.

Each grid point pairs a topology (k-nearest-neighbour, unit ball, subset
aggregators, or a convex mix) with a diffusion scheme and strength, and
draws its optimizer hyper-parameters from the sampling ranges. Every
config is evaluated on every fold plus the hold-out test set; failures
(diverging diffusion, degenerate fits) are recorded, never dropped.
Selection maximizes mean accuracy minus independence minus consistency;
the Pareto front exposes the remaining trade-offs.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, SplitPlan
from .diffusion import Continuous, DiffusionConfig, Discrete
from .errors import ConfigurationError, SelectionError
from .explain import aggregate_importance, shap_diffused, shap_linear
from .metrics import METRIC_FIELDS, FairnessReport, compute_report
from .model import (
    BETA1_RANGE,
    BETA2_RANGE,
    LR_RANGE,
    WD_RANGE,
    ProcessorMode,
    TrainConfig,
    post_diffusion_operator,
    run_pipeline,
)
from .model import _diffuse_columns, _laplacian_for  # shared within the package
from .sheaf import IdentitySheaf, build_sheaf_laplacian, normalize
from .topology import (
    FairGraph,
    build_knn_graph,
    build_unit_ball_graph,
    build_subset_graph,
    partition_by_sensitive,
    quantile_distance,
    union_graphs,
)

DEFAULT_OBJECTIVES = (("accuracy", "max"), ("ind", "min"), ("con", "min"))


@dataclass
class GridSpec:
    """Grid values; defaults mirror the benchmark sweep.

    Unit-ball radii are given as pair counts z, meaning the z/N quantile
    of the observed pairwise distances. Optimizer settings are sampled
    once per config from the stated ranges, seeded by (seed, config id).
    """

    knn_k: tuple[int, ...] = (1, 5, 15)
    unit_quantile_counts: tuple[int, ...] = (50, 100, 500)
    include_subset: bool = True
    mixed_subset_weights: tuple[float, ...] = (0.5,)
    mixed_knn_k: int = 5
    mixed_unit_quantile_count: int = 500
    alphas: tuple[float, ...] = (0.05, 0.1, 0.3)
    n_layers: tuple[int, ...] = (5, 10, 20)
    times: tuple[float, ...] = (0.1, 0.3, 1.0)
    schemes: tuple[str, ...] = ("discrete", "continuous")
    include_plain: bool = True
    mode: str = "post"
    max_epochs: int = 1000
    seed: int = 0
    lr_range: tuple[float, float] = LR_RANGE
    wd_range: tuple[float, float] = WD_RANGE
    b1_range: tuple[float, float] = BETA1_RANGE
    b2_range: tuple[float, float] = BETA2_RANGE

    def __post_init__(self):
        if not self.schemes or not self.alphas:
            raise ConfigurationError("grid needs at least one scheme and one alpha")
        if "discrete" in self.schemes and not self.n_layers:
            raise ConfigurationError("discrete scheme needs at least one layer count")
        if "continuous" in self.schemes and not self.times:
            raise ConfigurationError("continuous scheme needs at least one time")
        if not (
            self.include_plain
            or self.knn_k
            or self.unit_quantile_counts
            or self.include_subset
            or self.mixed_subset_weights
        ):
            raise ConfigurationError("grid selects no configs at all")


@dataclass
class RunConfig:
    """One grid point: a topology, a diffusion setting, sampled optimizer."""

    config_id: int
    name: str
    topology: str  # plain | knn | unit | subset | mixed_knn | mixed_unit
    mode: str
    k: int | None = None
    quantile_count: int | None = None
    w_subset: float | None = None
    scheme: str | None = None
    alpha: float | None = None
    n_layers: int | None = None
    t: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def diffusion(self) -> DiffusionConfig | None:
        if self.topology == "plain":
            return None
        scheme = Discrete(self.n_layers) if self.scheme == "discrete" else Continuous(self.t)
        return DiffusionConfig(alpha=self.alpha, scheme=scheme)

    def params(self) -> dict:
        out = {"topology": self.topology, "mode": self.mode}
        for key in ("k", "quantile_count", "w_subset", "scheme", "alpha", "n_layers", "t"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out["train"] = {
            "learning_rate": self.train.learning_rate,
            "weight_decay": self.train.weight_decay,
            "moment_decay_1": self.train.moment_decay_1,
            "moment_decay_2": self.train.moment_decay_2,
            "max_epochs": self.train.max_epochs,
        }
        return out


@dataclass
class RunResult:
    """Per-config outcome: fold reports, test report, status, timing."""

    config: RunConfig
    status: str  # "ok" | "failed"
    error: str | None
    fold_reports: list[FairnessReport]
    test_report: FairnessReport | None
    wall_time: float
    importance_raw: np.ndarray | None = None
    importance_norm: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)

    def fold_mean(self, metric: str) -> float | None:
        values = [getattr(r, metric) for r in self.fold_reports]
        if not values or any(v is None for v in values):
            return None
        return float(np.mean(values))

    def fold_std(self, metric: str) -> float | None:
        values = [getattr(r, metric) for r in self.fold_reports]
        if not values or any(v is None for v in values):
            return None
        return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass
class ParetoPoint:
    """A non-dominated config with its objective values."""

    config_id: int
    name: str
    objectives: dict[str, float]


def _sample_train(grid: GridSpec, config_id: int) -> TrainConfig:
    rng = np.random.default_rng([grid.seed, config_id])
    lr = 10.0 ** rng.uniform(np.log10(grid.lr_range[0]), np.log10(grid.lr_range[1]))
    wd = 10.0 ** rng.uniform(np.log10(grid.wd_range[0]), np.log10(grid.wd_range[1]))
    b1 = rng.uniform(*grid.b1_range)
    b2 = rng.uniform(*grid.b2_range)
    return TrainConfig(
        learning_rate=float(lr),
        weight_decay=float(wd),
        moment_decay_1=float(b1),
        moment_decay_2=float(b2),
        max_epochs=grid.max_epochs,
        seed=grid.seed,
    )


def enumerate_configs(grid: GridSpec) -> list[RunConfig]:
    """Expand the grid into a deterministic, id-ordered config list."""
    topo_slots: list[dict] = []
    if grid.include_plain:
        topo_slots.append({"topology": "plain"})
    for k in grid.knn_k:
        topo_slots.append({"topology": "knn", "k": k})
    for z in grid.unit_quantile_counts:
        topo_slots.append({"topology": "unit", "quantile_count": z})
    if grid.include_subset:
        topo_slots.append({"topology": "subset"})
    for w in grid.mixed_subset_weights:
        topo_slots.append({"topology": "mixed_knn", "k": grid.mixed_knn_k, "w_subset": w})
        topo_slots.append(
            {
                "topology": "mixed_unit",
                "quantile_count": grid.mixed_unit_quantile_count,
                "w_subset": w,
            }
        )

    configs: list[RunConfig] = []
    for slot in topo_slots:
        if slot["topology"] == "plain":
            cid = len(configs)
            configs.append(
                RunConfig(
                    config_id=cid,
                    name="plain",
                    topology="plain",
                    mode="plain",
                    train=_sample_train(grid, cid),
                )
            )
            continue
        for scheme in grid.schemes:
            lengths = grid.n_layers if scheme == "discrete" else grid.times
            for alpha in grid.alphas:
                for length in lengths:
                    cid = len(configs)
                    bits = [slot["topology"]]
                    if "k" in slot:
                        bits.append(f"k{slot['k']}")
                    if "quantile_count" in slot:
                        bits.append(f"q{slot['quantile_count']}")
                    if "w_subset" in slot:
                        bits.append(f"w{slot['w_subset']}")
                    bits.append("disc" if scheme == "discrete" else "cont")
                    bits.append(f"a{alpha}")
                    bits.append(f"n{length}" if scheme == "discrete" else f"t{length}")
                    configs.append(
                        RunConfig(
                            config_id=cid,
                            name="_".join(bits),
                            topology=slot["topology"],
                            mode=grid.mode,
                            k=slot.get("k"),
                            quantile_count=slot.get("quantile_count"),
                            w_subset=slot.get("w_subset"),
                            scheme=scheme,
                            alpha=alpha,
                            n_layers=length if scheme == "discrete" else None,
                            t=length if scheme == "continuous" else None,
                            train=_sample_train(grid, cid),
                        )
                    )
    return configs


def _build_graph(ds: Dataset, config: RunConfig, cache: dict) -> FairGraph:
    key = (config.topology, config.k, config.quantile_count, config.w_subset)
    if key in cache:
        return cache[key]
    if config.topology == "knn":
        graph = build_knn_graph(ds, config.k)
    elif config.topology == "unit":
        delta = quantile_distance(ds, config.quantile_count / ds.n)
        graph = build_unit_ball_graph(ds, delta)
    elif config.topology == "subset":
        graph = build_subset_graph(ds, [partition_by_sensitive(ds)])
    elif config.topology == "mixed_knn":
        subset = _build_graph(ds, replace(config, topology="subset", k=None, w_subset=None), cache)
        local = _build_graph(ds, replace(config, topology="knn", w_subset=None), cache)
        graph = union_graphs([(subset, config.w_subset), (local, 1.0 - config.w_subset)])
    elif config.topology == "mixed_unit":
        subset = _build_graph(
            ds, replace(config, topology="subset", quantile_count=None, w_subset=None), cache
        )
        local = _build_graph(ds, replace(config, topology="unit", w_subset=None), cache)
        graph = union_graphs([(subset, config.w_subset), (local, 1.0 - config.w_subset)])
    else:
        raise ConfigurationError(f"unknown topology {config.topology!r}")
    cache[key] = graph
    return graph


def _config_importance(
    ds: Dataset, proc: ProcessorMode | None, model, dense_cap: int = 5000
) -> tuple[np.ndarray, np.ndarray] | None:
    """Mean-absolute SHAP per feature over all scored rows, raw and normalized."""
    X = ds.features
    if proc is None:
        attr = shap_linear(model, X)
    elif proc.mode == "post":
        if ds.n > dense_cap:
            return None
        D = post_diffusion_operator(proc, cap=dense_cap)
        attr = shap_diffused(model, D, X)
    elif proc.mode == "pre":
        L = _laplacian_for(proc, ds.d)
        X_dif = _diffuse_columns(L, proc.graph, X, proc.diffusion)
        attr = shap_linear(model, X_dif)
    else:
        # in-process features depend on the per-round coefficient sheaves,
        # which the pipeline does not expose; no closed form to report
        return None
    return aggregate_importance(attr, False), aggregate_importance(attr, True)


def _evaluate_config(
    ds: Dataset, split: SplitPlan, config: RunConfig, graph: FairGraph | None, laplacian
) -> RunResult:
    start = time.perf_counter()
    X, y, a = ds.features, ds.labels, ds.sensitive
    try:
        if config.topology == "plain":
            proc = None
        else:
            proc = ProcessorMode(
                mode=config.mode,
                graph=graph,
                diffusion=config.diffusion(),
                laplacian=laplacian,
            )
        fold_reports = []
        for fold in range(split.n_folds):
            parts, _ = run_pipeline(ds, split, proc, config.train, fold=fold)
            _, val_idx = split.folds[fold]
            fold_reports.append(
                compute_report(y[val_idx], parts["validation"], a[val_idx], X[val_idx])
            )
        parts, model = run_pipeline(ds, split, proc, config.train, fold=None)
        test_idx = split.test_indices
        test_report = compute_report(y[test_idx], parts["test"], a[test_idx], X[test_idx])
        importance = _config_importance(ds, proc, model)
    except Exception as exc:  # a failed config must not abort the sweep
        return RunResult(
            config=config,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
            fold_reports=[],
            test_report=None,
            wall_time=time.perf_counter() - start,
            feature_names=list(ds.feature_names),
        )
    raw, norm = importance if importance is not None else (None, None)
    return RunResult(
        config=config,
        status="ok",
        error=None,
        fold_reports=fold_reports,
        test_report=test_report,
        wall_time=time.perf_counter() - start,
        importance_raw=raw,
        importance_norm=norm,
        feature_names=list(ds.feature_names),
    )


def run_grid(
    ds: Dataset, split: SplitPlan, grid: GridSpec, threads: int = 1
) -> list[RunResult]:
    """Evaluate every config on every fold plus the hold-out test.

    Graphs and normalized Laplacians are shared between configs that
    differ only in diffusion settings. Configs are independent work
    units; results come back ordered by config id regardless of the
    evaluation order.
    """
    configs = enumerate_configs(grid)
    graph_cache: dict = {}
    lap_cache: dict = {}
    jobs = []
    for config in configs:
        if config.topology == "plain":
            jobs.append((config, None, None))
            continue
        try:
            graph = _build_graph(ds, config, graph_cache)
        except Exception as exc:
            jobs.append((config, exc, None))
            continue
        laplacian = None
        if config.mode in ("pre", "post"):
            stalk = ds.d if config.mode == "pre" else 1
            key = (id(graph), stalk)
            if key not in lap_cache:
                lap_cache[key] = normalize(build_sheaf_laplacian(graph, IdentitySheaf(stalk)))
            laplacian = lap_cache[key]
        jobs.append((config, graph, laplacian))

    def run_job(job):
        config, graph, laplacian = job
        if isinstance(graph, Exception):
            return RunResult(
                config=config,
                status="failed",
                error=f"{type(graph).__name__}: {graph}",
                fold_reports=[],
                test_report=None,
                wall_time=0.0,
                feature_names=list(ds.feature_names),
            )
        return _evaluate_config(ds, split, config, graph, laplacian)

    if threads <= 1:
        results = [run_job(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_job, jobs))
    return sorted(results, key=lambda r: r.config.config_id)


# ---------------------------------------------------------------------------
# Pareto front and selection
# ---------------------------------------------------------------------------


def nondominated_mask(points: np.ndarray) -> np.ndarray:
    """Boolean mask of non-dominated rows; all columns are maximized.

    A row is dominated when some other row is >= in every column and
    strictly greater in at least one. Chunked pairwise comparison.
    """
    m = points.shape[0]
    dominated = np.zeros(m, dtype=bool)
    chunk = 256
    for start in range(0, m, chunk):
        block = points[start : start + chunk]
        ge = (points[None, :, :] >= block[:, None, :]).all(axis=2)
        gt = (points[None, :, :] > block[:, None, :]).any(axis=2)
        dominated[start : start + chunk] = (ge & gt).any(axis=1)
    return ~dominated


def pareto_front(
    results: list[RunResult],
    objectives: tuple[tuple[str, str], ...] = DEFAULT_OBJECTIVES,
) -> list[ParetoPoint]:
    """Non-dominated configs under the named fold-mean objectives.

    Directions are "max" or "min" per metric; failed configs and configs
    with a not-applicable objective are skipped.
    """
    if not 2 <= len(objectives) <= 3:
        raise ConfigurationError("pareto_front expects 2 or 3 objectives")
    rows, meta = [], []
    for result in results:
        if result.status != "ok":
            continue
        values = {name: result.fold_mean(name) for name, _ in objectives}
        if any(v is None for v in values.values()):
            continue
        signed = [
            values[name] if direction == "max" else -values[name]
            for name, direction in objectives
        ]
        rows.append(signed)
        meta.append((result.config.config_id, result.config.name, values))
    if not rows:
        return []
    mask = nondominated_mask(np.asarray(rows, dtype=float))
    return [
        ParetoPoint(config_id=cid, name=name, objectives=vals)
        for keep, (cid, name, vals) in zip(mask, meta)
        if keep
    ]


def select_best(results: list[RunResult]) -> int:
    """Config id maximizing fold-mean accuracy - independence - consistency.

    Ties break toward the lower config id; raises when nothing succeeded.
    """
    best_id, best_score = None, -np.inf
    for result in sorted(results, key=lambda r: r.config.config_id):
        if result.status != "ok":
            continue
        acc = result.fold_mean("accuracy")
        ind = result.fold_mean("ind")
        con = result.fold_mean("con")
        if acc is None or ind is None or con is None:
            continue
        score = acc - ind - con
        if score > best_score:
            best_id, best_score = result.config.config_id, score
    if best_id is None:
        raise SelectionError("no successful config with defined ACC, IND and CON")
    return best_id


# ---------------------------------------------------------------------------
# Direction-level benchmark check
# ---------------------------------------------------------------------------


def run_german_direction_check(
    csv_path, schema, seed: int = 0, grid: GridSpec | None = None
) -> dict:
    """Compare the selected kNN post-processor against plain logistic.

    Ingests a locally supplied credit-scoring CSV, grid-searches the kNN
    topologies, selects the best kNN config by mean accuracy minus
    independence minus consistency, then scores the hold-out rows with
    both models (the post-processor's topology spans exactly the scored
    rows). Returns the plain and processed IND/CON values plus the
    chosen config; the expected direction is lower IND and CON for the
    processed model.
    """
    from .data import load_csv, make_split
    from .diffusion import diffuse
    from .model import _augment_signal, fit_logistic, sigmoid
    from .sheaf import IdentitySheaf as _Id

    ds = load_csv(csv_path, schema)
    split = make_split(ds, 0.2, 4, seed)
    if grid is None:
        grid = GridSpec(
            knn_k=(1, 5, 15),
            unit_quantile_counts=(),
            include_subset=False,
            mixed_subset_weights=(),
            schemes=("discrete",),
            include_plain=False,
            mode="post",
            seed=seed,
        )
    results = run_grid(ds, split, grid)
    knn_results = [r for r in results if r.config.topology == "knn"]
    selection = select_best(knn_results)
    chosen = next(r for r in results if r.config.config_id == selection)

    train_idx = split.train_indices()
    test_idx = split.test_indices
    model = fit_logistic(ds.features[train_idx], ds.labels[train_idx], chosen.config.train)
    z_test = model.logits(ds.features[test_idx])
    ds_test = ds.subset(test_idx)
    plain_report = compute_report(
        ds_test.labels, sigmoid(z_test), ds_test.sensitive, ds_test.features
    )

    graph = build_knn_graph(ds_test, chosen.config.k)
    L = normalize(build_sheaf_laplacian(graph, _Id(1)))
    x0 = _augment_signal(z_test[:, None], graph).reshape(-1)
    z_dif = diffuse(L, x0, chosen.config.diffusion())[: ds_test.n]
    knn_report = compute_report(
        ds_test.labels, sigmoid(z_dif), ds_test.sensitive, ds_test.features
    )
    return {
        "selected_config": chosen.config.config_id,
        "selected_name": chosen.config.name,
        "plain": {"ind": plain_report.ind, "con": plain_report.con,
                  "accuracy": plain_report.accuracy},
        "knn": {"ind": knn_report.ind, "con": knn_report.con,
                "accuracy": knn_report.accuracy},
    }


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def emit_report(
    results: list[RunResult],
    front: list[ParetoPoint],
    selection: int,
    out_dir: str | Path,
) -> list[Path]:
    """Write the delimited outputs for a finished sweep.

    results.csv has one row per config and fold (plus a test row);
    summary.csv aggregates fold means and stds per config; the Pareto
    files carry the 3-objective front passed in and the two 2-D fronts;
    selection.json names the chosen config; shap_importance.csv lists
    per-feature influence for every config that produced one. Re-running
    with the same inputs reproduces every file byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    by_id = {r.config.config_id: r for r in results}

    path = out / "results.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "model", "fold", "status", "error", *METRIC_FIELDS])
        for result in results:
            cid, name = result.config.config_id, result.config.name
            if result.status != "ok":
                writer.writerow([cid, name, "", "failed", result.error] + [""] * len(METRIC_FIELDS))
                continue
            for fold, report in enumerate(result.fold_reports):
                row = [cid, name, fold, "ok", ""]
                row += [_fmt(getattr(report, metric)) for metric in METRIC_FIELDS]
                writer.writerow(row)
            row = [cid, name, "test", "ok", ""]
            row += [_fmt(getattr(result.test_report, metric)) for metric in METRIC_FIELDS]
            writer.writerow(row)
    written.append(path)

    path = out / "summary.csv"
    summary_metrics = ("accuracy", "ind", "suf", "sep", "con", "lip", "ent")
    header = ["model"]
    for metric in summary_metrics:
        short = "acc" if metric == "accuracy" else metric
        header += [f"{short}_mean", f"{short}_std"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for result in results:
            if result.status != "ok":
                continue
            row = [result.config.name]
            for metric in summary_metrics:
                row += [_fmt(result.fold_mean(metric)), _fmt(result.fold_std(metric))]
            writer.writerow(row)
    written.append(path)

    for metric in ("ind", "con"):
        path = out / f"pareto2d_acc_{metric}.csv"
        front2d = pareto_front(results, (("accuracy", "max"), (metric, "min")))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["config", "model", "accuracy", metric])
            for point in sorted(front2d, key=lambda p: p.config_id):
                writer.writerow(
                    [point.config_id, point.name, _fmt(point.objectives["accuracy"]), _fmt(point.objectives[metric])]
                )
        written.append(path)

    path = out / "pareto3d.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        names = sorted({name for p in front for name in p.objectives}) if front else ["accuracy", "con", "ind"]
        writer.writerow(["config", "model", *names])
        for point in sorted(front, key=lambda p: p.config_id):
            writer.writerow([point.config_id, point.name] + [_fmt(point.objectives.get(n)) for n in names])
    written.append(path)

    path = out / "selection.json"
    chosen = by_id[selection]
    payload = {
        "config": selection,
        "model": chosen.config.name,
        "objective": (
            chosen.fold_mean("accuracy") - chosen.fold_mean("ind") - chosen.fold_mean("con")
        ),
        "params": chosen.config.params(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)

    path = out / "shap_importance.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "model", "feature", "importance", "importance_normalized"])
        for result in results:
            if result.importance_raw is None:
                continue
            for name, raw, norm in zip(
                result.feature_names, result.importance_raw, result.importance_norm
            ):
                writer.writerow(
                    [result.config.config_id, result.config.name, name, _fmt(raw), _fmt(norm)]
                )
    written.append(path)

    return written
