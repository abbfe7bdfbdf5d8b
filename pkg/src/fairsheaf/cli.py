"""Command-line interface.

Subcommands: simulate, ingest, train, gridsearch, pareto, shap, metrics.
Global flags: --seed, --threads, --out-dir, --config (TOML or JSON file
whose top-level keys, and per-subcommand sections, override defaults).

The `ingest` and `simulate` commands produce a canonical dataset CSV
(encoded feature columns plus `label` and `sensitive`); every other
command consumes that canonical form.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .diffusion import Continuous, DiffusionConfig, Discrete
from .errors import DataError, DivergenceError, FairSheafError
from .experiments import (
    DEFAULT_OBJECTIVES,
    GridSpec,
    emit_report,
    nondominated_mask,
    pareto_front,
    run_grid,
    select_best,
)
from .explain import export_attribution_csv, export_importance_json, shap_diffused, shap_linear
from .metrics import compute_report
from .model import (
    ProcessorMode,
    TrainConfig,
    load_model,
    post_diffusion_operator,
    predict_scores,
    run_pipeline,
    save_model,
)
from .topology import (
    build_knn_graph,
    build_subset_graph,
    build_unit_ball_graph,
    partition_by_sensitive,
    quantile_distance,
    union_graphs,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(p.read_text(encoding="utf-8"))


def _build_parser() -> _Parser:
    parser = _Parser(prog="fairsheaf", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--config", default=None, help="TOML/JSON file with defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the synthetic benchmark dataset")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--p", type=float, default=0.5)

    p = sub.add_parser("ingest", help="encode a raw CSV into the canonical dataset form")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True, help="JSON/TOML column-role sidecar")

    p = sub.add_parser("train", help="fit one model (optionally diffusion-processed)")
    _add_data_arg(p)
    _add_processor_args(p)
    _add_split_args(p)
    _add_train_args(p)

    p = sub.add_parser("gridsearch", help="run the full sweep and emit reports")
    _add_data_arg(p)
    _add_split_args(p)
    p.add_argument("--mode", default="post", choices=["pre", "post", "inprocess"])
    p.add_argument("--max-epochs", type=int, default=1000)

    p = sub.add_parser("pareto", help="extract Pareto fronts from a summary.csv")
    p.add_argument("--results", required=True, help="summary.csv from a sweep")
    p.add_argument(
        "--objectives",
        default="acc:max,ind:min,con:min",
        help="comma list of column:direction (columns as in summary.csv, without _mean)",
    )

    p = sub.add_parser("shap", help="closed-form attributions for a saved model")
    _add_data_arg(p)
    p.add_argument("--model", required=True, help="model.json from train")
    _add_processor_args(p, allow_plain=True)

    p = sub.add_parser("metrics", help="fairness report for a saved model or score file")
    _add_data_arg(p)
    p.add_argument("--model", default=None, help="model.json from train")
    p.add_argument("--scores", default=None, help="CSV with a 'score' column instead of a model")

    return parser


def _add_data_arg(p):
    p.add_argument("--data", required=True, help="canonical dataset CSV (see simulate/ingest)")


def _add_split_args(p):
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--folds", type=int, default=4)


def _add_train_args(p):
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=1000)


def _add_processor_args(p, allow_plain: bool = True):
    choices = ["knn", "unit", "subset", "mixed-knn", "mixed-unit"]
    if allow_plain:
        choices = ["plain"] + choices
    p.add_argument("--topology", default="plain" if allow_plain else "knn", choices=choices)
    p.add_argument("--mode", default="post", choices=["pre", "post", "inprocess"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument(
        "--quantile-count",
        type=float,
        default=500,
        help="unit-ball radius as the (count/n) distance quantile",
    )
    p.add_argument("--w-subset", type=float, default=0.5)
    p.add_argument("--scheme", default="discrete", choices=["discrete", "continuous"])
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--time", type=float, default=0.6)
    p.add_argument("--rounds", type=int, default=1, help="in-process refit rounds")


def _load_canonical(path: str) -> data_mod.Dataset:
    return data_mod.load_csv(path, data_mod.roundtrip_schema())


def _build_processor(args, ds) -> ProcessorMode | None:
    if args.topology == "plain":
        return None
    if args.topology == "knn":
        graph = build_knn_graph(ds, args.k)
    elif args.topology == "unit":
        delta = quantile_distance(ds, args.quantile_count / ds.n)
        graph = build_unit_ball_graph(ds, delta)
    elif args.topology == "subset":
        graph = build_subset_graph(ds, [partition_by_sensitive(ds)])
    else:
        subset = build_subset_graph(ds, [partition_by_sensitive(ds)])
        if args.topology == "mixed-knn":
            local = build_knn_graph(ds, args.k)
        else:
            delta = quantile_distance(ds, args.quantile_count / ds.n)
            local = build_unit_ball_graph(ds, delta)
        graph = union_graphs([(subset, args.w_subset), (local, 1.0 - args.w_subset)])
    scheme = Discrete(args.layers) if args.scheme == "discrete" else Continuous(args.time)
    return ProcessorMode(
        mode=args.mode,
        graph=graph,
        diffusion=DiffusionConfig(alpha=args.alpha, scheme=scheme),
        inprocess_rounds=args.rounds,
    )


def _report_to_disk(report, path: Path):
    path.write_text(report.to_json() + "\n", encoding="utf-8")


def _cmd_simulate(args, out: Path) -> int:
    cfg = data_mod.SimulationConfig(n=args.n, p=args.p, seed=args.seed)
    ds = data_mod.generate_simulation(cfg)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_csv(ds, out / "dataset.csv")
    (out / "schema.json").write_text(
        json.dumps(data_mod.roundtrip_schema(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {out / 'dataset.csv'}: n={ds.n}, d={ds.d}, "
          f"label rate={ds.labels.mean():.3f}, privileged rate={ds.sensitive.mean():.3f}")
    return 0


def _cmd_ingest(args, out: Path) -> int:
    ds = data_mod.load_csv(args.csv, args.schema)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_csv(ds, out / "dataset.csv")
    (out / "schema.json").write_text(
        json.dumps(data_mod.roundtrip_schema(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {out / 'dataset.csv'}: n={ds.n}, d={ds.d}, "
          f"label rate={ds.labels.mean():.3f}, privileged rate={ds.sensitive.mean():.3f}")
    return 0


def _cmd_train(args, out: Path) -> int:
    ds = _load_canonical(args.data)
    split = data_mod.make_split(ds, args.test_fraction, args.folds, args.seed)
    proc = _build_processor(args, ds)
    train_cfg = TrainConfig(
        learning_rate=args.lr, weight_decay=args.weight_decay,
        max_epochs=args.epochs, seed=args.seed,
    )
    fold_reports = []
    for fold in range(split.n_folds):
        parts, _ = run_pipeline(ds, split, proc, train_cfg, fold=fold)
        _, val_idx = split.folds[fold]
        fold_reports.append(
            compute_report(ds.labels[val_idx], parts["validation"], ds.sensitive[val_idx],
                           ds.features[val_idx])
        )
    parts, model = run_pipeline(ds, split, proc, train_cfg, fold=None)
    test_idx = split.test_indices
    test_report = compute_report(
        ds.labels[test_idx], parts["test"], ds.sensitive[test_idx], ds.features[test_idx]
    )
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json", feature_names=ds.feature_names)
    payload = {
        "folds": [r.to_flat_dict() for r in fold_reports],
        "test": test_report.to_flat_dict(),
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "part", "score"])
        for part in ("train", "test"):
            for row, score in zip(
                split.train_indices() if part == "train" else test_idx, parts[part]
            ):
                writer.writerow([int(row), part, repr(float(score))])
    print(f"test accuracy={test_report.accuracy:.4f} ind={test_report.ind:.4f} "
          f"con={test_report.con:.4f}")
    return 0


def _grid_from_config(args, file_cfg: dict) -> GridSpec:
    section = dict(file_cfg.get("gridsearch", {}))
    grid_kwargs = {}
    for field_name in (
        "knn_k", "unit_quantile_counts", "include_subset", "mixed_subset_weights",
        "mixed_knn_k", "mixed_unit_quantile_count", "alphas", "n_layers", "times",
        "schemes", "include_plain",
    ):
        if field_name in section:
            value = section[field_name]
            grid_kwargs[field_name] = tuple(value) if isinstance(value, list) else value
    return GridSpec(mode=args.mode, max_epochs=args.max_epochs, seed=args.seed, **grid_kwargs)


def _cmd_gridsearch(args, out: Path, file_cfg: dict) -> int:
    ds = _load_canonical(args.data)
    split = data_mod.make_split(ds, args.test_fraction, args.folds, args.seed)
    grid = _grid_from_config(args, file_cfg)
    results = run_grid(ds, split, grid, threads=args.threads)
    front = pareto_front(results, DEFAULT_OBJECTIVES)
    selection = select_best(results)
    files = emit_report(results, front, selection, out)
    ok = sum(1 for r in results if r.status == "ok")
    print(f"{len(results)} configs ({ok} ok), selected #{selection} "
          f"({next(r.config.name for r in results if r.config.config_id == selection)})")
    for f in files:
        print(f"wrote {f}")
    return 0


def _cmd_pareto(args, out: Path) -> int:
    objectives = []
    for item in args.objectives.split(","):
        name, _, direction = item.partition(":")
        if direction not in ("max", "min"):
            raise DataError(f"objective '{item}' must be column:max or column:min")
        objectives.append((name.strip(), direction))
    with open(args.results, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{args.results}: no data rows")
    points, meta = [], []
    for row in rows:
        try:
            values = {name: float(row[f"{name}_mean"]) for name, _ in objectives}
        except KeyError as exc:
            raise DataError(f"{args.results}: missing column {exc}") from exc
        except ValueError:
            continue  # not-applicable entries drop out
        signed = [values[name] if d == "max" else -values[name] for name, d in objectives]
        points.append(signed)
        meta.append((row["model"], values))
    mask = nondominated_mask(np.asarray(points, dtype=float))
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"pareto{len(objectives)}d_custom.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + [name for name, _ in objectives])
        for keep, (model, values) in zip(mask, meta):
            if keep:
                writer.writerow([model] + [repr(v) for v in values.values()])
    print(f"wrote {path} ({int(mask.sum())} non-dominated of {len(points)})")
    return 0


def _cmd_shap(args, out: Path) -> int:
    ds = _load_canonical(args.data)
    model, names = load_model(args.model)
    names = names or ds.feature_names
    proc = _build_processor(args, ds)
    if proc is None:
        attr = shap_linear(model, ds.features)
    else:
        if proc.mode != "post":
            raise DataError("shap supports plain models and post-processing diffusion")
        D = post_diffusion_operator(proc)
        attr = shap_diffused(model, D, ds.features)
    out.mkdir(parents=True, exist_ok=True)
    export_attribution_csv(attr, names, out / "shap.csv")
    export_importance_json(attr, names, out / "importance.json")
    print(f"wrote {out / 'shap.csv'} and {out / 'importance.json'}")
    return 0


def _cmd_metrics(args, out: Path) -> int:
    ds = _load_canonical(args.data)
    if (args.model is None) == (args.scores is None):
        raise DataError("provide exactly one of --model or --scores")
    if args.model is not None:
        model, _ = load_model(args.model)
        scores = predict_scores(model, ds.features)
    else:
        with open(args.scores, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != ds.n:
            raise DataError(f"{args.scores}: {len(rows)} scores for {ds.n} rows")
        scores = np.array([float(r["score"]) for r in rows])
    report = compute_report(ds.labels, scores, ds.sensitive, ds.features)
    out.mkdir(parents=True, exist_ok=True)
    _report_to_disk(report, out / "report.json")
    print(report.to_json())
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    file_cfg: dict = {}
    try:
        args = parser.parse_args(argv)
        if args.config:
            file_cfg = _load_config_file(args.config)
            defaults = {k: v for k, v in file_cfg.items() if not isinstance(v, dict)}
            if defaults:
                parser.set_defaults(**defaults)
                args = parser.parse_args(argv)
        out = Path(args.out_dir)
        if args.command == "simulate":
            return _cmd_simulate(args, out)
        if args.command == "ingest":
            return _cmd_ingest(args, out)
        if args.command == "train":
            return _cmd_train(args, out)
        if args.command == "gridsearch":
            return _cmd_gridsearch(args, out, file_cfg)
        if args.command == "pareto":
            return _cmd_pareto(args, out)
        if args.command == "shap":
            return _cmd_shap(args, out)
        if args.command == "metrics":
            return _cmd_metrics(args, out)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as exc:
        return int(exc.code or 0)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FairSheafError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
