"""Datasets: in-memory model, simulation generator, CSV ingestion and splits.

A dataset is a plain container of a feature matrix, binary labels and a
binary sensitive attribute (1 = privileged group). Ingestion one-hot
encodes categoricals and standardizes numeric columns; the generator
reproduces a three-feature synthetic population with a noisy proxy of
the sensitive attribute.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigurationError, IngestionError, SplitError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class Dataset:
    """Feature matrix plus binary labels and binary sensitive attribute.

    features: (n, d) float matrix, rows finite.
    labels / sensitive: length-n vectors with values in {0, 1};
        sensitive == 1 marks the privileged group.
    feature_names: d column names.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.sensitive = np.asarray(self.sensitive, dtype=int)
        self.feature_names = list(self.feature_names)
        if self.features.ndim != 2:
            raise ConfigurationError("features must be a 2-D matrix")
        n, d = self.features.shape
        if n < 2:
            raise ConfigurationError(f"need at least 2 rows, got {n}")
        if not np.all(np.isfinite(self.features)):
            bad = int(np.argwhere(~np.isfinite(self.features).all(axis=1))[0, 0])
            raise ConfigurationError(f"non-finite feature value in row {bad}")
        if self.labels.shape != (n,) or self.sensitive.shape != (n,):
            raise ConfigurationError("labels/sensitive must have one entry per row")
        for name, vec in (("labels", self.labels), ("sensitive", self.sensitive)):
            if not np.isin(vec, (0, 1)).all():
                raise ConfigurationError(f"{name} must contain only 0/1 values")
        if d != len(self.feature_names):
            raise ConfigurationError(
                f"{d} feature columns but {len(self.feature_names)} names"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row-restricted copy (keeps column names)."""
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            self.features[idx], self.labels[idx], self.sensitive[idx],
            list(self.feature_names),
        )


@dataclass
class SimulationConfig:
    """Size, privileged-group probability and seed for the generator."""

    n: int
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"simulation needs n >= 2, got {self.n}")
        if not 0.0 < self.p < 1.0:
            raise ConfigurationError(f"p must lie in (0, 1), got {self.p}")


@dataclass
class SplitPlan:
    """Hold-out test indices plus train/validation folds over the rest."""

    test_indices: np.ndarray
    folds: list[tuple[np.ndarray, np.ndarray]]
    seed: int = 0

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def train_indices(self) -> np.ndarray:
        """All non-test indices (the union of any fold's two parts)."""
        train, val = self.folds[0]
        return np.sort(np.concatenate([train, val]))


def _simulation_draws(cfg: SimulationConfig):
    """All intermediate draws of the generator, for diagnostics and tests."""
    rng = np.random.default_rng(cfg.seed)
    a = (rng.random(cfg.n) < cfg.p).astype(float)
    v = rng.normal(a, 1.0)
    u = rng.normal(v, 1.0)
    w = rng.normal(v, 1.0)
    t = rng.normal(-0.5, 1.0, cfg.n)
    return a, v, u, w, t


def generate_simulation(cfg: SimulationConfig) -> Dataset:
    """Draw the synthetic population with a mismeasured sensitive attribute.

    a ~ Bernoulli(p) is the sensitive attribute, v ~ N(a, 1) a noisy
    measurement of it, u and w independent noisy copies of v, and
    t ~ N(-0.5, 1) an unrelated covariate. Features are (u, t, a); the
    label fires when 0.5*w + 0.5*t > 0, so w biases the response while
    only its proxy u is observed.
    """
    a, _, u, w, t = _simulation_draws(cfg)
    labels = (0.5 * w + 0.5 * t > 0.0).astype(int)
    features = np.column_stack([u, t, a])
    return Dataset(features, labels, a.astype(int), ["u", "t", "a"])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_RULE_OPS = {
    "gt": lambda col, v: col > v,
    "ge": lambda col, v: col >= v,
    "lt": lambda col, v: col < v,
    "le": lambda col, v: col <= v,
    "in": lambda col, v: col.isin(list(v)),
}


def load_schema(path: str | Path) -> dict:
    """Read a JSON or TOML sidecar describing column roles."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _binary_from_rule(raw: pd.Series, rule, context: str) -> np.ndarray:
    """Map a raw column to {0,1} by equality with a scalar or a small rule dict."""
    if isinstance(rule, dict):
        if len(rule) != 1 or next(iter(rule)) not in _RULE_OPS:
            raise IngestionError(
                f"{context}: rule must be a scalar or one of "
                f"{{{', '.join(_RULE_OPS)}: value}}, got {rule!r}"
            )
        op, value = next(iter(rule.items()))
        if op == "in":
            mask = _RULE_OPS[op](raw.astype(str).str.strip(), [str(v) for v in value])
        else:
            col = pd.to_numeric(raw, errors="coerce")
            if col.isna().any():
                row = int(col.index[col.isna()][0])
                raise IngestionError(
                    f"{context}: non-numeric value in row {row} under a numeric rule"
                )
            mask = _RULE_OPS[op](col, value)
        return mask.to_numpy().astype(int)
    return (raw.astype(str).str.strip() == str(rule)).to_numpy().astype(int)


def load_csv(path: str | Path, schema: dict | str | Path) -> Dataset:
    """Build a Dataset from a headered CSV and a schema of column roles.

    The schema names the label column (with an optional `label_positive`
    value when the raw labels are not already 0/1), the sensitive column
    with its `privileged` value or rule ({"gt": 25} marks rows above 25
    as privileged), and the categorical columns. Categoricals are one-hot
    encoded keeping every level; remaining numeric columns are
    standardized to zero mean and unit variance over the whole file
    unless `standardize` is false. The label column and any columns
    listed under `drop` are excluded from the features; the sensitive
    source column stays in (encoded like any other feature) unless
    dropped.
    """
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    for key in ("label", "sensitive"):
        if key not in schema:
            raise IngestionError(f"schema is missing the '{key}' column role")
    if "privileged" not in schema:
        raise IngestionError("schema is missing the 'privileged' value/rule")

    try:
        frame = pd.read_csv(path, sep=",", header=0, dtype=object, skipinitialspace=True)
    except Exception as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from exc
    if len(frame) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows, got {len(frame)}")

    label_col = schema["label"]
    sens_col = schema["sensitive"]
    categorical = list(schema.get("categorical", []))
    standardize = bool(schema.get("standardize", True))
    dropped = set(schema.get("drop", []))
    for col in [label_col, sens_col, *categorical]:
        if col not in frame.columns:
            raise IngestionError(f"{path}: missing column '{col}'")

    # Labels: map by the positive value if given, else require raw 0/1.
    raw_label = frame[label_col]
    if "label_positive" in schema:
        labels = _binary_from_rule(raw_label, schema["label_positive"], "label")
    else:
        stripped = raw_label.astype(str).str.strip()
        if not stripped.isin(["0", "1"]).all():
            row = int(stripped.index[~stripped.isin(["0", "1"])][0])
            raise IngestionError(
                f"{path}: non-binary label in row {row}; "
                "provide 'label_positive' in the schema"
            )
        labels = stripped.astype(int).to_numpy()

    sensitive = _binary_from_rule(frame[sens_col], schema["privileged"], "sensitive")

    columns: list[np.ndarray] = []
    names: list[str] = []
    for col in frame.columns:
        if col == label_col or col in dropped:
            continue
        if col in categorical:
            raw = frame[col].astype(str).str.strip()
            for level in sorted(raw.unique()):
                columns.append((raw == level).to_numpy().astype(float))
                names.append(f"{col}={level}")
            continue
        numeric = pd.to_numeric(frame[col], errors="coerce")
        if numeric.isna().any():
            row = int(numeric.index[numeric.isna()][0])
            raise IngestionError(
                f"{path}: unparseable value in column '{col}', row {row}"
            )
        values = numeric.to_numpy(dtype=float)
        if standardize:
            std = values.std()
            if std == 0.0:
                warnings.warn(
                    f"column '{col}' is constant; standardized to all zeros",
                    stacklevel=2,
                )
                values = np.zeros_like(values)
            else:
                values = (values - values.mean()) / std
        columns.append(values)
        names.append(col)

    features = np.column_stack(columns)
    return Dataset(features, labels, sensitive, names)


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV: feature columns, then `label` and `sensitive`.

    Floats are written at full round-trip precision, so reloading with
    standardize=false reproduces the matrices exactly.
    """
    frame = pd.DataFrame(ds.features, columns=ds.feature_names)
    frame["label"] = ds.labels
    frame["sensitive"] = ds.sensitive
    frame.to_csv(path, index=False)


def roundtrip_schema() -> dict:
    """Schema matching save_csv output (no re-encoding, no re-scaling).

    The dedicated `sensitive` column is dropped from the features: its
    values already live in the original feature columns when relevant.
    """
    return {
        "label": "label",
        "sensitive": "sensitive",
        "privileged": {"gt": 0.5},
        "categorical": [],
        "standardize": False,
        "drop": ["sensitive"],
    }


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def make_split(ds: Dataset, test_fraction: float, n_folds: int, seed: int) -> SplitPlan:
    """Stratified hold-out test split plus train/validation folds.

    Stratification is on the joint (label, sensitive) pair so every part
    contains both groups and both label values whenever possible; each
    fold's validation sets partition the non-test rows. Raises SplitError
    naming the stratum when one is too small to populate every fold.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if n_folds < 2:
        raise ConfigurationError(f"need n_folds >= 2, got {n_folds}")

    rng = np.random.default_rng(seed)
    strata: dict[tuple[int, int], np.ndarray] = {}
    for key in sorted(set(zip(ds.labels.tolist(), ds.sensitive.tolist()))):
        mask = (ds.labels == key[0]) & (ds.sensitive == key[1])
        strata[key] = np.flatnonzero(mask)

    test_parts: list[np.ndarray] = []
    fold_val_parts: list[list[np.ndarray]] = [[] for _ in range(n_folds)]
    for key, idx in strata.items():
        order = idx[rng.permutation(len(idx))]
        n_test = int(np.floor(test_fraction * len(idx) + 0.5))
        rest = order[n_test:]
        if len(rest) < n_folds:
            raise SplitError(
                f"stratum (label={key[0]}, sensitive={key[1]}) has {len(rest)} "
                f"non-test rows; cannot populate {n_folds} folds"
            )
        test_parts.append(order[:n_test])
        for j in range(n_folds):
            fold_val_parts[j].append(rest[j::n_folds])

    test_indices = np.sort(np.concatenate(test_parts)) if test_parts else np.array([], int)
    non_test = np.setdiff1d(np.arange(ds.n), test_indices)
    folds = []
    for j in range(n_folds):
        val = np.sort(np.concatenate(fold_val_parts[j]))
        train = np.setdiff1d(non_test, val)
        folds.append((train, val))
    return SplitPlan(test_indices=test_indices, folds=folds, seed=seed)
