"""Logistic regression and the three diffusion integration modes.

The base classifier is a logistic regression fit with a from-scratch
AdamW loop (decoupled weight decay, full-batch gradients). Diffusion can
enter the pipeline in three places: smoothing the covariates before the
fit (pre), smoothing the fitted logits (post), or alternating fit and
covariate diffusion through a coefficient-vector sheaf (in-process).

Graphs are transductive: the topology spans every scored row, labels of
validation/test rows never enter the fit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset, SplitPlan
from .diffusion import DiffusionConfig, diffuse, diffusion_matrix
from .errors import ConfigurationError, DegenerateDataError, ShapeError
from .sheaf import IdentitySheaf, SheafLaplacian, VectorSheaf, build_sheaf_laplacian, normalize
from .topology import FairGraph

# AdamW hyper-parameter ranges used for validation and grid sampling.
LR_RANGE = (1e-4, 1e-1)
WD_RANGE = (1e-6, 1e-2)
BETA1_RANGE = (0.8, 0.95)
BETA2_RANGE = (0.95, 0.9999)

GRAD_TOL = 1e-6
_ADAM_EPS = 1e-8


@dataclass
class LogisticModel:
    """Intercept, coefficient vector and classification threshold."""

    beta0: float
    beta: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.isfinite(self.beta0) or not np.all(np.isfinite(self.beta)):
            raise ConfigurationError("model coefficients must be finite")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError(f"threshold must lie in (0, 1), got {self.threshold}")

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.beta.size:
            raise ShapeError(f"model has {self.beta.size} coefficients, X has {X.shape[1]} columns")
        return self.beta0 + X @ self.beta


@dataclass
class TrainConfig:
    """AdamW settings; value ranges follow the grid-search sampling ranges."""

    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    moment_decay_1: float = 0.9
    moment_decay_2: float = 0.99
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("learning_rate", self.learning_rate, LR_RANGE),
            ("weight_decay", self.weight_decay, WD_RANGE),
            ("moment_decay_1", self.moment_decay_1, BETA1_RANGE),
            ("moment_decay_2", self.moment_decay_2, BETA2_RANGE),
        ]
        for name, value, (lo, hi) in checks:
            if not lo <= value <= hi:
                raise ConfigurationError(f"{name}={value} outside [{lo}, {hi}]")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_logistic(X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> LogisticModel:
    """Minimize the mean negative log-likelihood with decoupled weight decay.

    Full-batch AdamW from zero initialization; stops when the gradient
    max-norm drops below 1e-6 or max_epochs is reached. The intercept is
    not decayed. Deterministic for a given config.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if n < 2 or y.size != n:
        raise ConfigurationError(f"need n >= 2 rows with matching labels, got {n}")
    if y.min() == y.max():
        raise DegenerateDataError("labels are single-class; logistic fit is degenerate")

    d = X.shape[1]
    theta = np.zeros(d + 1)  # [beta0, beta]
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = cfg.moment_decay_1, cfg.moment_decay_2
    for step in range(1, cfg.max_epochs + 1):
        z = theta[0] + X @ theta[1:]
        residual = sigmoid(z) - y
        grad = np.empty_like(theta)
        grad[0] = residual.mean()
        grad[1:] = X.T @ residual / n
        if np.max(np.abs(grad)) < GRAD_TOL:
            break
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**step)
        v_hat = v / (1.0 - b2**step)
        theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        theta[1:] -= cfg.learning_rate * cfg.weight_decay * theta[1:]
    return LogisticModel(beta0=float(theta[0]), beta=theta[1:])


def predict_scores(m: LogisticModel, X: np.ndarray) -> np.ndarray:
    """Sigmoid of the affine map; values in (0, 1)."""
    return sigmoid(m.logits(X))


def classify(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Strict threshold: a score exactly at the threshold maps to 0.

    Degenerate thresholds (0 or 1) are allowed here even though a model's
    stored threshold must stay inside (0, 1).
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ConfigurationError("scores must lie in [0, 1]")
    return (scores > threshold).astype(int)


def save_model(m: LogisticModel, path: str | Path, feature_names: list[str] | None = None) -> None:
    payload = {
        "beta0": m.beta0,
        "beta": m.beta.tolist(),
        "threshold": m.threshold,
        "feature_names": list(feature_names) if feature_names else [],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[LogisticModel, list[str]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    model = LogisticModel(
        beta0=float(payload["beta0"]),
        beta=np.asarray(payload["beta"], dtype=float),
        threshold=float(payload.get("threshold", 0.5)),
    )
    return model, list(payload.get("feature_names", []))


# ---------------------------------------------------------------------------
# Processor pipeline
# ---------------------------------------------------------------------------


@dataclass
class ProcessorMode:
    """Where diffusion enters the pipeline, and over which graph.

    mode is one of "pre", "post", "inprocess". The Laplacian may be
    passed pre-built (it is normalized on the fly if raw); otherwise the
    identity-sheaf operator of the right stalk dimension is assembled
    from the graph. The in-processor ignores `laplacian` and rebuilds a
    coefficient-vector sheaf from the current fit each round.
    """

    mode: str
    graph: FairGraph
    diffusion: DiffusionConfig
    laplacian: SheafLaplacian | None = None
    inprocess_rounds: int = 1

    def __post_init__(self):
        if self.mode not in ("pre", "post", "inprocess"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.inprocess_rounds < 1:
            raise ConfigurationError("inprocess_rounds must be >= 1")


def _membership_matrix(g: FairGraph) -> sp.csr_matrix:
    """(n_virtual, n_real) row-stochastic matrix averaging each subset."""
    rows, cols, vals = [], [], []
    for vid in range(g.n_real, g.n_total):
        members = g.virtual_meta.get(vid)
        if members is None or len(members) == 0:
            continue
        for member in members:
            rows.append(vid - g.n_real)
            cols.append(int(member))
            vals.append(1.0 / len(members))
    return sp.csr_matrix((vals, (rows, cols)), shape=(g.n_virtual, g.n_real))


def _augment_signal(values: np.ndarray, g: FairGraph) -> np.ndarray:
    """Append one row per virtual node holding its subset's current mean."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] != g.n_real:
        raise ShapeError(
            f"signal has {values.shape[0]} rows, graph has {g.n_real} real nodes"
        )
    if g.n_virtual == 0:
        return values
    virtual = _membership_matrix(g) @ values
    return np.vstack([values, virtual])


def _diffuse_columns(L: SheafLaplacian, g: FairGraph, values: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """Diffuse an (n_real, s) node signal, returning only the real rows."""
    stacked = _augment_signal(values, g)
    x0 = stacked.reshape(-1)
    out = diffuse(L, x0, cfg).reshape(stacked.shape)
    return out[: g.n_real]


def _laplacian_for(proc: ProcessorMode, stalk_dim: int) -> SheafLaplacian:
    L = proc.laplacian
    if L is None:
        L = build_sheaf_laplacian(proc.graph, IdentitySheaf(stalk_dim))
    if L.stalk_dim != stalk_dim:
        raise ShapeError(
            f"{proc.mode} processing needs stalk dimension {stalk_dim}, "
            f"Laplacian has {L.stalk_dim}"
        )
    return L if L.normalized else normalize(L)


def post_diffusion_operator(proc: ProcessorMode, cap: int = 5000) -> np.ndarray:
    """Dense (n_real, n_real) operator of post-processing diffusion.

    Folds the virtual-node initialization (subset means of the logits)
    into the operator, so post scores equal sigmoid(D @ logits) exactly.
    """
    L = _laplacian_for(proc, 1)
    D = diffusion_matrix(L, proc.diffusion, cap=cap)
    g = proc.graph
    n = g.n_real
    if g.n_virtual == 0:
        return D
    M = _membership_matrix(g).toarray()
    return D[:n, :n] + D[:n, n:] @ M


def run_pipeline(
    ds: Dataset,
    split: SplitPlan,
    proc: ProcessorMode | None,
    train_cfg: TrainConfig,
    fold: int | None = None,
) -> tuple[dict[str, np.ndarray], LogisticModel]:
    """Fit one model and score every split part.

    With fold=None the model trains on all non-test rows and the parts
    are {"train", "test"}; with a fold index, training uses that fold's
    train rows and "validation" is added. Scores follow ascending row
    order within each part; virtual nodes never receive scores.
    """
    if fold is None:
        train_idx = split.train_indices()
        parts = {"train": train_idx, "test": split.test_indices}
    else:
        train_idx, val_idx = split.folds[fold]
        parts = {"train": train_idx, "validation": val_idx, "test": split.test_indices}

    X = ds.features
    y = ds.labels

    if proc is None:
        model = fit_logistic(X[train_idx], y[train_idx], train_cfg)
        scores = predict_scores(model, X)
    elif proc.mode == "pre":
        L = _laplacian_for(proc, ds.d)
        X_dif = _diffuse_columns(L, proc.graph, X, proc.diffusion)
        model = fit_logistic(X_dif[train_idx], y[train_idx], train_cfg)
        scores = predict_scores(model, X_dif)
    elif proc.mode == "post":
        L = _laplacian_for(proc, 1)
        model = fit_logistic(X[train_idx], y[train_idx], train_cfg)
        z = model.logits(X)
        z_dif = _diffuse_columns(L, proc.graph, z[:, None], proc.diffusion)[:, 0]
        scores = sigmoid(z_dif)
    else:  # inprocess
        model = fit_logistic(X[train_idx], y[train_idx], train_cfg)
        X_dif = X
        for _ in range(proc.inprocess_rounds):
            if not np.any(model.beta):
                raise DegenerateDataError(
                    "fitted coefficients are all zero; vector sheaf is undefined"
                )
            L = normalize(build_sheaf_laplacian(proc.graph, VectorSheaf(model.beta)))
            X_dif = _diffuse_columns(L, proc.graph, X, proc.diffusion)
            model = fit_logistic(X_dif[train_idx], y[train_idx], train_cfg)
        scores = predict_scores(model, X_dif)

    return {name: scores[idx] for name, idx in parts.items()}, model
