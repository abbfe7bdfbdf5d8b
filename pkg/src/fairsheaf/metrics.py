"""Performance and fairness metrics, group and individual.

Group metrics compare positive-prediction rates (independence), error
rates (separation) and precision among predicted positives
(sufficiency) between the two sensitive groups. Individual metrics look
at score smoothness: the mean gap to the k-nearest-neighbour average
(consistency) and a high quantile of difference quotients (the
empirical Lipschitz constant). The generalized entropy index ties both
views together through its within/between decomposition.

Probabilities are plain frequencies. Undefined conditionals raise
MetricNotApplicable instead of silently reporting 0, which would fake
fairness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GroupSupportError, MetricNotApplicable
from .topology import knn_indices, nearest_rank, pairwise_distances_condensed

_GROUPS = (0, 1)


def _as_binary(name: str, v) -> np.ndarray:
    arr = np.asarray(v, dtype=int).ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ConfigurationError(f"{name} must contain only 0/1 values")
    return arr


def _group_masks(a: np.ndarray) -> dict[int, np.ndarray]:
    masks = {g: a == g for g in _GROUPS}
    for g, mask in masks.items():
        if not mask.any():
            raise GroupSupportError(f"sensitive group a={g} is empty")
    return masks


def accuracy(y, yhat) -> float:
    y, yhat = _as_binary("y", y), _as_binary("yhat", yhat)
    return float(np.mean(y == yhat))


def balanced_accuracy(y, yhat, a) -> float:
    """Mean of the per-group accuracies."""
    y, yhat, a = _as_binary("y", y), _as_binary("yhat", yhat), _as_binary("a", a)
    masks = _group_masks(a)
    return float(np.mean([np.mean(y[m] == yhat[m]) for m in masks.values()]))


def independence(yhat, a) -> float:
    """|P(yhat=1 | a=1) - P(yhat=1 | a=0)|."""
    yhat, a = _as_binary("yhat", yhat), _as_binary("a", a)
    masks = _group_masks(a)
    return float(abs(yhat[masks[1]].mean() - yhat[masks[0]].mean()))


def confusion_rates(y: np.ndarray, yhat: np.ndarray) -> dict[str, float | None]:
    """TPR/TNR/FPR/FNR; None where the conditioning class is absent."""
    pos, neg = y == 1, y == 0
    rates: dict[str, float | None] = {}
    rates["tpr"] = float(np.mean(yhat[pos] == 1)) if pos.any() else None
    rates["fnr"] = float(np.mean(yhat[pos] == 0)) if pos.any() else None
    rates["tnr"] = float(np.mean(yhat[neg] == 0)) if neg.any() else None
    rates["fpr"] = float(np.mean(yhat[neg] == 1)) if neg.any() else None
    return rates


def separation(y, yhat, a) -> float:
    """Half the absolute summed deviation of FPR and FNR between groups."""
    y, yhat, a = _as_binary("y", y), _as_binary("yhat", yhat), _as_binary("a", a)
    masks = _group_masks(a)
    rates = {g: confusion_rates(y[m], yhat[m]) for g, m in masks.items()}
    for g in _GROUPS:
        if rates[g]["fpr"] is None:
            raise MetricNotApplicable(f"FPR undefined in group a={g}: no negative labels")
        if rates[g]["fnr"] is None:
            raise MetricNotApplicable(f"FNR undefined in group a={g}: no positive labels")
    return 0.5 * abs(
        (rates[1]["fpr"] - rates[0]["fpr"]) + (rates[1]["fnr"] - rates[0]["fnr"])
    )


def sufficiency(y, yhat, a) -> float:
    """|P(y=1 | yhat=1, a=1) - P(y=1 | yhat=1, a=0)|."""
    y, yhat, a = _as_binary("y", y), _as_binary("yhat", yhat), _as_binary("a", a)
    masks = _group_masks(a)
    precision = {}
    for g, m in masks.items():
        predicted_pos = m & (yhat == 1)
        if not predicted_pos.any():
            raise MetricNotApplicable(
                f"precision undefined in group a={g}: no predicted positives"
            )
        precision[g] = float(np.mean(y[predicted_pos]))
    return abs(precision[1] - precision[0])


def consistency(scores, X, k: int = 5) -> float:
    """Mean |score - average score of the k nearest neighbours|.

    Neighbours use Euclidean distance on the covariates with ties broken
    by lower row index; the point itself is excluded.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if scores.size != X.shape[0]:
        raise ConfigurationError("scores and X must have matching rows")
    neighbours = knn_indices(X, k)
    neighbour_mean = scores[neighbours].mean(axis=1)
    return float(np.mean(np.abs(scores - neighbour_mean)))


def _condensed_to_pair(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map condensed pair indices (i < j ordering) back to (i, j)."""
    # row i starts at offset i*n - i*(i+1)/2 - i - 1 + ... ; invert by search
    starts = np.cumsum(np.concatenate([[0], np.arange(n - 1, 0, -1)]))
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return i, j


def lipschitz(
    scores,
    X,
    q: float = 0.99,
    max_pairs: int | None = None,
    seed: int = 0,
) -> float:
    """Nearest-rank q-quantile of |score gap| / feature distance over pairs.

    Pairs at zero feature distance are excluded; if every pair
    coincides the quotient set is empty and the metric is not
    applicable. For very large inputs max_pairs caps the number of
    (seeded, uniformly sampled) pairs considered.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if scores.size != n:
        raise ConfigurationError("scores and X must have matching rows")
    if n < 2:
        raise ConfigurationError("need at least two rows")
    total = n * (n - 1) // 2
    if max_pairs is not None and total > max_pairs:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(total, size=max_pairs, replace=False)
        i, j = _condensed_to_pair(np.sort(chosen), n)
        dist = np.linalg.norm(X[i] - X[j], axis=1)
        gap = np.abs(scores[i] - scores[j])
    else:
        dist = pairwise_distances_condensed(X)
        i, j = np.triu_indices(n, k=1)
        gap = np.abs(scores[i] - scores[j])
    keep = dist > 0.0
    if not keep.any():
        raise MetricNotApplicable("all sampled pairs coincide: quotients undefined")
    return nearest_rank(gap[keep] / dist[keep], q)


def generalized_entropy(y, yhat, a) -> tuple[float, float, float]:
    """Order-2 generalized entropy of correctness benefits, decomposed.

    Benefits are b_i = 1 when the prediction is correct, 0 otherwise.
    Returns (total, within-group, between-group); the two components sum
    to the total. Groups are the sensitive attribute's values; a group
    whose mean benefit is zero contributes nothing to the within term
    (its weight vanishes).
    """
    y, yhat, a = _as_binary("y", y), _as_binary("yhat", yhat), _as_binary("a", a)
    b = (y == yhat).astype(float)
    mu = b.mean()
    if mu == 0.0:
        raise MetricNotApplicable("all predictions wrong: mean benefit is zero")
    n = b.size
    ent = float(np.mean((b / mu) ** 2 - 1.0) / 2.0)
    within = 0.0
    between = 0.0
    for g in np.unique(a):
        bg = b[a == g]
        ng = bg.size
        mu_g = bg.mean()
        between += ng / (2.0 * n) * ((mu_g / mu) ** 2 - 1.0)
        if mu_g > 0.0:
            ent_g = float(np.mean((bg / mu_g) ** 2 - 1.0) / 2.0)
            within += (ng / n) * (mu_g / mu) ** 2 * ent_g
    return ent, float(within), float(between)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

METRIC_FIELDS = (
    "accuracy",
    "balanced_accuracy",
    "ind",
    "sep",
    "suf",
    "con",
    "lip",
    "ent",
    "ent_within",
    "ent_between",
)


@dataclass
class FairnessReport:
    """All metrics for one scored model run; None marks not-applicable."""

    accuracy: float
    balanced_accuracy: float
    ind: float
    sep: float | None
    suf: float | None
    con: float
    lip: float | None
    ent: float | None
    ent_within: float | None
    ent_between: float | None
    group_rates: dict[str, dict[str, float | None]] = field(default_factory=dict)
    na_reasons: dict[str, str] = field(default_factory=dict)

    def to_flat_dict(self) -> dict:
        """One flat mapping: metric values, then per-group rates."""
        out = {name: getattr(self, name) for name in METRIC_FIELDS}
        for g, rates in self.group_rates.items():
            for rate, value in rates.items():
                out[f"{rate}_a{g}"] = value
        if self.na_reasons:
            out["na_reasons"] = dict(self.na_reasons)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), indent=2)


def compute_report(
    y,
    scores,
    a,
    X,
    threshold: float = 0.5,
    k: int = 5,
    lip_q: float = 0.99,
    lip_max_pairs: int | None = None,
) -> FairnessReport:
    """Evaluate every metric on one set of scores.

    Metrics whose conditionals are undefined on this input come back as
    None with the reason recorded, rather than a fake zero. The
    neighbour count is clamped to n-1 on very small inputs.
    """
    y = _as_binary("y", y)
    a = _as_binary("a", a)
    scores = np.asarray(scores, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    yhat = (scores > threshold).astype(int)
    k = min(k, X.shape[0] - 1)

    values: dict[str, float | None] = {}
    na: dict[str, str] = {}

    def attempt(name: str, fn):
        try:
            values[name] = fn()
        except MetricNotApplicable as exc:
            values[name] = None
            na[name] = exc.reason

    values["accuracy"] = accuracy(y, yhat)
    values["balanced_accuracy"] = balanced_accuracy(y, yhat, a)
    values["ind"] = independence(yhat, a)
    attempt("sep", lambda: separation(y, yhat, a))
    attempt("suf", lambda: sufficiency(y, yhat, a))
    values["con"] = consistency(scores, X, k=k)
    attempt("lip", lambda: lipschitz(scores, X, q=lip_q, max_pairs=lip_max_pairs))
    try:
        ent, within, between = generalized_entropy(y, yhat, a)
        values["ent"], values["ent_within"], values["ent_between"] = ent, within, between
    except MetricNotApplicable as exc:
        values["ent"] = values["ent_within"] = values["ent_between"] = None
        na["ent"] = exc.reason

    masks = _group_masks(a)
    group_rates = {str(g): confusion_rates(y[m], yhat[m]) for g, m in masks.items()}
    return FairnessReport(group_rates=group_rates, na_reasons=na, **values)
