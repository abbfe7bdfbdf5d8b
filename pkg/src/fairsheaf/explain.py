"""Closed-form SHAP attributions for plain and diffused linear models.

For a linear model the SHAP value of feature k on observation i is
beta_k * (x_ik - mean_k). Composing the model with a linear diffusion
operator D keeps a closed form: attributions average over neighbouring
rows through D and the per-observation effective coefficient scales by
the row sum of D. Attributions act on logits, not sigmoid outputs,
which keeps them additive.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ShapeError
from .model import LogisticModel


@dataclass
class Attribution:
    """Per-observation, per-feature contributions and effective coefficients.

    baseline records the per-feature expected values the attributions
    are measured against (the empirical means of the scored set).
    """

    shap: np.ndarray
    effective_beta: np.ndarray
    baseline: np.ndarray


def shap_linear(m: LogisticModel, X: np.ndarray) -> Attribution:
    """Exact SHAP values of the linear logit on the provided rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.beta.size:
        raise ShapeError(f"X must be (n, {m.beta.size})")
    baseline = X.mean(axis=0)
    shap = (X - baseline) * m.beta
    effective = np.tile(m.beta, (X.shape[0], 1))
    return Attribution(shap=shap, effective_beta=effective, baseline=baseline)


def shap_diffused(m: LogisticModel, D: np.ndarray, X: np.ndarray) -> Attribution:
    """SHAP values of the model composed with a diffusion operator D.

    D is the dense (n, n) operator applied to the logits (the
    post-processing form). With D = I this reduces to shap_linear.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != m.beta.size:
        raise ShapeError(f"X must be (n, {m.beta.size})")
    if D.shape != (n, n):
        raise ShapeError(f"D must be ({n}, {n}), got {D.shape}")
    baseline = X.mean(axis=0)
    row_sums = D.sum(axis=1)
    shap = (D @ X - np.outer(row_sums, baseline)) * m.beta
    effective = np.outer(row_sums, m.beta)
    return Attribution(shap=shap, effective_beta=effective, baseline=baseline)


def aggregate_importance(attr: Attribution, normalized: bool = False) -> np.ndarray:
    """Mean absolute attribution per feature; normalized sums to one.

    All-zero attributions have no meaningful shares; the normalized
    variant then falls back to uniform weights with a warning.
    """
    if attr.shap.size == 0:
        raise ConfigurationError("attribution is empty")
    raw = np.abs(attr.shap).mean(axis=0)
    if not normalized:
        return raw
    total = raw.sum()
    if total == 0.0:
        warnings.warn("all attributions are zero; reporting uniform importance", stacklevel=2)
        return np.full(raw.size, 1.0 / raw.size)
    return raw / total


def export_attribution_csv(
    attr: Attribution, feature_names: list[str], path: str | Path
) -> None:
    """Long-format dump: one row per (observation, feature)."""
    n, d = attr.shap.shape
    if len(feature_names) != d:
        raise ShapeError(f"{d} features but {len(feature_names)} names")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["observation_id", "feature", "shap", "effective_beta"])
        for i in range(n):
            for k in range(d):
                writer.writerow(
                    [i, feature_names[k],
                     repr(float(attr.shap[i, k])), repr(float(attr.effective_beta[i, k]))]
                )


def export_importance_json(
    attr: Attribution, feature_names: list[str], path: str | Path
) -> None:
    """Raw and normalized importance summary keyed by feature name."""
    raw = aggregate_importance(attr, normalized=False)
    norm = aggregate_importance(attr, normalized=True)
    payload = {
        "importance": {name: float(v) for name, v in zip(feature_names, raw)},
        "importance_normalized": {name: float(v) for name, v in zip(feature_names, norm)},
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
