"""
mono_gbdt/objective.py — Gradients, hessians and evaluation metrics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from mono_gbdt.config import ObjectiveKind
from mono_gbdt.errors import MetricError, TrainingError

PROB_CLAMP = 1e-15


@dataclass(frozen=True)
class GradHess:
    """Per-row first and second derivatives of the loss w.r.t. the margin."""
    gradient: np.ndarray
    hessian: np.ndarray

    def __len__(self) -> int:
        return len(self.gradient)


def sigmoid(margin):
    """Logistic function, clamped to [1e-15, 1 - 1e-15]."""
    p = np.clip(expit(np.asarray(margin, dtype=float)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(p) if p.ndim == 0 else p


def grad_hess(kind: ObjectiveKind, margin, label) -> GradHess:
    margin = np.asarray(margin, dtype=float)
    label = np.asarray(label, dtype=float)
    if kind is ObjectiveKind.BINARY:
        p = np.asarray(sigmoid(margin))
        return GradHess(p - label, p * (1.0 - p))
    return GradHess(margin - label, np.ones_like(margin))


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise MetricError(f"Length mismatch: {a.size} predictions vs {b.size} labels")
    if a.size == 0:
        raise MetricError("Metric needs at least one row")
    return a, b


def logloss(probabilities, labels) -> float:
    p, y = _paired(probabilities, labels)
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    p, y = _paired(probabilities, labels)
    return float(np.mean((p >= threshold).astype(float) == y))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; ties earn half credit."""
    s, y = _paired(scores, labels)
    positive = y == 1
    n_pos = int(positive.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined when labels hold a single class")
    ranks = rankdata(s, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mse(predictions, labels) -> float:
    p, y = _paired(predictions, labels)
    return float(np.mean((p - y) ** 2))


def base_margin(kind: ObjectiveKind, labels) -> float:
    """Boost-from-average starting margin."""
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0:
        raise TrainingError("Cannot train on an empty dataset")
    mean = float(labels.mean())
    if kind is ObjectiveKind.L2:
        return mean
    if mean <= 0.0 or mean >= 1.0:
        raise TrainingError(
            f"Binary labels are all {int(round(mean))}; the base margin logit(mean) is undefined"
        )
    return float(np.log(mean / (1.0 - mean)))


def transform(kind: ObjectiveKind, margin):
    return sigmoid(margin) if kind is ObjectiveKind.BINARY else np.asarray(margin, dtype=float)


def relative_change(value, reference):
    """(value - reference, value / reference - 1), elementwise; the ratio is NaN where the reference is 0."""
    value = np.asarray(value, dtype=float)
    reference = np.asarray(reference, dtype=float)
    difference = value - reference
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(reference != 0, value / reference - 1.0, np.nan)
    if difference.ndim == 0:
        return float(difference), float(ratio)
    return difference, ratio


METRICS = {
    "logloss": lambda p, y: logloss(p, y),
    "accuracy": lambda p, y: accuracy(p, y, 0.5),
    "auc": auc,
    "mse": mse,
}
