"""Confusion-matrix metrics, rank-based AUC and ROC points.

Positive means fake (label 1). A score at or above the threshold is a
positive prediction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    recall: float | None          # tp / (tp + fn)
    tnr: float | None             # tn / (tn + fp)
    precision: float | None       # tp / (tp + fp)
    npv: float | None             # tn / (tn + fn)


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0 or s.size != y.size:
        raise ValueError(f"need equal, non-empty score and label lists (got {s.size} and {y.size})")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return s, y.astype(int)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    s, y = _check_inputs(scores, labels)
    pred = s >= threshold
    return ConfusionMatrix(
        tp=int(np.sum(pred & (y == 1))), fn=int(np.sum(~pred & (y == 1))),
        fp=int(np.sum(pred & (y == 0))), tn=int(np.sum(~pred & (y == 0))))


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Undefined ratios (zero denominators) come back as None, never 0."""
    return Metrics(
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        recall=_ratio(cm.tp, cm.tp + cm.fn),
        tnr=_ratio(cm.tn, cm.tn + cm.fp),
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        npv=_ratio(cm.tn, cm.tn + cm.fn),
    )


def _two_classes(s, y):
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    return n_pos, n_neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks, so ties count one half."""
    s, y = _check_inputs(scores, labels)
    n_pos, n_neg = _two_classes(s, y)
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size)
    # mid-rank of each tie group
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) after sweeping each distinct score as threshold, highest first."""
    s, y = _check_inputs(scores, labels)
    n_pos, n_neg = _two_classes(s, y)
    points = [(0.0, 0.0)]
    tp = fp = 0
    order = np.argsort(-s, kind="mergesort")
    s_desc, y_desc = s[order], y[order]
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s_desc[j] == s_desc[i]:
            j += 1
        tp += int(np.sum(y_desc[i:j] == 1))
        fp += int(np.sum(y_desc[i:j] == 0))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return points


def trapezoid_area(points) -> float:
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float | None
    recall: float | None
    tnr: float | None
    precision: float | None
    npv: float | None
    auc: float | None
    threshold: float
    roc: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("roc")
        return d


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    """All metrics at once; AUC and ROC are None/empty when only one class is present."""
    cm = confusion(scores, labels, threshold)
    m = metrics(cm)
    try:
        area, roc = auc(scores, labels), roc_points(scores, labels)
    except ValueError:
        area, roc = None, []
    return EvalReport(cm, m.accuracy, m.recall, m.tnr, m.precision, m.npv, area, threshold, roc)
