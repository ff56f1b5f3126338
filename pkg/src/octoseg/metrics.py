"""Segmentation agreement metrics: confusion counts, IoU, Cohen's kappa.

Confusion rows are ground truth, columns are prediction. Classes whose
union is empty have no defined IoU; they are excluded from the mean rather
than scored 0 or 1, so absent classes in small scenes neither penalize nor
inflate a model. Matrices add, which gives dataset-level (global-count)
aggregation for free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabelMask
from .errors import ContractError, MetricError

NUM_CLASSES = 4

# Placed in IoUReport.per_class for classes with an empty union.
UNDEFINED = float("nan")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ContractError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")
        if (self.counts < 0).any():
            raise ContractError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


@dataclass
class IoUReport:
    per_class: tuple
    mean_iou: float


def _as_labels(m) -> np.ndarray:
    return m.labels if isinstance(m, LabelMask) else np.asarray(m)


def confusion(pred, gt) -> ConfusionMatrix:
    """Count pixels by (ground-truth class, predicted class)."""
    p = _as_labels(pred)
    g = _as_labels(gt)
    if p.shape != g.shape:
        raise ContractError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    joint = np.bincount(
        (g.astype(np.int64) * NUM_CLASSES + p.astype(np.int64)).ravel(),
        minlength=NUM_CLASSES * NUM_CLASSES,
    )
    return ConfusionMatrix(joint.reshape(NUM_CLASSES, NUM_CLASSES))


def iou(cm: ConfusionMatrix) -> IoUReport:
    """Per-class intersection over union and the mean over defined classes."""
    diag = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - diag
    defined = union > 0
    if not defined.any():
        raise MetricError("IoU undefined for every class (no pixels counted)")
    per = np.full(NUM_CLASSES, UNDEFINED)
    per[defined] = diag[defined] / union[defined]
    return IoUReport(tuple(per), float(per[defined].mean()))


def evaluate(pred, gt) -> IoUReport:
    """Convenience: iou(confusion(pred, gt))."""
    return iou(confusion(pred, gt))


def cohen_kappa(a, b) -> float:
    """Chance-corrected per-pixel agreement between two annotations.

    kappa = (p_o - p_e) / (1 - p_e) with p_e the product-of-marginals chance
    agreement. Two identical constant masks agree perfectly by construction,
    so the degenerate p_e = 1 case is defined as 1.
    """
    la = _as_labels(a)
    lb = _as_labels(b)
    if la.shape != lb.shape:
        raise ContractError(f"shape mismatch: {la.shape} vs {lb.shape}")
    n = la.size
    if n == 0:
        raise ContractError("empty masks")
    p_o = float(np.mean(la == lb))
    pa = np.bincount(la.ravel(), minlength=NUM_CLASSES) / n
    pb = np.bincount(lb.ravel(), minlength=NUM_CLASSES) / n
    p_e = float(pa @ pb)
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)
