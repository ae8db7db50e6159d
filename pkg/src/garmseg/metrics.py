"""Segmentation metrics: per-class and mean IoU via confusion matrix.

All label vectors here are 0-based. Classes absent from both prediction and
ground truth carry NaN in the per-class vector and are excluded from means.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int
                     ) -> np.ndarray:
    """num_classes x num_classes counts, rows = ground truth, cols = pred."""
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    if pred.shape != gt.shape:
        raise ValidationError(
            f"prediction/label length mismatch: {pred.shape[0]} vs {gt.shape[0]}")
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValidationError(f"{name} labels outside 0..{num_classes - 1}")
    return np.bincount(
        gt * num_classes + pred, minlength=num_classes ** 2
    ).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where the class is absent from both) and their mean."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    per_class = np.full(cm.shape[0], np.nan)
    present = union > 0
    per_class[present] = tp[present] / union[present]
    mean = float(np.nanmean(per_class)) if present.any() else float("nan")
    return per_class, mean


def iou(pred: np.ndarray, gt: np.ndarray, num_classes: int
        ) -> tuple[np.ndarray, float]:
    """Intersection-over-union per class plus mean over present classes."""
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes))
