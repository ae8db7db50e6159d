import numpy as np
import pytest

import garmseg as g
from garmseg.errors import ValidationError
from garmseg.metrics import iou_from_confusion


def brute_force_iou(pred, gt, num_classes):
    """Independent oracle: explicit per-class set intersection/union."""
    per_class = np.full(num_classes, np.nan)
    for k in range(num_classes):
        inter = np.sum((pred == k) & (gt == k))
        union = np.sum((pred == k) | (gt == k))
        if union:
            per_class[k] = inter / union
    mean = np.nanmean(per_class)
    return per_class, mean


def test_identical_gives_one():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 18, size=200)
    per_class, mean = g.iou(labels, labels, 18)
    present = np.unique(labels)
    assert mean == 1.0
    assert np.all(per_class[present] == 1.0)
    absent = np.setdiff1d(np.arange(18), present)
    assert np.all(np.isnan(per_class[absent]))


def test_disjoint_single_classes():
    pred = np.zeros(10, dtype=int)
    gt = np.ones(10, dtype=int)
    per_class, mean = g.iou(pred, gt, 18)
    assert per_class[0] == 0.0 and per_class[1] == 0.0
    assert mean == 0.0


def test_matches_confusion_oracle_on_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(10, 500))
        k = int(rng.integers(2, 18))
        pred = rng.integers(0, k, size=n)
        gt = rng.integers(0, k, size=n)
        per_class, mean = g.iou(pred, gt, 18)
        exp_class, exp_mean = brute_force_iou(pred, gt, 18)
        assert np.allclose(per_class, exp_class, atol=1e-12, equal_nan=True)
        assert abs(mean - exp_mean) < 1e-12


def test_length_mismatch_rejected():
    with pytest.raises(ValidationError):
        g.iou(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 18)


def test_out_of_range_rejected():
    with pytest.raises(ValidationError):
        g.iou(np.array([18]), np.array([0]), 18)


def test_absent_classes_excluded_from_mean():
    pred = np.array([0, 0, 1, 1])
    gt = np.array([0, 1, 1, 1])
    per_class, mean = g.iou(pred, gt, 18)
    # class 0: inter 1, union 2; class 1: inter 2, union 3
    assert per_class[0] == 0.5
    assert per_class[1] == pytest.approx(2 / 3)
    assert mean == pytest.approx((0.5 + 2 / 3) / 2)


def test_confusion_matrix_counts():
    pred = np.array([0, 1, 1, 2])
    gt = np.array([0, 1, 2, 2])
    cm = g.confusion_matrix(pred, gt, 3)
    assert cm[0, 0] == 1 and cm[1, 1] == 1 and cm[2, 1] == 1 and cm[2, 2] == 1
    assert cm.sum() == 4


def test_iou_from_confusion_empty():
    per_class, mean = iou_from_confusion(np.zeros((4, 4)))
    assert np.isnan(per_class).all() and np.isnan(mean)
