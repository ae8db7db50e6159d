import numpy as np
import pytest

import garmseg as g
from garmseg.errors import ValidationError


def _plain_scan(points):
    n = len(points)
    return g.ScanSample(points=np.asarray(points, dtype=float),
                        colors=np.full((n, 3), 0.5),
                        normals=np.tile([0.0, 0.0, 1.0], (n, 1)))


def test_normalize_subtracts_centroid():
    scan = _plain_scan([(1, 1, 1), (3, 3, 3)])
    centered, record = g.normalize(scan)
    assert np.array_equal(centered.points, [[-1, -1, -1], [1, 1, 1]])
    assert np.array_equal(record.translation, [-2, -2, -2])


def test_normalize_identity_when_centered():
    scan = _plain_scan([(-1, 0, 0), (1, 0, 0)])
    centered, record = g.normalize(scan)
    assert np.array_equal(centered.points, scan.points)
    assert np.array_equal(record.translation, [0, 0, 0])


def test_normalize_centroid_vanishes(rng):
    pts = rng.uniform(-5, 5, size=(100, 3))
    centered, _ = g.normalize(_plain_scan(pts))
    assert np.linalg.norm(centered.points.mean(axis=0)) < 1e-9


def test_normalize_translation_equivariant(rng):
    pts = rng.uniform(-2, 2, size=(50, 3))
    base, _ = g.normalize(_plain_scan(pts))
    for _ in range(5):
        t = rng.uniform(-10, 10, size=3)
        shifted, _ = g.normalize(_plain_scan(pts + t))
        assert np.allclose(shifted.points, base.points, atol=1e-12)


def test_normalize_record_roundtrip(rng):
    pts = rng.uniform(-2, 2, size=(20, 3))
    centered, record = g.normalize(_plain_scan(pts))
    assert np.allclose(record.invert(centered.points), pts, atol=0)
    assert np.allclose(record.apply(pts), centered.points, atol=0)


def test_empty_scan_rejected():
    with pytest.raises(ValidationError):
        _plain_scan(np.zeros((0, 3)))


def test_nonunit_normals_rejected():
    with pytest.raises(ValidationError):
        g.ScanSample(points=np.zeros((1, 3)), colors=np.full((1, 3), 0.5),
                     normals=np.array([[0.0, 0.0, 2.0]]))


def test_nonfinite_positions_rejected():
    with pytest.raises(ValidationError):
        _plain_scan([(np.nan, 0, 0)])


def test_labels_need_garment_bits():
    with pytest.raises(ValidationError, match="garment"):
        g.ScanSample(points=np.zeros((1, 3)), colors=np.full((1, 3), 0.5),
                     normals=np.array([[0.0, 0.0, 1.0]]),
                     labels=np.array([0]))
    # label 0 (T-shirt) without its presence bit
    with pytest.raises(ValidationError, match="absent"):
        g.ScanSample(points=np.zeros((1, 3)), colors=np.full((1, 3), 0.5),
                     normals=np.array([[0.0, 0.0, 1.0]]),
                     labels=np.array([0]),
                     garments=g.GarmentVector.from_names(["Body"]))


def test_permuted_carries_labels(labeled_scan, rng):
    perm = rng.permutation(labeled_scan.num_points)
    shuffled = labeled_scan.permuted(perm)
    assert np.array_equal(shuffled.points, labeled_scan.points[perm])
    assert np.array_equal(shuffled.labels, labeled_scan.labels[perm])


def test_features9_layout(labeled_scan):
    feats = labeled_scan.features9()
    assert feats.shape == (labeled_scan.num_points, 9)
    assert np.array_equal(feats[:, :3], labeled_scan.points)
    assert np.array_equal(feats[:, 3:6], labeled_scan.colors)
    assert np.array_equal(feats[:, 6:], labeled_scan.normals)
