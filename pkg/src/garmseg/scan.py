"""Scan domain types: colored point clouds with optional labels and body fit.

A scan holds n points with position (meters), color in [0,1], unit normal,
and optionally 0-based per-point labels, the body parameters of the fitted
parametric body, and the garment presence vector. Instances are treated as
immutable; operations return new scans.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .taxonomy import DEFAULT_TAXONOMY, GarmentVector, LabelTaxonomy

NORMAL_UNIT_TOL = 1e-4


@dataclass(frozen=True)
class BodyParams:
    """Pose (axis-angle per joint, flattened) and shape coefficients."""

    pose: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=np.float64))
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=np.float64))
        if not np.isfinite(self.pose).all() or not np.isfinite(self.shape).all():
            raise ValidationError("body parameters must be finite")
        if self.pose.size % 3 != 0:
            raise ValidationError("pose must hold 3 axis-angle values per joint")

    def to_json(self) -> dict:
        return {"pose": self.pose.ravel().tolist(),
                "shape": self.shape.ravel().tolist()}

    @classmethod
    def from_json(cls, raw: dict) -> "BodyParams":
        return cls(np.asarray(raw["pose"], dtype=np.float64),
                   np.asarray(raw.get("shape", []), dtype=np.float64))

    def content_key(self) -> bytes:
        return self.pose.tobytes() + b"|" + self.shape.tobytes()


@dataclass(frozen=True)
class ScanSample:
    """One colored scan; the unit every pipeline stage passes around."""

    points: np.ndarray
    colors: np.ndarray
    normals: np.ndarray
    labels: np.ndarray | None = None
    body: BodyParams | None = None
    garments: GarmentVector | None = None
    id: str = ""

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        colors = np.asarray(self.colors, dtype=np.float64)
        normals = np.asarray(self.normals, dtype=np.float64)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "normals", normals)
        n = points.shape[0]
        if n == 0:
            raise ValidationError("scan has no points")
        for name, arr in (("points", points), ("colors", colors),
                          ("normals", normals)):
            if arr.shape != (n, 3):
                raise ValidationError(f"{name} must be ({n}, 3), got {arr.shape}")
        if not np.isfinite(points).all():
            raise ValidationError("positions must be finite")
        if colors.min(initial=0.0) < 0.0 or colors.max(initial=0.0) > 1.0:
            raise ValidationError("colors must lie in [0, 1]")
        norms = np.linalg.norm(normals, axis=1)
        if np.abs(norms - 1.0).max() > NORMAL_UNIT_TOL:
            worst = int(np.abs(norms - 1.0).argmax())
            raise ValidationError(
                f"normal {worst} has norm {norms[worst]:.6f}, expected unit")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            object.__setattr__(self, "labels", labels)
            if labels.shape != (n,):
                raise ValidationError(
                    f"labels must have length {n}, got {labels.shape}")
            if self.garments is None:
                raise ValidationError(
                    "labeled scan must carry a garment vector")
            bits = np.array(self.garments.bits)
            if labels.min() < 0 or labels.max() >= bits.size:
                raise ValidationError("labels out of taxonomy range")
            undeclared = np.unique(labels[bits[labels] == 0])
            if undeclared.size:
                raise ValidationError(
                    f"labels use classes absent from the garment vector: "
                    f"{undeclared.tolist()} (0-based)")

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    def features9(self) -> np.ndarray:
        """Per-point network input rows (position | color | normal)."""
        return np.concatenate([self.points, self.colors, self.normals], axis=1)

    def with_labels(self, labels: np.ndarray,
                    garments: GarmentVector | None = None) -> "ScanSample":
        return replace(self, labels=np.asarray(labels, dtype=np.int64),
                       garments=garments or self.garments)

    def with_points(self, points: np.ndarray) -> "ScanSample":
        return replace(self, points=points)

    def permuted(self, perm: np.ndarray) -> "ScanSample":
        labels = None if self.labels is None else self.labels[perm]
        return replace(self, points=self.points[perm], colors=self.colors[perm],
                       normals=self.normals[perm], labels=labels)


@dataclass(frozen=True)
class NormalizationRecord:
    """Translation applied by normalize(); apply/invert map points back."""

    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) + self.translation

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) - self.translation


def normalize(scan: ScanSample) -> tuple[ScanSample, NormalizationRecord]:
    """Translate so the centroid sits at the origin. No scaling."""
    centroid = scan.points.mean(axis=0)
    record = NormalizationRecord(translation=-centroid)
    return scan.with_points(scan.points - centroid), record


def validate_labels_against_garments(labels: np.ndarray,
                                     garments: GarmentVector,
                                     taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY
                                     ) -> None:
    """Raise unless every used label has its presence bit set."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= taxonomy.num_classes):
        raise ValidationError("labels out of taxonomy range")
    bits = np.array(garments.bits)
    bad = np.unique(labels[bits[labels] == 0])
    if bad.size:
        names = [taxonomy.classes[i] for i in bad]
        raise ValidationError(
            f"labels use classes absent from the garment vector: {names}")
