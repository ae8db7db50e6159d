"""Canonical garment label taxonomy.

Eighteen fine-grained classes with a fixed order, a display palette, and a
coarse 3-class merge map (upper / lower / body) used when comparing against
3-class segmenters. Class ids are 1-based in files and on the wire, 0-based
internally; converters live here so no other module hand-rolls the shift.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CLASS_NAMES = (
    "T-shirt", "Shirt", "Vest", "Coat", "Jacket", "Hoodies",
    "Short-Pants", "Pants", "Skirts", "Dress", "Jumpsuit", "Swimsuit",
    "Undergarment", "Scarf", "Hat", "Shoes", "Body", "Hair",
)
NUM_CLASSES = len(CLASS_NAMES)

COARSE_NAMES = ("upper", "lower", "body")

# Dress/Jumpsuit sit with the upper garments: they cover the torso first and
# 3-class baselines group them there. Override via a merge-map file if needed.
_DEFAULT_MERGE3 = {
    "T-shirt": "upper", "Shirt": "upper", "Vest": "upper", "Coat": "upper",
    "Jacket": "upper", "Hoodies": "upper", "Dress": "upper",
    "Jumpsuit": "upper", "Swimsuit": "upper", "Scarf": "upper",
    "Short-Pants": "lower", "Pants": "lower", "Skirts": "lower",
    "Body": "body", "Hair": "body", "Hat": "body", "Shoes": "body",
    "Undergarment": "body",
}

_DEFAULT_PALETTE = {
    "T-shirt": (230, 25, 75), "Shirt": (60, 180, 75), "Vest": (255, 225, 25),
    "Coat": (0, 130, 200), "Jacket": (245, 130, 48), "Hoodies": (145, 30, 180),
    "Short-Pants": (70, 240, 240), "Pants": (240, 50, 230),
    "Skirts": (210, 245, 60), "Dress": (250, 190, 212),
    "Jumpsuit": (0, 128, 128), "Swimsuit": (220, 190, 255),
    "Undergarment": (170, 110, 40), "Scarf": (255, 250, 200),
    "Hat": (128, 0, 0), "Shoes": (170, 255, 195), "Body": (255, 216, 177),
    "Hair": (64, 48, 32),
}


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered class list plus palette and coarse merge map."""

    classes: tuple[str, ...] = CLASS_NAMES
    palette: dict[str, tuple[int, int, int]] = field(
        default_factory=lambda: dict(_DEFAULT_PALETTE))
    merge3: dict[str, str] = field(default_factory=lambda: dict(_DEFAULT_MERGE3))

    def __post_init__(self):
        if len(self.classes) != NUM_CLASSES:
            raise ValidationError(
                f"taxonomy must have exactly {NUM_CLASSES} classes, "
                f"got {len(self.classes)}")
        missing = [c for c in self.classes if c not in self.merge3]
        if missing:
            raise ValidationError(f"merge3 map misses classes: {missing}")
        bad = {c: m for c, m in self.merge3.items() if m not in COARSE_NAMES}
        if bad:
            raise ValidationError(f"merge3 targets must be in {COARSE_NAMES}: {bad}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        """0-based index of a class name; tolerant of case and punctuation."""
        try:
            return self.classes.index(name)
        except ValueError:
            pass
        folded = _fold(name)
        for i, cls in enumerate(self.classes):
            if _fold(cls) == folded:
                return i
        raise ValidationError(f"unknown class name {name!r}")

    def content_hash(self) -> str:
        """Stable hash of the class list; checkpoints refuse a mismatch."""
        payload = json.dumps(list(self.classes)).encode()
        return hashlib.sha256(payload).hexdigest()

    def merge3_codes(self) -> np.ndarray:
        """Per-class coarse code (index into COARSE_NAMES), 0-based order."""
        return np.array(
            [COARSE_NAMES.index(self.merge3[c]) for c in self.classes],
            dtype=np.int64)

    def palette_array(self) -> np.ndarray:
        return np.array([self.palette[c] for c in self.classes], dtype=np.uint8)

    def with_merge3_from_file(self, path) -> "LabelTaxonomy":
        with open(path) as fh:
            raw = json.load(fh)
        merge = dict(self.merge3)
        for name, coarse in raw.items():
            merge[self.classes[self.index(name)]] = coarse
        return LabelTaxonomy(self.classes, dict(self.palette), merge)


def _fold(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


DEFAULT_TAXONOMY = LabelTaxonomy()


@dataclass(frozen=True)
class GarmentVector:
    """Presence bit per taxonomy class, aligned with the class order."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) != NUM_CLASSES:
            raise ValidationError(
                f"garment vector must have {NUM_CLASSES} bits, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise ValidationError("garment vector entries must be 0 or 1")
        if not any(self.bits):
            raise ValidationError("garment vector must declare at least one class")

    @classmethod
    def from_names(cls, names, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY
                   ) -> "GarmentVector":
        bits = [0] * taxonomy.num_classes
        for name in names:
            bits[taxonomy.index(name)] = 1
        return cls(tuple(bits))

    @classmethod
    def from_bitmask(cls, mask: str) -> "GarmentVector":
        if len(mask) != NUM_CLASSES or set(mask) - {"0", "1"}:
            raise ValidationError(
                f"bitmask must be {NUM_CLASSES} characters of 0/1, got {mask!r}")
        return cls(tuple(int(ch) for ch in mask))

    def asarray(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.float64)

    def present_indices(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.bits))

    def names(self, taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> list[str]:
        return [taxonomy.classes[i] for i in self.present_indices()]


def merge_to_3class(labels: np.ndarray,
                    taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> np.ndarray:
    """Map 0-based fine labels to coarse codes 0=upper, 1=lower, 2=body."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= taxonomy.num_classes):
        raise ValidationError("labels out of range for taxonomy")
    return taxonomy.merge3_codes()[labels]


def labels_to_file_ids(labels: np.ndarray) -> np.ndarray:
    """Internal 0-based labels -> 1-based ids used in files and on the wire."""
    return np.asarray(labels, dtype=np.int64) + 1


def labels_from_file_ids(ids, num_classes: int = NUM_CLASSES) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 1 or ids.max() > num_classes):
        bad = ids[(ids < 1) | (ids > num_classes)][0]
        raise ValidationError(
            f"label id {bad} outside 1..{num_classes}")
    return ids - 1
