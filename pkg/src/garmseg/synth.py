"""Procedural generator of labeled clothed-body scans.

Scans are built from the toy humanoid surface: garments either relabel a
band of the base surface ("cover" garments like shoes and hair) or add an
offset shell of points over it ("shell" garments like shirts and pants), so
the generator itself is the labeling oracle. Everything is deterministic
under the seed.

Two probe constructions mirror known failure modes of context-free
segmenters: multi-layer outfits (an outer shell over an inner one) and
two-tone colored garments whose label must not split at the color boundary.
T-shirt and Shirt intentionally share identical geometry; only the declared
garment set can tell them apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import toybody
from .body import apply_lbs, blend_rotations, joint_transforms
from .errors import ValidationError
from .scan import BodyParams, ScanSample
from .scan_io import save_scan
from .taxonomy import DEFAULT_TAXONOMY, GarmentVector, LabelTaxonomy

COLOR_SCHEMES = ("solid", "striped", "two_tone")

# bands: (part name, t_lo, t_hi); mode "shell" copies the band outward by
# `offset`, mode "cover" relabels the base surface in place.
_B = {
    "upper_full": [("torso", 0.0, 1.0)],
    "sleeves_short": [("l_arm", 0.0, 0.45), ("r_arm", 0.0, 0.45)],
    "sleeves_long": [("l_arm", 0.0, 0.95), ("r_arm", 0.0, 0.95)],
    "legs_full": [("l_upper_leg", 0.0, 1.0), ("r_upper_leg", 0.0, 1.0),
                  ("l_lower_leg", 0.0, 0.85), ("r_lower_leg", 0.0, 0.85)],
    "legs_short": [("l_upper_leg", 0.0, 0.6), ("r_upper_leg", 0.0, 0.6)],
}

GARMENT_TEMPLATES = {
    # T-shirt and Shirt are the designed ambiguous pair: identical bands.
    "T-shirt": ("shell", _B["upper_full"] + _B["sleeves_short"], 0.025),
    "Shirt": ("shell", _B["upper_full"] + _B["sleeves_short"], 0.025),
    "Vest": ("shell", _B["upper_full"], 0.025),
    "Coat": ("shell", _B["upper_full"] + _B["sleeves_long"]
             + [("l_upper_leg", 0.0, 0.35), ("r_upper_leg", 0.0, 0.35)], 0.04),
    "Jacket": ("shell", _B["upper_full"]
               + [("l_arm", 0.0, 0.7), ("r_arm", 0.0, 0.7)], 0.05),
    "Hoodies": ("shell", _B["upper_full"] + _B["sleeves_long"]
                + [("head", 0.0, 0.3)], 0.03),
    "Short-Pants": ("shell", _B["legs_short"], 0.02),
    "Pants": ("shell", _B["legs_full"], 0.02),
    "Skirts": ("shell", [("torso", 0.0, 0.12),
                         ("l_upper_leg", 0.0, 0.75),
                         ("r_upper_leg", 0.0, 0.75)], 0.05),
    "Dress": ("shell", _B["upper_full"]
              + [("l_upper_leg", 0.0, 1.0), ("r_upper_leg", 0.0, 1.0),
                 ("l_lower_leg", 0.0, 0.3), ("r_lower_leg", 0.0, 0.3)], 0.045),
    "Jumpsuit": ("shell", _B["upper_full"]
                 + [("l_arm", 0.0, 0.5), ("r_arm", 0.0, 0.5)]
                 + _B["legs_full"], 0.025),
    "Swimsuit": ("cover", [("torso", 0.0, 0.6)], 0.0),
    "Undergarment": ("cover", [("torso", 0.0, 0.3)], 0.0),
    "Scarf": ("shell", [("torso", 0.85, 1.0), ("head", 0.0, 0.15)], 0.03),
    "Hat": ("cover", [("head", 0.7, 1.0)], 0.0),
    "Shoes": ("cover", [("l_foot", 0.0, 1.0), ("r_foot", 0.0, 1.0),
                        ("l_lower_leg", 0.0, 0.1), ("r_lower_leg", 0.0, 0.1)],
              0.0),
    "Hair": ("cover", [("head", 0.5, 1.0)], 0.0),
}

# covers applied in this order; later entries win on overlap (hat over hair)
_COVER_ORDER = ("Undergarment", "Swimsuit", "Shoes", "Hair", "Hat")

_SKIN_COLOR = np.array([0.85, 0.68, 0.55])
_HAIR_COLOR = np.array([0.22, 0.15, 0.10])


@dataclass(frozen=True)
class GarmentSpec:
    """One garment in a recipe: class name, color scheme, optional fixed
    color (overrides the palette draw; handy for texture-bias probes)."""

    cls: str
    scheme: str = "solid"
    color: tuple | None = None

    def __post_init__(self):
        if self.cls not in GARMENT_TEMPLATES and self.cls != "Body":
            raise ValidationError(f"no garment template for {self.cls!r}")
        if self.scheme not in COLOR_SCHEMES:
            raise ValidationError(f"color scheme must be one of {COLOR_SCHEMES}")
        if self.color is not None and len(self.color) != 3:
            raise ValidationError("color override must be an RGB triple")


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_points: int = 900
    garments: tuple[GarmentSpec, ...] = ()
    pose: np.ndarray | None = None
    color_noise: float = 0.02

    def __post_init__(self):
        if self.n_points < 50:
            raise ValidationError("n_points must be at least 50")
        if not self.garments:
            raise ValidationError("recipe is empty")
        specs = tuple(GarmentSpec(g, "solid") if isinstance(g, str) else g
                      for g in self.garments)
        names = [g.cls for g in specs]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate garment classes in recipe: {names}")
        if "Body" not in names:
            specs = (GarmentSpec("Body"),) + specs
        if "Dress" in names and "Jumpsuit" in names:
            raise ValidationError("recipe cannot wear Dress and Jumpsuit together")
        object.__setattr__(self, "garments", specs)


def _in_bands(surface: toybody.SurfaceSample, bands) -> np.ndarray:
    mask = np.zeros(surface.points.shape[0], dtype=bool)
    for part, lo, hi in bands:
        pid = toybody.PART_NAMES.index(part)
        mask |= (surface.part_ids == pid) & (surface.t >= lo) & (surface.t <= hi)
    return mask


# garments draw from one shared fabric palette: the same color can appear on
# any class, so color alone never identifies a garment class
_FABRIC_PALETTE = np.array([
    [0.85, 0.10, 0.10], [0.10, 0.35, 0.80], [0.10, 0.60, 0.20],
    [0.95, 0.80, 0.15], [0.55, 0.15, 0.60], [0.95, 0.95, 0.95],
    [0.15, 0.15, 0.15], [0.95, 0.55, 0.10], [0.45, 0.30, 0.15],
    [0.65, 0.75, 0.85],
])


def _garment_color(rng: np.random.Generator) -> np.ndarray:
    base = _FABRIC_PALETTE[rng.integers(len(_FABRIC_PALETTE))]
    return np.clip(base + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)


def _apply_scheme(points: np.ndarray, scheme: str,
                  rng: np.random.Generator,
                  override: tuple | None = None) -> np.ndarray:
    base = np.asarray(override, dtype=np.float64) if override is not None \
        else _garment_color(rng)
    colors = np.tile(base, (points.shape[0], 1))
    if scheme == "solid":
        return colors
    second = _garment_color(rng)
    if scheme == "striped":
        stripe = np.floor(points[:, 1] / 0.05).astype(np.int64) % 2 == 1
        colors[stripe] = second
    else:  # two_tone: split across the left/right midline
        colors[points[:, 0] > np.median(points[:, 0])] = second
    return colors


def generate(config: SynthConfig,
             taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> ScanSample:
    """One labeled scan; the generating band of every point is its label."""
    rng = np.random.default_rng(config.seed)
    surface = toybody.sample_surface(config.n_points, rng)
    body_idx = taxonomy.index("Body")

    specs = {g.cls: g for g in config.garments}
    labels = np.full(surface.points.shape[0], body_idx, dtype=np.int64)
    points = surface.points.copy()
    normals = surface.normals.copy()
    colors = np.tile(_SKIN_COLOR, (points.shape[0], 1))
    weights = surface.weights.copy()

    # covers: relabel base-surface bands in canonical order
    for cls in _COVER_ORDER:
        if cls not in specs:
            continue
        _, bands, _ = GARMENT_TEMPLATES[cls]
        mask = _in_bands(surface, bands)
        labels[mask] = taxonomy.index(cls)
        if cls == "Hair" and specs[cls].color is None:
            colors[mask] = _HAIR_COLOR
        else:
            colors[mask] = _apply_scheme(points[mask], specs[cls].scheme, rng,
                                         specs[cls].color)

    # shells: duplicate band points pushed outward along their normals
    for spec in config.garments:
        mode, bands, offset = GARMENT_TEMPLATES.get(spec.cls, ("cover", [], 0.0))
        if spec.cls == "Body" or mode != "shell":
            continue
        mask = _in_bands(surface, bands)
        if not mask.any():
            continue
        shell_pts = surface.points[mask] + offset * surface.normals[mask]
        points = np.concatenate([points, shell_pts])
        normals = np.concatenate([normals, surface.normals[mask]])
        labels = np.concatenate([labels, np.full(mask.sum(),
                                                 taxonomy.index(spec.cls))])
        colors = np.concatenate(
            [colors, _apply_scheme(shell_pts, spec.scheme, rng, spec.color)])
        weights = np.concatenate([weights, surface.weights[mask]])

    if config.color_noise > 0:
        colors = np.clip(
            colors + rng.normal(0.0, config.color_noise, colors.shape), 0.0, 1.0)

    pose = (np.asarray(config.pose, dtype=np.float64) if config.pose is not None
            else toybody.random_pose(rng))
    params = BodyParams(pose=pose, shape=np.zeros(2))
    transforms = joint_transforms(params.pose, toybody.REST_JOINTS,
                                  toybody.PARENTS)
    points = apply_lbs(points, weights, transforms)
    rot = blend_rotations(weights, transforms)
    normals = np.einsum("nab,nb->na", rot, normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    bits = [0] * taxonomy.num_classes
    for spec in config.garments:
        bits[taxonomy.index(spec.cls)] = 1
    return ScanSample(points=points, colors=colors, normals=normals,
                      labels=labels, body=params,
                      garments=GarmentVector(tuple(bits)),
                      id=f"synth-{config.seed:08d}")


# ---------------------------------------------------------------------------
# suite generation

MANIFEST_SCHEMA = 1

_BASE_CLASSES = ("Body", "Hair", "Shoes")
_UPPER_POOL = ("T-shirt", "Shirt", "Hoodies", "Vest", "Coat")
_LOWER_POOL = ("Pants", "Short-Pants", "Skirts")


def _recipe_for(i: int, coverage: list[str], rng: np.random.Generator,
                probe: str | None) -> tuple[GarmentSpec, ...]:
    upper = [c for c in coverage if c in _UPPER_POOL] or list(_UPPER_POOL[:2])
    lower = [c for c in coverage if c in _LOWER_POOL] or [_LOWER_POOL[0]]
    onesies = [c for c in coverage if c in ("Dress", "Jumpsuit")]
    extras = [c for c in coverage
              if c not in upper + lower + onesies + list(_BASE_CLASSES)]
    specs = [GarmentSpec(c) for c in _BASE_CLASSES]
    if probe == "two_tone":
        specs.append(GarmentSpec(upper[i % len(upper)], scheme="two_tone"))
        specs.append(GarmentSpec(lower[i % len(lower)]))
    elif probe == "multi_layer":
        inner = upper[i % len(upper)]
        specs.append(GarmentSpec(inner))
        specs.append(GarmentSpec("Jacket"))
        specs.append(GarmentSpec(lower[i % len(lower)]))
    elif onesies and i % 4 == 3:
        specs.append(GarmentSpec(onesies[i % len(onesies)]))
    else:
        scheme = "striped" if i % 5 == 2 else "solid"
        specs.append(GarmentSpec(upper[i % len(upper)], scheme=scheme))
        specs.append(GarmentSpec(lower[(i // len(upper)) % len(lower)]))
        if extras and i % 3 == 0:
            specs.append(GarmentSpec(extras[i % len(extras)]))
    names = {s.cls for s in specs}
    if "Jacket" in [c for c in coverage] and probe is None and i % 6 == 5:
        if "Dress" not in names and "Jumpsuit" not in names:
            specs.append(GarmentSpec("Jacket"))
    # drop accidental duplicates, keep first occurrence
    seen, unique = set(), []
    for s in specs:
        if s.cls not in seen:
            unique.append(s)
            seen.add(s.cls)
    return tuple(unique)


def generate_suite(n_train: int, n_val: int, n_test: int,
                   class_coverage, out_dir, master_seed: int = 0,
                   n_points: int = 900,
                   taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> dict:
    """Write a train/val/test suite to disk and return its manifest.

    Every class in ``class_coverage`` appears in at least one training scan;
    each split contains a two-tone texture probe and a multi-layer probe
    (train/test always, val when it has room). Seeds are disjoint per scan.
    """
    if min(n_train, n_val, n_test) < 1:
        raise ValidationError("all split sizes must be positive")
    coverage = [taxonomy.classes[taxonomy.index(c)] for c in class_coverage]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(master_seed)
    manifest = {"schema": MANIFEST_SCHEMA, "master_seed": master_seed,
                "splits": {}}
    counter = 0
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        entries = []
        for i in range(count):
            probe = None
            if i == 0 and (count >= 3 or split != "val"):
                probe = "two_tone"
            elif i == 1 and (count >= 3 or split != "val"):
                probe = "multi_layer"
            recipe = _recipe_for(i, coverage, rng, probe)
            seed = master_seed * 1_000_003 + counter
            counter += 1
            config = SynthConfig(seed=seed, n_points=n_points, garments=recipe)
            scan = generate(config, taxonomy)
            ply = out_dir / f"{scan.id}.ply"
            lbl = out_dir / f"{scan.id}.labels.json"
            save_scan(scan, ply, lbl)
            entries.append({
                "id": scan.id, "ply": ply.name, "labels": lbl.name,
                "probe": probe,
                "recipe": [{"cls": s.cls, "scheme": s.scheme} for s in recipe],
            })
        manifest["splits"][split] = entries
    trained = {r["cls"] for e in manifest["splits"]["train"] for r in e["recipe"]}
    missing = [c for c in coverage if c not in trained]
    if missing:
        raise ValidationError(
            f"coverage impossible: classes {missing} never appear in train "
            f"with {n_train} scans; raise n_train or shrink coverage")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_suite(manifest_path) -> dict[str, list[ScanSample]]:
    """Load every split of a generated suite back into memory."""
    from .scan_io import load_scan
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValidationError(
            f"manifest schema {manifest.get('schema')!r} unsupported")
    root = manifest_path.parent
    return {split: [load_scan(root / e["ply"], root / e["labels"])
                    for e in entries]
            for split, entries in manifest["splits"].items()}
