"""Bundled toy humanoid: a capsule-and-sphere body with a 9-joint skeleton.

Ships so tests and the synthetic generator need no licensed body model.
The same primitives back two views:

* ``build_toy_body`` — a coarse (default 64-vertex) BodyModel template for
  the canonical body encoder;
* ``sample_surface`` — dense surface samples with analytic normals, part
  ids, a 0..1 axis parameter per part (garment bands select on it), and
  per-point skinning weights so sampled points pose exactly like the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel

JOINT_NAMES = ("pelvis", "spine", "head_j", "l_shoulder", "r_shoulder",
               "l_hip", "r_hip", "l_knee", "r_knee")
PARENTS = np.array([-1, 0, 1, 1, 1, 0, 0, 5, 6], dtype=np.int64)
REST_JOINTS = np.array([
    [0.00, 0.95, 0.00],   # pelvis
    [0.00, 1.25, 0.00],   # spine
    [0.00, 1.48, 0.00],   # head
    [0.20, 1.40, 0.00],   # l_shoulder
    [-0.20, 1.40, 0.00],  # r_shoulder
    [0.10, 0.92, 0.00],   # l_hip
    [-0.10, 0.92, 0.00],  # r_hip
    [0.10, 0.52, 0.00],   # l_knee
    [-0.10, 0.52, 0.00],  # r_knee
])

PART_NAMES = ("torso", "head", "l_arm", "r_arm", "l_upper_leg", "r_upper_leg",
              "l_lower_leg", "r_lower_leg", "l_foot", "r_foot")

# (kind, a/center, b, radius, skin): skin is (joint,) for rigid parts or
# (joint_at_t0, joint_at_t1) for a linear blend along the axis.
_J = {name: i for i, name in enumerate(JOINT_NAMES)}
_PARTS = {
    "torso": ("cyl", (0.0, 0.95, 0.0), (0.0, 1.45, 0.0), 0.16,
              (_J["pelvis"], _J["spine"])),
    "head": ("sph", (0.0, 1.58, 0.0), None, 0.12, (_J["head_j"],)),
    "l_arm": ("cyl", (0.22, 1.40, 0.0), (0.46, 1.00, 0.04), 0.05,
              (_J["l_shoulder"],)),
    "r_arm": ("cyl", (-0.22, 1.40, 0.0), (-0.46, 1.00, 0.04), 0.05,
              (_J["r_shoulder"],)),
    "l_upper_leg": ("cyl", (0.10, 0.92, 0.0), (0.10, 0.52, 0.0), 0.075,
                    (_J["l_hip"],)),
    "r_upper_leg": ("cyl", (-0.10, 0.92, 0.0), (-0.10, 0.52, 0.0), 0.075,
                    (_J["r_hip"],)),
    "l_lower_leg": ("cyl", (0.10, 0.52, 0.0), (0.10, 0.10, 0.0), 0.055,
                    (_J["l_knee"],)),
    "r_lower_leg": ("cyl", (-0.10, 0.52, 0.0), (-0.10, 0.10, 0.0), 0.055,
                    (_J["r_knee"],)),
    "l_foot": ("cyl", (0.10, 0.055, 0.00), (0.10, 0.050, 0.17), 0.045,
               (_J["l_knee"],)),
    "r_foot": ("cyl", (-0.10, 0.055, 0.00), (-0.10, 0.050, 0.17), 0.045,
               (_J["r_knee"],)),
}


def _part_area(part) -> float:
    kind, a, b, radius, _ = part
    if kind == "sph":
        return 4.0 * np.pi * radius ** 2
    length = np.linalg.norm(np.subtract(b, a))
    return 2.0 * np.pi * radius * length


def _axis_frame(a, b):
    axis = np.subtract(b, a, dtype=np.float64)
    axis /= np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis @ helper) > 0.9:
        helper = np.array([0.0, 0.0, 1.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return axis, u, v


def _skin_weights(part, t: np.ndarray, num_joints: int) -> np.ndarray:
    weights = np.zeros((t.shape[0], num_joints))
    skin = part[4]
    if len(skin) == 1:
        weights[:, skin[0]] = 1.0
    else:
        weights[:, skin[0]] = 1.0 - t
        weights[:, skin[1]] = t
    return weights


def _make_points(part, t, phi):
    """Surface points + outward normals for axis params t and angle phi."""
    kind, a, b, radius, _ = part
    if kind == "sph":
        # phi = azimuth, t maps to polar height: t=0 bottom, t=1 top
        y = 2.0 * t - 1.0
        ring = np.sqrt(np.clip(1.0 - y ** 2, 0.0, None))
        normal = np.stack([ring * np.cos(phi), y, ring * np.sin(phi)], axis=1)
        return np.asarray(a) + radius * normal, normal
    axis, u, v = _axis_frame(a, b)
    normal = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
    base = np.asarray(a) + t[:, None] * (np.asarray(b) - np.asarray(a))
    return base + radius * normal, normal


@dataclass(frozen=True)
class SurfaceSample:
    """Rest-pose surface points with everything needed to pose and label."""

    points: np.ndarray    # (n, 3)
    normals: np.ndarray   # (n, 3) unit, outward
    part_ids: np.ndarray  # (n,) index into PART_NAMES
    t: np.ndarray         # (n,) axis parameter in [0, 1]
    weights: np.ndarray   # (n, J) skinning weights


def _allocate(total: int) -> dict[str, int]:
    areas = {name: _part_area(part) for name, part in _PARTS.items()}
    scale = total / sum(areas.values())
    counts = {name: max(2, int(round(area * scale)))
              for name, area in areas.items()}
    # trim/pad the largest part so counts sum exactly to total
    diff = total - sum(counts.values())
    counts["torso"] = max(2, counts["torso"] + diff)
    return counts


def sample_surface(n: int, rng: np.random.Generator) -> SurfaceSample:
    counts = _allocate(n)
    chunks = []
    for pid, name in enumerate(PART_NAMES):
        part = _PARTS[name]
        cnt = counts[name]
        t = rng.uniform(0.0, 1.0, size=cnt)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=cnt)
        pts, nrm = _make_points(part, t, phi)
        chunks.append((pts, nrm, np.full(cnt, pid, dtype=np.int64), t,
                       _skin_weights(part, t, len(JOINT_NAMES))))
    return SurfaceSample(*(np.concatenate(cols) for cols in zip(*chunks)))


def grid_surface(counts: dict[str, int]) -> SurfaceSample:
    """Deterministic low-discrepancy sampling, used for the model template."""
    golden = np.pi * (3.0 - np.sqrt(5.0))
    chunks = []
    for pid, name in enumerate(PART_NAMES):
        part = _PARTS[name]
        cnt = counts[name]
        i = np.arange(cnt, dtype=np.float64)
        t = (i + 0.5) / cnt
        phi = np.mod(i * golden, 2.0 * np.pi)
        pts, nrm = _make_points(part, t, phi)
        chunks.append((pts, nrm, np.full(cnt, pid, dtype=np.int64), t,
                       _skin_weights(part, t, len(JOINT_NAMES))))
    return SurfaceSample(*(np.concatenate(cols) for cols in zip(*chunks)))


def build_toy_body(vertex_count: int = 64) -> tuple[BodyModel, np.ndarray]:
    """Toy BodyModel plus the part id of every template vertex."""
    counts = _allocate(vertex_count)
    surface = grid_surface(counts)
    template = surface.points
    # shape modes: 0 = overall scale about the ground, 1 = widen torso in x/z
    scale_dir = 0.1 * template
    widen_dir = 0.1 * template * np.array([1.0, 0.0, 1.0])
    shapedirs = np.stack([scale_dir, widen_dir], axis=2)
    joint_scale = 0.1 * REST_JOINTS
    joint_widen = 0.1 * REST_JOINTS * np.array([1.0, 0.0, 1.0])
    joint_shapedirs = np.stack([joint_scale, joint_widen], axis=2)
    model = BodyModel(template=template, weights=surface.weights,
                      parents=PARENTS, rest_joints=REST_JOINTS,
                      shapedirs=shapedirs, joint_shapedirs=joint_shapedirs,
                      name=f"toy-humanoid-{vertex_count}")
    return model, surface.part_ids


def random_pose(rng: np.random.Generator, magnitude: float = 0.25) -> np.ndarray:
    """Small random axis-angle pose; limbs move, root stays near upright."""
    pose = rng.uniform(-magnitude, magnitude, size=(len(JOINT_NAMES), 3))
    pose[0] *= 0.2   # pelvis: keep the body roughly upright
    pose[1] *= 0.4   # spine
    return pose.ravel()
