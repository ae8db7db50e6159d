"""Parametric body abstraction and the canonical body encoder.

The body model is a template mesh posed by linear blend skinning over an
axis-angle pose and low-dimensional shape coefficients. The canonical body
encoder maps every scan point to the *template-space* coordinates of its
nearest posed vertex, injecting body-part semantics into the network input.

A 64-vertex toy humanoid ships with the package so nothing here depends on
a licensed body model; ``load_body_model`` also accepts a real SMPL-style
npz export (v_template, weights, kintree_table, J_regressor, shapedirs).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GarmsegError, ValidationError
from .scan import BodyParams, ScanSample

_NN_CHUNK = 512


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (J,3) to rotation matrices (J,3,3)."""
    aa = np.asarray(axis_angle, dtype=np.float64).reshape(-1, 3)
    theta = np.linalg.norm(aa, axis=1)
    out = np.tile(np.eye(3), (aa.shape[0], 1, 1))
    nz = theta > 1e-12
    if not nz.any():
        return out
    axis = aa[nz] / theta[nz, None]
    x, y, z = axis.T
    zero = np.zeros_like(x)
    k = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=1).reshape(-1, 3, 3)
    s = np.sin(theta[nz])[:, None, None]
    c = np.cos(theta[nz])[:, None, None]
    out[nz] = np.eye(3) + s * k + (1.0 - c) * (k @ k)
    return out


def _rigid(rot: np.ndarray, trans: np.ndarray) -> np.ndarray:
    t = np.eye(4)
    t[:3, :3] = rot
    t[:3, 3] = trans
    return t


def joint_transforms(pose: np.ndarray, rest_joints: np.ndarray,
                     parents: np.ndarray) -> np.ndarray:
    """Skinning transforms (J,4,4): world pose with rest positions removed."""
    pose = np.asarray(pose, dtype=np.float64).reshape(-1, 3)
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    num_joints = rest_joints.shape[0]
    rots = rodrigues(pose)
    world = np.empty((num_joints, 4, 4))
    for j in range(num_joints):
        parent = int(parents[j])
        if parent < 0:
            world[j] = _rigid(rots[j], rest_joints[j])
        else:
            local = _rigid(rots[j], rest_joints[j] - rest_joints[parent])
            world[j] = world[parent] @ local
    skin = world.copy()
    # bake in -rest_joint so the rest pose maps to itself
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], rest_joints)
    return skin


def apply_lbs(points: np.ndarray, weights: np.ndarray,
              transforms: np.ndarray) -> np.ndarray:
    """Blend per-joint rigid transforms and apply to points."""
    blended = np.einsum("nj,jab->nab", weights, transforms)
    return (np.einsum("nab,nb->na", blended[:, :3, :3], points)
            + blended[:, :3, 3])


def blend_rotations(weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Blended linear part (n,3,3); used to carry normals along with LBS."""
    return np.einsum("nj,jab->nab", weights, transforms[:, :3, :3])


@dataclass(frozen=True)
class BodyModel:
    """Template mesh plus everything needed to pose it by LBS."""

    template: np.ndarray       # (V, 3)
    weights: np.ndarray        # (V, J), rows sum to 1
    parents: np.ndarray        # (J,), parents[0] == -1, topological order
    rest_joints: np.ndarray    # (J, 3)
    shapedirs: np.ndarray | None = None        # (V, 3, S)
    joint_shapedirs: np.ndarray | None = None  # (J, 3, S)
    name: str = "body"

    def __post_init__(self):
        for attr in ("template", "weights", "parents", "rest_joints"):
            object.__setattr__(self, attr,
                               np.asarray(getattr(self, attr)))
        if not np.isfinite(self.template).all():
            raise ValidationError("template vertices must be finite")
        row_sums = self.weights.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-6:
            raise ValidationError("skinning weights must sum to 1 per vertex")
        if int(self.parents[0]) != -1:
            raise ValidationError("joint 0 must be the root (parent -1)")
        if (self.parents[1:] >= np.arange(1, self.parents.size)).any():
            raise ValidationError("parents must precede children")

    @property
    def num_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def num_joints(self) -> int:
        return self.rest_joints.shape[0]

    @property
    def num_shape_coeffs(self) -> int:
        return 0 if self.shapedirs is None else self.shapedirs.shape[2]

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.template, self.weights, self.parents, self.rest_joints):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def check_params(self, params: BodyParams) -> None:
        if params.pose.size != self.num_joints * 3:
            raise ValidationError(
                f"pose has {params.pose.size} values, model needs "
                f"{self.num_joints * 3}")
        if params.shape.size not in (0, self.num_shape_coeffs):
            raise ValidationError(
                f"shape has {params.shape.size} coefficients, model needs "
                f"{self.num_shape_coeffs}")


def shaped_template(model: BodyModel, params: BodyParams
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(template + shape offsets, rest joints + shape offsets)."""
    verts = model.template.astype(np.float64).copy()
    joints = model.rest_joints.astype(np.float64).copy()
    if params.shape.size and model.shapedirs is not None:
        verts += np.einsum("vcs,s->vc", model.shapedirs, params.shape)
        if model.joint_shapedirs is not None:
            joints += np.einsum("jcs,s->jc", model.joint_shapedirs, params.shape)
    return verts, joints


def pose_body(model: BodyModel, params: BodyParams) -> np.ndarray:
    """Posed vertex positions (V,3) by linear blend skinning."""
    model.check_params(params)
    verts, joints = shaped_template(model, params)
    transforms = joint_transforms(params.pose, joints, model.parents)
    return apply_lbs(verts, model.weights, transforms)


@dataclass(frozen=True)
class BodyFeatureField:
    """Per scan point: template coordinates of its nearest posed vertex."""

    template_coords: np.ndarray  # (n, 3)
    vertex_indices: np.ndarray   # (n,)


def nearest_vertices(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Exhaustive exact nearest neighbor; ties resolve to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    out = np.empty(points.shape[0], dtype=np.int64)
    for start in range(0, points.shape[0], _NN_CHUNK):
        stop = min(start + _NN_CHUNK, points.shape[0])
        diff = points[start:stop, None, :] - verts[None, :, :]
        d2 = np.einsum("nvc,nvc->nv", diff, diff)
        out[start:stop] = d2.argmin(axis=1)  # argmin keeps the first minimum
    return out


def encode_body(scan: ScanSample, model: BodyModel,
                cache_dir=None) -> BodyFeatureField:
    """Canonical body feature for every scan point.

    The scan must already sit in the same frame as the posed body (the fit
    shipped with the scan defines that frame). Results are cached per
    (scan id, body params, model) when a cache directory is given.
    """
    if scan.num_points == 0:
        raise ValidationError("cannot encode an empty scan")
    if scan.body is None:
        raise ValidationError(
            "scan has no body parameters; run the body-fit preprocessing "
            "step or supply them in the labels JSON")
    cache_path = None
    if cache_dir is not None and scan.id:
        digest = hashlib.sha256(
            scan.body.content_key() + model.content_hash().encode()
        ).hexdigest()[:16]
        cache_path = Path(cache_dir) / f"{scan.id}.{digest}.bodyfeat"
        if cache_path.exists():
            with np.load(cache_path) as cached:
                return BodyFeatureField(cached["coords"], cached["indices"])
    posed = pose_body(model, scan.body)
    idx = nearest_vertices(scan.points, posed)
    field = BodyFeatureField(
        template_coords=model.template[idx].astype(np.float64),
        vertex_indices=idx)
    if cache_path is not None:
        tmp = cache_path.with_name(cache_path.name + f".tmp{os.getpid()}")
        with open(tmp, "wb") as fh:
            np.savez(fh, coords=field.template_coords, indices=idx)
        os.replace(tmp, cache_path)  # atomic under concurrent writers
    return field


def encode_body_hybrid(scan: ScanSample, model: BodyModel) -> BodyFeatureField:
    """Coarse-part hybrid body encoding. Interface stub, not implemented."""
    raise GarmsegError(
        "hybrid body encoder is not available in this build; "
        "use body_encoder='canonical' or 'none'")


# ---------------------------------------------------------------------------
# model container I/O

def body_model_to_doc(model: BodyModel) -> dict:
    return {
        "schema": 1,
        "name": model.name,
        "template": model.template.tolist(),
        "weights": model.weights.tolist(),
        "parents": model.parents.tolist(),
        "rest_joints": model.rest_joints.tolist(),
        "shapedirs": None if model.shapedirs is None else model.shapedirs.tolist(),
        "joint_shapedirs": (None if model.joint_shapedirs is None
                            else model.joint_shapedirs.tolist()),
    }


def body_model_from_doc(doc: dict) -> BodyModel:
    if doc.get("schema") != 1:
        raise ValidationError(f"body model schema {doc.get('schema')!r} unsupported")
    opt = {k: (None if doc.get(k) is None else np.asarray(doc[k], dtype=np.float64))
           for k in ("shapedirs", "joint_shapedirs")}
    return BodyModel(template=np.asarray(doc["template"], dtype=np.float64),
                     weights=np.asarray(doc["weights"], dtype=np.float64),
                     parents=np.asarray(doc["parents"], dtype=np.int64),
                     rest_joints=np.asarray(doc["rest_joints"], dtype=np.float64),
                     name=doc.get("name", "body"), **opt)


def save_body_model(model: BodyModel, path) -> None:
    Path(path).write_text(json.dumps(body_model_to_doc(model)))


def load_body_model(path) -> BodyModel:
    """Load the JSON container, or a real SMPL-style npz export."""
    path = Path(path)
    if path.suffix == ".npz":
        raw = np.load(path)
        regressor = np.asarray(raw["J_regressor"], dtype=np.float64)
        template = np.asarray(raw["v_template"], dtype=np.float64)
        parents = np.asarray(raw["kintree_table"], dtype=np.int64)
        if parents.ndim == 2:  # SMPL stores a 2 x J table, row 0 = parents
            parents = parents[0].copy()
            parents[0] = -1
        shapedirs = raw["shapedirs"] if "shapedirs" in raw else None
        joint_sd = None
        if shapedirs is not None:
            shapedirs = np.asarray(shapedirs, dtype=np.float64)
            joint_sd = np.einsum("jv,vcs->jcs", regressor, shapedirs)
        return BodyModel(template=template,
                         weights=np.asarray(raw["weights"], dtype=np.float64),
                         parents=parents,
                         rest_joints=regressor @ template,
                         shapedirs=shapedirs, joint_shapedirs=joint_sd,
                         name=path.stem)
    doc = json.loads(path.read_text())
    doc.setdefault("name", path.stem)
    return body_model_from_doc(doc)
