"""Scan file I/O.

Point clouds travel as PLY (ascii or binary little-endian) with per-vertex
x,y,z and optional nx,ny,nz / red,green,blue. Labels and scan metadata live
in a JSON sidecar (versioned ``"schema": 1``) so unlabeled scans stay
first-class:

    {"schema": 1, "id": "...", "labels": [1-based ids] or null,
     "garments": [18 bits] or null, "body": {"pose": [...], "shape": [...]}}

Positions and normals are written as doubles so a save/load round trip is
bit-exact; colors are bytes on disk and floats in [0,1] in memory.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ScanParseError, ValidationError
from .scan import BodyParams, ScanSample
from .taxonomy import (GarmentVector, NUM_CLASSES, labels_from_file_ids,
                       labels_to_file_ids)

LABELS_SCHEMA = 1

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(data: bytes):
    """Returns (format, elements, body_offset). Elements keep property order."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ScanParseError("not a PLY file (missing ply/end_header)", 0)
    newline = data.find(b"\n", end)
    if newline < 0:
        raise ScanParseError("header not terminated by newline", end)
    body_offset = newline + 1
    fmt = None
    elements = []  # [name, count, [(prop_name, dtype_or_list), ...]]
    offset = 0
    for raw_line in data[:end].split(b"\n"):
        line = raw_line.strip().decode("ascii", errors="replace")
        tokens = line.split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            offset += len(raw_line) + 1
            continue
        if tokens[0] == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise ScanParseError(f"unsupported format {tokens[1]!r}", offset)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ScanParseError(f"bad element line {line!r}", offset)
            elements.append([tokens[1], int(tokens[2]), []])
        elif tokens[0] == "property":
            if not elements:
                raise ScanParseError("property before any element", offset)
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise ScanParseError(f"bad list property {line!r}", offset)
                elements[-1][2].append((tokens[4], ("list", tokens[2], tokens[3])))
            else:
                if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                    raise ScanParseError(f"bad property line {line!r}", offset)
                elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        else:
            raise ScanParseError(f"unknown header keyword {tokens[0]!r}", offset)
        offset += len(raw_line) + 1
    if fmt is None:
        raise ScanParseError("header misses a format line", 0)
    return fmt, elements, body_offset


def _read_vertex_block(data, offset, fmt, count, props):
    if any(isinstance(d, tuple) for _, d in props):
        raise ScanParseError("list properties on vertices are unsupported", offset)
    names = [p for p, _ in props]
    if fmt == "binary_little_endian":
        dtype = np.dtype([(p, "<" + d) for p, d in props])
        end = offset + dtype.itemsize * count
        if end > len(data):
            raise ScanParseError(
                f"vertex block truncated: need {dtype.itemsize * count} bytes",
                len(data))
        rows = np.frombuffer(data[offset:end], dtype=dtype)
        return {p: rows[p] for p in names}, end
    # ascii: one vertex per line
    values = np.empty((count, len(props)), dtype=np.float64)
    pos = offset
    for i in range(count):
        nl = data.find(b"\n", pos)
        line = data[pos:] if nl < 0 else data[pos:nl]
        tokens = line.split()
        if len(tokens) != len(props):
            raise ScanParseError(
                f"vertex {i}: expected {len(props)} values, got {len(tokens)}",
                pos)
        try:
            values[i] = [float(t) for t in tokens]
        except ValueError:
            raise ScanParseError(f"vertex {i}: non-numeric value", pos) from None
        pos = len(data) if nl < 0 else nl + 1
    return {p: values[:, j] for j, (p, _) in enumerate(props)}, pos


def _skip_block(data, offset, fmt, count, props):
    if fmt == "ascii":
        pos = offset
        for _ in range(count):
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        return pos
    if not any(isinstance(d, tuple) for _, d in props):
        stride = sum(np.dtype(d).itemsize for _, d in props)
        return offset + stride * count
    pos = offset
    for _ in range(count):
        for _, d in props:
            if isinstance(d, tuple):
                _, count_t, item_t = d
                csize = np.dtype(_PLY_TYPES[count_t]).itemsize
                n_items = int(np.frombuffer(
                    data[pos:pos + csize], dtype="<" + _PLY_TYPES[count_t])[0])
                pos += csize + n_items * np.dtype(_PLY_TYPES[item_t]).itemsize
            else:
                pos += np.dtype(d).itemsize
    return pos


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Returns (points, colors or None, normals or None), colors in [0,1]."""
    data = Path(path).read_bytes()
    fmt, elements, pos = _parse_header(data)
    vertex_cols = None
    for name, count, props in elements:
        if name == "vertex":
            vertex_cols, pos = _read_vertex_block(data, pos, fmt, count, props)
            break  # trailing elements (faces, ...) are ignored
        pos = _skip_block(data, pos, fmt, count, props)
    if vertex_cols is None:
        raise ScanParseError("no vertex element in file", 0)
    for axis in "xyz":
        if axis not in vertex_cols:
            raise ScanParseError(f"vertex element misses property {axis!r}", 0)
    points = np.stack([np.asarray(vertex_cols[a], dtype=np.float64)
                       for a in "xyz"], axis=1)
    normals = None
    if all(f"n{a}" in vertex_cols for a in "xyz"):
        normals = np.stack([np.asarray(vertex_cols[f"n{a}"], dtype=np.float64)
                            for a in "xyz"], axis=1)
    colors = None
    if all(c in vertex_cols for c in ("red", "green", "blue")):
        colors = np.stack([np.asarray(vertex_cols[c], dtype=np.float64)
                           for c in ("red", "green", "blue")], axis=1) / 255.0
    return points, colors, normals


def write_ply(path, points, colors=None, normals=None, binary: bool = True
              ) -> None:
    """Writes x,y,z (+nx,ny,nz as doubles, +red,green,blue as uchar)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}"]
    header += [f"property double {a}" for a in "xyz"]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if normals is not None:
        header += [f"property double n{a}" for a in "xyz"]
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if colors is not None:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header.append("end_header")
    rows = np.empty(n, dtype=np.dtype(fields))
    rows["x"], rows["y"], rows["z"] = points.T
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        rows["nx"], rows["ny"], rows["nz"] = normals.T
    if colors is not None:
        rgb = np.rint(np.asarray(colors, dtype=np.float64) * 255.0)
        rgb = np.clip(rgb, 0, 255).astype(np.uint8)
        rows["red"], rows["green"], rows["blue"] = rgb.T
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rows.tobytes())
        else:
            cols = []
            for name, dt in fields:
                if dt == "u1":
                    cols.append([str(v) for v in rows[name]])
                else:
                    cols.append([repr(float(v)) for v in rows[name]])
            lines = (" ".join(vals) for vals in zip(*cols))
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def estimate_normals(points: np.ndarray, k: int = 12) -> np.ndarray:
    """Per-point unit normal from a local k-NN plane fit.

    Normals are oriented away from the cloud centroid; degenerate
    neighborhoods fall back to the radial direction (or +z at the centroid).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    centroid = points.mean(axis=0)
    radial = points - centroid
    if n < 3:
        normals = np.where(np.linalg.norm(radial, axis=1, keepdims=True) > 0,
                           radial, [[0.0, 0.0, 1.0]])
        return normals / np.linalg.norm(normals, axis=1, keepdims=True)
    k = min(k, n - 1)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)  # self included at distance 0
    nbrs = points[idx]  # (n, k+1, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]  # smallest-eigenvalue direction
    flip = np.einsum("ni,ni->n", normals, radial) < 0
    normals[flip] *= -1.0
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    degenerate = lengths[:, 0] < 1e-12
    if degenerate.any():
        fallback = np.where(
            np.linalg.norm(radial, axis=1, keepdims=True) > 0,
            radial, [[0.0, 0.0, 1.0]])
        normals[degenerate] = fallback[degenerate]
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / lengths


def write_labels_json(path, scan: ScanSample) -> None:
    doc = {
        "schema": LABELS_SCHEMA,
        "id": scan.id,
        "labels": (None if scan.labels is None
                   else labels_to_file_ids(scan.labels).tolist()),
        "garments": None if scan.garments is None else list(scan.garments.bits),
        "body": None if scan.body is None else scan.body.to_json(),
    }
    Path(path).write_text(json.dumps(doc))


def read_labels_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScanParseError(f"labels file is not valid JSON: {exc.msg}",
                             exc.pos) from None
    if doc.get("schema") != LABELS_SCHEMA:
        raise ValidationError(
            f"labels file schema {doc.get('schema')!r} unsupported "
            f"(expected {LABELS_SCHEMA})")
    return doc


def load_scan(path, label_path=None) -> ScanSample:
    """Load a PLY scan, filling defaults: gray colors, estimated normals."""
    points, colors, normals = read_ply(path)
    if points.shape[0] == 0:
        raise ValidationError(f"{path}: scan has no points")
    if colors is None:
        colors = np.full_like(points, 0.5)
    if normals is None:
        normals = estimate_normals(points)
    else:
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        if (np.abs(lengths - 1.0) > 1e-3).any():
            bad = lengths[:, 0] <= 1e-12
            if bad.any():
                raise ValidationError(f"{path}: zero-length normals in file")
            normals = normals / lengths
    labels = garments = body = None
    scan_id = Path(path).stem
    if label_path is not None:
        doc = read_labels_json(label_path)
        scan_id = doc.get("id") or scan_id
        if doc.get("garments") is not None:
            garments = GarmentVector(tuple(int(b) for b in doc["garments"]))
        if doc.get("labels") is not None:
            ids = np.asarray(doc["labels"], dtype=np.int64)
            if ids.shape[0] != points.shape[0]:
                raise ValidationError(
                    f"{label_path}: {ids.shape[0]} labels for "
                    f"{points.shape[0]} points")
            labels = labels_from_file_ids(ids, NUM_CLASSES)
        if doc.get("body") is not None:
            body = BodyParams.from_json(doc["body"])
    return ScanSample(points=points, colors=colors, normals=normals,
                      labels=labels, body=body, garments=garments, id=scan_id)


def save_scan(scan: ScanSample, path, label_path=None, binary: bool = True
              ) -> None:
    write_ply(path, scan.points, scan.colors, scan.normals, binary=binary)
    if label_path is not None:
        write_labels_json(label_path, scan)
