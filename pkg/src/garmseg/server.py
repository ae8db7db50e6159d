"""Annotation HTTP service.

Drives the interactive refinement workflow: upload a scan, fetch its points
as a binary stream, segment, post label corrections, trigger refinement,
reset the model. Reads are request-parallel; refinements serialize (a
second refine while one is in flight gets 409) and swap the served model
atomically.

Wire formats:
  GET /scans/{id}/points  -> little-endian: uint32 point count, then per
  point 9 float32 values x,y,z,r,g,b,nx,ny,nz.
  Labels are 1-based class ids everywhere on the wire.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import struct
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, Response, UploadFile

from .body import body_model_from_doc
from .errors import GarmsegError, ValidationError
from .network import load_checkpoint
from .refinement import create_session, refine
from .scan import BodyParams, ScanSample
from .scan_io import load_scan, read_labels_json, write_labels_json
from .synth import load_suite
from .taxonomy import (DEFAULT_TAXONOMY, GarmentVector, labels_from_file_ids,
                       labels_to_file_ids)
from .toybody import build_toy_body
from .training import segment


def state_hash(net) -> str:
    """Hash of the current weights; reset must restore the original value."""
    digest = hashlib.sha256()
    for name, param in sorted(net.state_dict().items()):
        digest.update(name.encode())
        digest.update(param.detach().numpy().tobytes())
    return digest.hexdigest()


class _ScanEntry:
    def __init__(self, scan: ScanSample):
        self.scan = scan
        self.labels = scan.labels.copy() if scan.labels is not None else None
        self.corrections: dict[int, int] = {}  # point index -> 0-based class


class ServiceState:
    def __init__(self, ckpt_path, scan_dir, suite_manifest=None,
                 body_model=None):
        self.taxonomy = DEFAULT_TAXONOMY
        net, extra = load_checkpoint(ckpt_path, self.taxonomy)
        net.eval()
        self.reference = net
        self.net = net
        if body_model is None:
            if "body_model" in extra:
                body_model = body_model_from_doc(extra["body_model"])
            elif net.config.body_encoder == "canonical":
                body_model = build_toy_body()[0]
        self.body_model = body_model
        self.scan_dir = Path(scan_dir)
        self.scan_dir.mkdir(parents=True, exist_ok=True)
        self.scans: dict[str, _ScanEntry] = {}
        self.refine_lock = threading.Lock()
        self.swap_lock = threading.Lock()
        self.refinement_count = 0
        self.last_suite_miou = None
        self.original_hash = state_hash(net)
        self.suite = None
        if suite_manifest:
            self.suite = load_suite(suite_manifest)["test"]
        self._load_existing_scans()

    def _load_existing_scans(self):
        for ply in sorted(self.scan_dir.glob("*.ply")):
            label_path = ply.with_name(ply.stem + ".labels.json")
            try:
                scan = load_scan(ply, label_path if label_path.exists() else None)
            except GarmsegError:
                continue
            self.scans[ply.stem] = _ScanEntry(scan)

    def entry(self, scan_id: str) -> _ScanEntry:
        if scan_id not in self.scans:
            raise HTTPException(404, f"unknown scan {scan_id!r}")
        return self.scans[scan_id]

    def persist_labels(self, scan_id: str):
        entry = self.scans[scan_id]
        scan = entry.scan
        if entry.labels is not None:
            scan = scan.with_labels(entry.labels)
        write_labels_json(self.scan_dir / f"{scan_id}.labels.json", scan)


def create_app(ckpt_path, scan_dir, suite_manifest=None,
               body_model=None) -> FastAPI:
    app = FastAPI(title="garmseg annotation service")
    state = ServiceState(ckpt_path, scan_dir, suite_manifest, body_model)
    app.state.service = state
    taxonomy = state.taxonomy

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/taxonomy")
    def get_taxonomy():
        return {
            "classes": list(taxonomy.classes),
            "palette": {c: list(taxonomy.palette[c]) for c in taxonomy.classes},
            "merge3": dict(taxonomy.merge3),
            "num_classes": taxonomy.num_classes,
        }

    @app.post("/scans")
    async def upload_scan(scan: UploadFile = File(...),
                          meta: str | None = Form(None)):
        data = await scan.read()
        scan_id = "scan-" + hashlib.sha256(data).hexdigest()[:12]
        ply_path = state.scan_dir / f"{scan_id}.ply"
        ply_path.write_bytes(data)
        try:
            sample = load_scan(ply_path)
        except GarmsegError as exc:
            ply_path.unlink(missing_ok=True)
            raise HTTPException(422, f"bad scan file: {exc}") from exc
        garments = body = labels = None
        if meta:
            try:
                doc = json.loads(meta)
            except json.JSONDecodeError as exc:
                raise HTTPException(422, "meta is not valid JSON") from exc
            try:
                if doc.get("garments") is not None:
                    bits = doc["garments"]
                    if all(isinstance(b, str) for b in bits):
                        garments = GarmentVector.from_names(bits, taxonomy)
                    else:
                        garments = GarmentVector(tuple(int(b) for b in bits))
                if doc.get("body") is not None:
                    body = BodyParams.from_json(doc["body"])
                if doc.get("labels") is not None:
                    labels = labels_from_file_ids(doc["labels"],
                                                  taxonomy.num_classes)
                    if labels.shape[0] != sample.num_points:
                        raise ValidationError("label count != point count")
                sample = ScanSample(points=sample.points, colors=sample.colors,
                                    normals=sample.normals, labels=labels,
                                    body=body, garments=garments, id=scan_id)
            except GarmsegError as exc:
                ply_path.unlink(missing_ok=True)
                raise HTTPException(422, str(exc)) from exc
        else:
            sample = ScanSample(points=sample.points, colors=sample.colors,
                                normals=sample.normals, id=scan_id)
        state.scans[scan_id] = _ScanEntry(sample)
        state.persist_labels(scan_id)
        return {"id": scan_id, "num_points": sample.num_points}

    @app.get("/scans/{scan_id}/points")
    def get_points(scan_id: str):
        scan = state.entry(scan_id).scan
        buf = io.BytesIO()
        buf.write(struct.pack("<I", scan.num_points))
        interleaved = np.concatenate(
            [scan.points, scan.colors, scan.normals], axis=1
        ).astype("<f4")
        buf.write(interleaved.tobytes())
        return Response(content=buf.getvalue(),
                        media_type="application/octet-stream")

    @app.get("/scans/{scan_id}/attention")
    def attention_map(scan_id: str, cls: str):
        import torch
        from .network import export_attention_map
        from .scan import normalize
        entry = state.entry(scan_id)
        try:
            class_index = taxonomy.index(cls)
        except GarmsegError as exc:
            raise HTTPException(422, str(exc)) from exc
        centered, _ = normalize(entry.scan)
        feats9 = torch.from_numpy(centered.features9())
        with state.swap_lock:
            net = state.net
        try:
            scores = export_attention_map(net, feats9, class_index, taxonomy)
        except GarmsegError as exc:
            raise HTTPException(422, str(exc)) from exc
        return {"class": taxonomy.classes[class_index],
                "scores": [float(s) for s in scores]}

    @app.post("/scans/{scan_id}/segment")
    def segment_scan(scan_id: str, body: dict | None = None):
        entry = state.entry(scan_id)
        scan = entry.scan
        if scan.garments is None:
            raise HTTPException(
                422, "scan has no garment vector; upload meta with garments")
        restrict = True if body is None else bool(body.get("restrict", True))
        with state.swap_lock:
            net = state.net
        try:
            labels, confidence = segment(scan, net, state.body_model,
                                         restrict=restrict)
        except GarmsegError as exc:
            raise HTTPException(422, str(exc)) from exc
        entry.labels = labels
        state.persist_labels(scan_id)
        return {"labels": labels_to_file_ids(labels).tolist(),
                "confidence": [float(c) for c in confidence]}

    @app.post("/scans/{scan_id}/labels")
    def post_labels(scan_id: str, body: dict):
        entry = state.entry(scan_id)
        n = entry.scan.num_points
        if "labels" in body:
            try:
                labels = labels_from_file_ids(body["labels"],
                                              taxonomy.num_classes)
            except GarmsegError as exc:
                raise HTTPException(422, str(exc)) from exc
            if len(labels) != n:
                raise HTTPException(422, f"expected {n} labels")
            entry.labels = np.asarray(labels, dtype=np.int64)
            entry.corrections.clear()
        elif "indices" in body and "class_id" in body:
            indices = body["indices"]
            class_id = int(body["class_id"]) - 1
            if not 0 <= class_id < taxonomy.num_classes:
                raise HTTPException(422, f"class_id {body['class_id']} invalid")
            if not indices:
                raise HTTPException(422, "indices must be nonempty")
            if min(indices) < 0 or max(indices) >= n:
                raise HTTPException(422, "indices outside the scan")
            if entry.labels is None:
                raise HTTPException(
                    422, "no current labels; segment the scan first")
            for i in indices:
                entry.labels[int(i)] = class_id
                entry.corrections[int(i)] = class_id
        else:
            raise HTTPException(
                422, 'body must carry {"labels": [...]} or '
                     '{"indices": [...], "class_id": k}')
        state.persist_labels(scan_id)
        return {"updated": True,
                "pending_corrections": len(entry.corrections)}

    @app.post("/refine")
    def refine_model(body: dict):
        scan_id = body.get("scan_id")
        if not scan_id:
            raise HTTPException(422, "scan_id required")
        entry = state.entry(scan_id)
        if not entry.corrections:
            raise HTTPException(422, "no corrections recorded for this scan")
        if not state.refine_lock.acquire(blocking=False):
            raise HTTPException(409, "a refinement is already in flight")
        try:
            indices = np.fromiter(entry.corrections.keys(), dtype=np.int64)
            values = np.fromiter(entry.corrections.values(), dtype=np.int64)
            lambdas = body.get("lambdas")
            layers = tuple(body["layers"]) if body.get("layers") else None
            with state.swap_lock:
                base_net = state.net
            kwargs = {"lambdas": lambdas}
            if layers:
                kwargs["trainable_layers"] = layers
            session = create_session(
                base_net, entry.scan, indices, values, state.body_model,
                base_labels=entry.labels, **kwargs)
            refine_kwargs = {}
            for key in ("epochs", "steps_per_epoch"):
                if body.get(key) is not None:
                    refine_kwargs[key] = int(body[key])
            if body.get("lr") is not None:
                refine_kwargs["lr"] = float(body["lr"])
            report = refine(session, suite=state.suite,
                            body_model=state.body_model, **refine_kwargs)
            with state.swap_lock:
                state.net = session.working
            state.refinement_count += 1
            if report.get("suite_miou_after") is not None:
                state.last_suite_miou = report["suite_miou_after"]
            labels, _ = segment(entry.scan, session.working, state.body_model,
                                restrict=True)
            entry.labels = labels
            entry.corrections.clear()
            state.persist_labels(scan_id)
            return report
        except GarmsegError as exc:
            raise HTTPException(422, str(exc)) from exc
        finally:
            state.refine_lock.release()

    @app.post("/model/reset")
    def reset_model():
        with state.swap_lock:
            state.net = copy.deepcopy(state.reference)
        state.refinement_count = 0
        return {"reset": True}

    @app.get("/model/status")
    def model_status():
        with state.swap_lock:
            net = state.net
        return {"checkpoint_hash": state_hash(net),
                "refinement_count": state.refinement_count,
                "last_suite_miou": state.last_suite_miou}

    return app
