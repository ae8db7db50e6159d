import io
import json
import struct
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

import garmseg as g
from garmseg.server import create_app, state_hash
from garmseg.taxonomy import labels_to_file_ids

NET = g.NetworkConfig(k=6, l=8, global_width=16, n_heads=2, pe_bands=2,
                      decoder_widths=(16, 8))


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    suite_dir = root / "suite"
    g.generate_suite(3, 1, 2, ["T-shirt", "Pants"], suite_dir, master_seed=13,
                     n_points=150)
    splits = g.load_suite(suite_dir / "manifest.json")
    from garmseg.toybody import build_toy_body
    body = build_toy_body()[0]
    config = g.TrainConfig(network=NET, epochs=40, batch_size=1, lr=1e-2,
                           seed=2)
    net, _ = g.train(splits["train"], [], config, body)
    from garmseg.body import body_model_to_doc
    ckpt = root / "model.ckpt"
    g.save_checkpoint(ckpt, net, g.DEFAULT_TAXONOMY,
                      extra={"body_model": body_model_to_doc(body)})
    app = create_app(ckpt, root / "scans",
                     suite_manifest=suite_dir / "manifest.json")
    client = TestClient(app)
    return client, splits, root


def _upload(client, scan, tmpdir=None):
    import os
    import tempfile
    from garmseg.scan_io import write_ply
    with tempfile.NamedTemporaryFile(suffix=".ply", delete=False) as fh:
        path = fh.name
    write_ply(path, scan.points, scan.colors, scan.normals)
    meta = {"garments": list(scan.garments.bits),
            "body": scan.body.to_json()}
    with open(path, "rb") as fh:
        response = client.post(
            "/scans", files={"scan": ("scan.ply", fh, "application/ply")},
            data={"meta": json.dumps(meta)})
    os.unlink(path)
    return response


def test_health(service):
    client, _, _ = service
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_taxonomy_endpoint(service):
    client, _, _ = service
    doc = client.get("/taxonomy").json()
    assert doc["num_classes"] == 18
    assert doc["classes"][0] == "T-shirt"
    assert doc["merge3"]["Pants"] == "lower"


def test_upload_and_binary_points(service):
    client, splits, _ = service
    scan = splits["test"][0]
    response = _upload(client, scan)
    assert response.status_code == 200, response.text
    scan_id = response.json()["id"]

    raw = client.get(f"/scans/{scan_id}/points").content
    (n,) = struct.unpack_from("<I", raw, 0)
    assert n == scan.num_points
    data = np.frombuffer(raw, dtype="<f4", offset=4).reshape(n, 9)
    assert np.allclose(data[:, 0:3], scan.points.astype("<f4"))
    assert np.allclose(data[:, 3:6], scan.colors.astype("<f4"), atol=1e-6)
    assert np.allclose(data[:, 6:9], scan.normals.astype("<f4"))


def test_attention_endpoint(service):
    client, splits, _ = service
    scan = splits["test"][0]
    scan_id = _upload(client, scan).json()["id"]
    doc = client.get(f"/scans/{scan_id}/attention?cls=Pants").json()
    assert doc["class"] == "Pants"
    scores = np.asarray(doc["scores"])
    assert scores.shape[0] == scan.num_points
    assert scores.min() >= 0.0 and scores.max() <= 1.0
    assert client.get(f"/scans/{scan_id}/attention?cls=Cape").status_code == 422


def test_unknown_scan_404(service):
    client, _, _ = service
    assert client.get("/scans/ghost/points").status_code == 404
    assert client.post("/scans/ghost/segment", json={}).status_code == 404


def test_segment_labels_refine_reset_flow(service):
    client, splits, _ = service
    scan = splits["test"][1]
    scan_id = _upload(client, scan).json()["id"]

    status0 = client.get("/model/status").json()
    assert status0["refinement_count"] == 0
    original_hash = status0["checkpoint_hash"]

    seg = client.post(f"/scans/{scan_id}/segment", json={}).json()
    assert len(seg["labels"]) == scan.num_points
    declared = {i + 1 for i in scan.garments.present_indices()}
    assert set(seg["labels"]) <= declared
    assert all(0 < c <= 1 for c in seg["confidence"])

    preds = np.asarray(seg["labels"]) - 1
    wrong = np.flatnonzero(preds != scan.labels)
    picks = wrong[:8] if len(wrong) >= 3 else np.arange(8)
    # corrections must differ from the current field
    by_class = {}
    for i in picks:
        cls = int(scan.labels[i])
        if cls != preds[i]:
            by_class.setdefault(cls, []).append(int(i))
    if not by_class:  # model is perfect here: flip some points instead
        target = int(scan.labels[0])
        other = [c for c in scan.garments.present_indices()
                 if c != target][0]
        by_class = {int(other): [0, 1, 2]}
    for cls, indices in by_class.items():
        response = client.post(f"/scans/{scan_id}/labels",
                               json={"indices": indices,
                                     "class_id": cls + 1})
        assert response.status_code == 200, response.text
    assert response.json()["pending_corrections"] >= 1

    # the IoU-improvement contract is asserted in the acceptance suite on a
    # properly trained model; here we exercise the API contract
    report = client.post("/refine", json={"scan_id": scan_id}).json()
    for key in ("target_iou_before", "target_iou_after", "suite_miou_before",
                "suite_miou_after", "lambdas", "trainable_layers"):
        assert key in report
    assert report["suite_miou_before"] is not None
    assert report["suite_miou_after"] is not None
    assert report["epochs"] == 2

    status1 = client.get("/model/status").json()
    assert status1["refinement_count"] == 1
    assert status1["last_suite_miou"] == report["suite_miou_after"]

    reset = client.post("/model/reset")
    assert reset.status_code == 200
    status2 = client.get("/model/status").json()
    assert status2["checkpoint_hash"] == original_hash
    assert status2["refinement_count"] == 0


def test_labels_validation_422(service):
    client, splits, _ = service
    scan = splits["test"][0]
    scan_id = _upload(client, scan).json()["id"]
    client.post(f"/scans/{scan_id}/segment", json={})
    assert client.post(f"/scans/{scan_id}/labels",
                       json={"indices": [0], "class_id": 99}
                       ).status_code == 422
    assert client.post(f"/scans/{scan_id}/labels",
                       json={"indices": [10 ** 6], "class_id": 1}
                       ).status_code == 422
    assert client.post(f"/scans/{scan_id}/labels",
                       json={"labels": [1, 2]}).status_code == 422
    assert client.post(f"/scans/{scan_id}/labels",
                       json={}).status_code == 422


def test_refine_without_corrections_422(service):
    client, splits, _ = service
    scan = splits["train"][0]
    scan_id = _upload(client, scan).json()["id"]
    client.post(f"/scans/{scan_id}/segment", json={})
    assert client.post("/refine", json={"scan_id": scan_id}).status_code == 422


def test_full_label_vector_replaces_field(service):
    client, splits, _ = service
    scan = splits["train"][1]
    scan_id = _upload(client, scan).json()["id"]
    labels = labels_to_file_ids(scan.labels).tolist()
    response = client.post(f"/scans/{scan_id}/labels", json={"labels": labels})
    assert response.status_code == 200
    assert response.json()["pending_corrections"] == 0


def test_concurrent_refines_serialize(service):
    client, splits, root = service
    scan = splits["test"][0]
    scan_id = _upload(client, scan).json()["id"]
    client.post(f"/scans/{scan_id}/segment", json={})
    other = [c for c in scan.garments.present_indices()
             if c != scan.labels[0]][0]
    client.post(f"/scans/{scan_id}/labels",
                json={"indices": [0, 1], "class_id": int(other) + 1})

    service_state = client.app.state.service
    acquired = service_state.refine_lock.acquire(blocking=False)
    assert acquired  # simulate an in-flight refinement
    try:
        response = client.post("/refine", json={"scan_id": scan_id})
        assert response.status_code == 409
    finally:
        service_state.refine_lock.release()


def test_scan_store_survives_restart(service):
    client, splits, root = service
    scan = splits["val"][0]
    scan_id = _upload(client, scan).json()["id"]
    client.post(f"/scans/{scan_id}/segment", json={})
    # a fresh app over the same directories sees the same scan
    app2 = create_app(root / "model.ckpt", root / "scans")
    client2 = TestClient(app2)
    response = client2.get(f"/scans/{scan_id}/points")
    assert response.status_code == 200


def test_state_hash_stable(service):
    client, _, _ = service
    net = client.app.state.service.net
    assert state_hash(net) == state_hash(net)


def test_concurrent_segments_do_not_interleave(service):
    client, splits, _ = service
    scans = [splits["test"][0], splits["test"][1]]
    ids = [_upload(client, s).json()["id"] for s in scans]
    sequential = [client.post(f"/scans/{i}/segment", json={}).json()["labels"]
                  for i in ids]

    results = {}

    def run(scan_id):
        results[scan_id] = client.post(
            f"/scans/{scan_id}/segment", json={}).json()["labels"]

    threads = [threading.Thread(target=run, args=(i,)) for i in ids * 2]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for scan_id, expected in zip(ids, sequential):
        assert results[scan_id] == expected
