import json

import numpy as np
import pytest

import garmseg as g
from garmseg.cli import main
from garmseg.taxonomy import labels_to_file_ids


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("suite")
    g.generate_suite(3, 1, 1, ["T-shirt", "Pants"], path, master_seed=8,
                     n_points=150)
    return path


@pytest.fixture(scope="module")
def ckpt_dir(tmp_path_factory, suite_dir):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--data", str(suite_dir / "manifest.json"),
                 "--out", str(out), "--epochs", "2", "--k", "6"])
    assert code == 0
    return out


def test_unknown_flag_exits_1(capsys):
    assert main(["segment", "scan.ply", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_1():
    assert main(["teleport"]) == 1


def test_missing_required_flag_named(suite_dir, capsys):
    scan = next(suite_dir.glob("*.ply"))
    code = main(["segment", str(scan), "--garments", "tshirt,body"])
    assert code == 1
    err = capsys.readouterr().err
    assert "--ckpt" in err


def test_synth_writes_suite(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path / "s"), "--train", "2",
                 "--val", "1", "--test", "1", "--classes", "T-shirt,Pants",
                 "--points", "150"])
    assert code == 0
    assert (tmp_path / "s" / "manifest.json").exists()
    assert len(list((tmp_path / "s").glob("*.ply"))) == 4


def test_train_then_eval_and_segment(ckpt_dir, suite_dir, tmp_path, capsys):
    ckpt = ckpt_dir / "model.ckpt"
    assert ckpt.exists()
    code = main(["eval", "--ckpt", str(ckpt), "--data",
                 str(suite_dir / "manifest.json"), "--split", "test",
                 "--out", str(tmp_path / "report.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "mean IoU" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert "mean_iou" in report

    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["test"][0]
    code = main(["segment", str(suite_dir / entry["ply"]),
                 "--labels", str(suite_dir / entry["labels"]),
                 "--ckpt", str(ckpt), "--out", str(tmp_path / "pred.json")])
    assert code == 0
    pred = json.loads((tmp_path / "pred.json").read_text())
    scan = g.load_scan(suite_dir / entry["ply"], suite_dir / entry["labels"])
    assert len(pred["labels"]) == scan.num_points
    declared = {i + 1 for i in scan.garments.present_indices()}
    assert set(pred["labels"]) <= declared


def test_eval_identical_files_prints_one(suite_dir, tmp_path, capsys):
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["train"][0]
    labels = suite_dir / entry["labels"]
    code = main(["eval", "--pred", str(labels), "--gt", str(labels)])
    assert code == 0
    assert "mean IoU 1.0000" in capsys.readouterr().out


def test_merge3_roundtrip(suite_dir, tmp_path, capsys):
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["train"][0]
    code = main(["merge3", "--labels", str(suite_dir / entry["labels"]),
                 "--out", str(tmp_path / "coarse.json")])
    assert code == 0
    doc = json.loads((tmp_path / "coarse.json").read_text())
    assert doc["classes"] == ["upper", "lower", "body"]
    scan = g.load_scan(suite_dir / entry["ply"], suite_dir / entry["labels"])
    expected = g.merge_to_3class(scan.labels)
    assert doc["labels"] == expected.tolist()


def test_attn_map(ckpt_dir, suite_dir, tmp_path):
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["test"][0]
    code = main(["attn-map", "--ckpt", str(ckpt_dir / "model.ckpt"),
                 "--scan", str(suite_dir / entry["ply"]),
                 "--cls", "Pants", "--out", str(tmp_path / "map.json")])
    assert code == 0
    doc = json.loads((tmp_path / "map.json").read_text())
    scores = np.asarray(doc["scores"])
    assert scores.min() >= 0.0 and scores.max() <= 1.0


def test_clean_subcommand(suite_dir, tmp_path):
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["train"][0]
    code = main(["clean", "--scan", str(suite_dir / entry["ply"]),
                 "--labels", str(suite_dir / entry["labels"]),
                 "--out", str(tmp_path / "clean.json")])
    assert code == 0
    doc = json.loads((tmp_path / "clean.json").read_text())
    assert len(doc["labels"]) > 0


def test_refine_subcommand(ckpt_dir, suite_dir, tmp_path, capsys):
    manifest = json.loads((suite_dir / "manifest.json").read_text())
    entry = manifest["splits"]["test"][0]
    scan = g.load_scan(suite_dir / entry["ply"], suite_dir / entry["labels"])
    corrections = {
        "indices": [0, 1, 2, 3, 4],
        "labels": labels_to_file_ids(scan.labels[:5]).tolist(),
    }
    (tmp_path / "corr.json").write_text(json.dumps(corrections))
    code = main(["refine", "--ckpt", str(ckpt_dir / "model.ckpt"),
                 "--scan", str(suite_dir / entry["ply"]),
                 "--labels", str(suite_dir / entry["labels"]),
                 "--corrections", str(tmp_path / "corr.json"),
                 "--epochs", "1",
                 "--out", str(tmp_path / "report.json"),
                 "--ckpt-out", str(tmp_path / "refined.ckpt")])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert "target_iou_before" in report and "target_iou_after" in report
    assert (tmp_path / "refined.ckpt").exists()
    net, _ = g.load_checkpoint(tmp_path / "refined.ckpt", g.DEFAULT_TAXONOMY)


def test_config_file_supplies_defaults(tmp_path):
    config = {"train": 2, "val": 1, "test": 1, "points": 150,
              "classes": "T-shirt,Pants", "out": str(tmp_path / "cfgsuite")}
    (tmp_path / "cfg.json").write_text(json.dumps(config))
    code = main(["synth", "--config", str(tmp_path / "cfg.json"),
                 "--train", "3"])  # explicit flag beats the config file
    assert code == 0
    manifest = json.loads(
        (tmp_path / "cfgsuite" / "manifest.json").read_text())
    assert len(manifest["splits"]["train"]) == 3
    assert len(manifest["splits"]["val"]) == 1


def test_bad_scan_path_is_validation_error(ckpt_dir):
    code = main(["segment", "/nonexistent.ply",
                 "--ckpt", str(ckpt_dir / "model.ckpt"),
                 "--out", "/tmp/x.json", "--garments", "body"])
    assert code in (1, 2)


def test_serve_env_var_fallbacks(ckpt_dir, monkeypatch):
    import argparse
    from garmseg.cli import resolve_serve_config
    monkeypatch.setenv("CLOSE_CKPT_DIR", str(ckpt_dir))
    monkeypatch.setenv("CLOSE_SCAN_DIR", "/tmp/scan-store")
    monkeypatch.setenv("CLOSE_PORT", "9123")
    args = argparse.Namespace(ckpt=None, scan_dir=None, port=None)
    ckpt, scan_dir, port = resolve_serve_config(args)
    assert ckpt == str(ckpt_dir / "model.ckpt")  # dir resolves to model.ckpt
    assert scan_dir == "/tmp/scan-store"
    assert port == 9123
    # explicit flags beat the environment
    args = argparse.Namespace(ckpt=str(ckpt_dir / "model.ckpt"),
                              scan_dir="elsewhere", port=7000)
    assert resolve_serve_config(args) == (
        str(ckpt_dir / "model.ckpt"), "elsewhere", 7000)
