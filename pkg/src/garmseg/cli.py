"""Command-line surface.

Subcommands: synth, train, eval, segment, refine, clean, merge3, attn-map,
serve. Every subcommand accepts ``--config file.json`` whose keys provide
defaults; explicit flags win. Exit codes: 0 success, 1 validation error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .body import body_model_from_doc, encode_body, load_body_model
from .errors import GarmsegError, RuntimeFailure, ValidationError
from .graph import build_knn_graph
from .heuristics import body_part_filter, default_rules, load_rules
from .network import (DEFAULT_REFINE_LAYERS, NetworkConfig,
                      export_attention_map, load_checkpoint, save_checkpoint)
from .scan import BodyParams
from .scan_io import load_scan, read_labels_json, write_labels_json
from .taxonomy import (COARSE_NAMES, DEFAULT_TAXONOMY, GarmentVector,
                       labels_from_file_ids, labels_to_file_ids,
                       merge_to_3class)
from .toybody import PART_NAMES, build_toy_body
from .training import TrainConfig, evaluate, run_training, segment


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _with_config_defaults(args: argparse.Namespace,
                          argv: list[str]) -> argparse.Namespace:
    """Apply --config file values wherever the flag was left at its default."""
    if not getattr(args, "config", None):
        return args
    raw = json.loads(Path(args.config).read_text())
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in raw.items():
        key = key.replace("-", "_")
        if hasattr(args, key) and key not in explicit:
            setattr(args, key, value)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_"), None) is None]
    if missing:
        flags = ", ".join(f"--{n}" for n in missing)
        raise ValidationError(f"missing required flag(s): {flags}")


def _parse_garments(spec: str) -> GarmentVector:
    spec = spec.strip()
    if set(spec) <= {"0", "1"} and len(spec) == DEFAULT_TAXONOMY.num_classes:
        return GarmentVector.from_bitmask(spec)
    return GarmentVector.from_names(
        [s for s in spec.split(",") if s], DEFAULT_TAXONOMY)


def _load_ckpt(path):
    if path is None or not Path(path).exists():
        raise ValidationError(f"checkpoint not found: {path}")
    net, extra = load_checkpoint(path, DEFAULT_TAXONOMY)
    body_model = None
    if "body_model" in extra:
        body_model = body_model_from_doc(extra["body_model"])
    return net, body_model, extra


def _scan_with_meta(args):
    scan = load_scan(args.scan, getattr(args, "labels", None))
    if getattr(args, "garments", None):
        scan = dataclasses.replace(scan,
                                   garments=_parse_garments(args.garments))
    if getattr(args, "body", None):
        params = BodyParams.from_json(json.loads(Path(args.body).read_text()))
        scan = dataclasses.replace(scan, body=params)
    return scan


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args):
    from .synth import generate_suite
    _require(args, "out")
    classes = [c for c in (args.classes or "").split(",") if c] or \
        ["T-shirt", "Shirt", "Pants", "Short-Pants", "Jacket", "Hoodies"]
    manifest = generate_suite(args.train, args.val, args.test, classes,
                              args.out, master_seed=args.seed,
                              n_points=args.points)
    total = sum(len(v) for v in manifest["splits"].values())
    print(f"wrote {total} scans + manifest.json to {args.out}")
    return 0


def _cmd_train(args):
    from .synth import load_suite
    _require(args, "data", "out")
    splits = load_suite(args.data)
    network = NetworkConfig(
        k=args.k, body_encoder=args.body_encoder,
        clothing_encoder=args.clothing_encoder, mask_mode=args.mask_mode,
        static_graph=args.static_graph)
    config = TrainConfig(network=network, epochs=args.epochs,
                         batch_size=args.batch_size, lr=args.lr,
                         seed=args.seed, sample_points=args.sample_points,
                         class_weighting=args.class_weighting)
    body_model = None
    if network.body_encoder == "canonical":
        body_model = (load_body_model(args.body_model) if args.body_model
                      else build_toy_body()[0])
    result = run_training(splits["train"], splits.get("val", []), config,
                          body_model, args.out,
                          log=print if args.verbose else None)
    print(f"checkpoint: {result['checkpoint']}")
    print(f"best val mIoU: {result['report']['best_val_miou']}")
    return 0


def _cmd_eval(args):
    if args.pred is not None:
        _require(args, "gt")
        pred = labels_from_file_ids(read_labels_json(args.pred)["labels"])
        gt = labels_from_file_ids(read_labels_json(args.gt)["labels"])
        from .metrics import iou
        per_class, mean = iou(pred, gt, DEFAULT_TAXONOMY.num_classes)
        report = {
            "per_class": [None if np.isnan(v) else float(v) for v in per_class],
            "mean_iou": mean}
    else:
        from .synth import load_suite
        _require(args, "ckpt", "data")
        net, body_model, _ = _load_ckpt(args.ckpt)
        splits = load_suite(args.data)
        scans = splits[args.split]
        report = evaluate(scans, net, body_model,
                          restrict=args.restrict).to_json()
    for name, value in zip(DEFAULT_TAXONOMY.classes, report["per_class"]):
        if value is not None:
            print(f"{name:<14s} IoU {value:.4f}")
    print(f"mean IoU {report['mean_iou']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def _cmd_segment(args):
    _require(args, "ckpt", "out")
    net, body_model, _ = _load_ckpt(args.ckpt)
    scan = _scan_with_meta(args)
    if scan.garments is None:
        raise ValidationError(
            "no garment classes: pass --garments or a labels JSON with them")
    labels, confidence = segment(scan, net, body_model,
                                 restrict=not args.no_restrict,
                                 cache_dir=args.cache_dir)
    doc = {"schema": 1, "id": scan.id,
           "labels": labels_to_file_ids(labels).tolist(),
           "confidence": [round(float(c), 6) for c in confidence],
           "garments": list(scan.garments.bits),
           "body": None if scan.body is None else scan.body.to_json()}
    Path(args.out).write_text(json.dumps(doc))
    print(f"wrote {labels.shape[0]} labels to {args.out}")
    return 0


def _cmd_refine(args):
    from .refinement import create_session, refine
    from .synth import load_suite
    _require(args, "ckpt", "scan", "corrections")
    net, body_model, extra = _load_ckpt(args.ckpt)
    scan = _scan_with_meta(args)
    corr = json.loads(Path(args.corrections).read_text())
    indices = np.asarray(corr["indices"], dtype=np.int64)
    if "class_id" in corr:
        values = np.full(indices.shape, int(corr["class_id"]) - 1)
    else:
        values = labels_from_file_ids(corr["labels"])
    lambdas = None
    if args.preset:
        from .refinement import REFINE_PRESETS
        if args.preset not in REFINE_PRESETS:
            raise ValidationError(
                f"unknown preset {args.preset!r}; "
                f"choose from {sorted(REFINE_PRESETS)}")
        lambdas = dict(REFINE_PRESETS[args.preset])
    if args.lambdas:
        c, f, w = (float(x) for x in args.lambdas.split(","))
        lambdas = {"c": c, "f": f, "w": w}
    layers = (tuple(args.layers.split(",")) if args.layers
              else DEFAULT_REFINE_LAYERS)
    base = scan.labels if scan.labels is not None else None
    session = create_session(net, scan, indices, values, body_model,
                             base_labels=base, lambdas=lambdas,
                             trainable_layers=layers)
    suite = None
    if args.suite:
        suite = load_suite(args.suite)["test"]
    report = refine(session, epochs=args.epochs, suite=suite,
                    body_model=body_model)
    if args.ckpt_out:
        save_checkpoint(args.ckpt_out, session.working, DEFAULT_TAXONOMY,
                        extra=extra)
        report["checkpoint"] = str(args.ckpt_out)
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def _cmd_clean(args):
    _require(args, "scan", "labels", "out")
    scan = load_scan(args.scan, args.labels)
    if scan.labels is None:
        raise ValidationError("labels file carries no labels to clean")
    body_model, parts = build_toy_body()
    if args.body_model:
        body_model = load_body_model(args.body_model)
    rules = (load_rules(args.rules) if args.rules
             else default_rules(parts, PART_NAMES))
    feats = encode_body(scan, body_model)
    graph = build_knn_graph(scan.points, args.k)
    cleaned, changed = body_part_filter(scan.labels, feats, rules, graph,
                                        num_vertices=body_model.num_vertices)
    write_labels_json(args.out, scan.with_labels(cleaned))
    print(f"relabeled {changed} points; wrote {args.out}")
    return 0


def _cmd_merge3(args):
    _require(args, "labels", "out")
    doc = read_labels_json(args.labels)
    if doc.get("labels") is None:
        raise ValidationError("labels file carries no labels")
    taxonomy = DEFAULT_TAXONOMY
    if args.map:
        taxonomy = taxonomy.with_merge3_from_file(args.map)
    coarse = merge_to_3class(labels_from_file_ids(doc["labels"]), taxonomy)
    Path(args.out).write_text(json.dumps({
        "schema": 1, "id": doc.get("id"),
        "classes": list(COARSE_NAMES),
        "labels": coarse.tolist()}))
    counts = np.bincount(coarse, minlength=3)
    print(" ".join(f"{n}={c}" for n, c in zip(COARSE_NAMES, counts)))
    return 0


def _cmd_attn_map(args):
    import torch
    _require(args, "ckpt", "scan", "cls", "out")
    net, _, _ = _load_ckpt(args.ckpt)
    scan = load_scan(args.scan, getattr(args, "labels", None))
    from .scan import normalize
    centered, _ = normalize(scan)
    feats9 = torch.from_numpy(centered.features9())
    class_index = DEFAULT_TAXONOMY.index(args.cls)
    scores = export_attention_map(net, feats9, class_index, DEFAULT_TAXONOMY)
    Path(args.out).write_text(json.dumps({
        "schema": 1, "id": scan.id, "class": DEFAULT_TAXONOMY.classes[class_index],
        "scores": [round(float(s), 6) for s in scores]}))
    print(f"wrote attention map for {args.cls} to {args.out}")
    return 0


def resolve_serve_config(args) -> tuple[str, str, int]:
    """Flags win; CLOSE_CKPT_DIR / CLOSE_SCAN_DIR / CLOSE_PORT fill gaps."""
    import os
    ckpt = args.ckpt or os.environ.get("CLOSE_CKPT_DIR")
    if ckpt and Path(ckpt).is_dir():
        ckpt = str(Path(ckpt) / "model.ckpt")
    _require(argparse.Namespace(ckpt=ckpt), "ckpt")
    scan_dir = args.scan_dir or os.environ.get("CLOSE_SCAN_DIR", "./scans")
    port = args.port or int(os.environ.get("CLOSE_PORT", "8000"))
    return ckpt, scan_dir, port


def _cmd_serve(args):
    import uvicorn
    from .server import create_app
    ckpt, scan_dir, port = resolve_serve_config(args)
    app = create_app(ckpt, scan_dir, suite_manifest=args.suite)
    uvicorn.run(app, host=args.host, port=port)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="garmseg",
                     description="Garment segmentation for 3D human scans")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file with default flag values")
        p.set_defaults(fn=fn)
        return p

    p = add("synth", _cmd_synth, "generate a synthetic labeled suite")
    p.add_argument("--out")
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--val", type=int, default=5)
    p.add_argument("--test", type=int, default=5)
    p.add_argument("--classes", help="comma-separated coverage classes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=900)

    p = add("train", _cmd_train, "train a segmentation model")
    p.add_argument("--data", help="suite manifest.json")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-points", type=int, default=512)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--body-encoder", default="canonical",
                   choices=["canonical", "none", "hybrid"])
    p.add_argument("--clothing-encoder", default="attention",
                   choices=["attention", "binary", "none"])
    p.add_argument("--mask-mode", default="neg_inf",
                   choices=["neg_inf", "zero_key"])
    p.add_argument("--static-graph", action="store_true")
    p.add_argument("--class-weighting", action="store_true",
                   help="inverse-frequency CE weights (default: plain CE)")
    p.add_argument("--body-model", help="body model container (JSON or npz)")
    p.add_argument("--verbose", action="store_true")

    p = add("eval", _cmd_eval, "evaluate a checkpoint or a predictions file")
    p.add_argument("--ckpt")
    p.add_argument("--data", help="suite manifest.json")
    p.add_argument("--split", default="test")
    p.add_argument("--pred", help="predictions labels JSON (file-vs-file mode)")
    p.add_argument("--gt", help="ground-truth labels JSON (file-vs-file mode)")
    p.add_argument("--restrict", action="store_true",
                   help="mask logits of undeclared classes at inference")
    p.add_argument("--out", help="write the report JSON here")

    p = add("segment", _cmd_segment, "segment one scan")
    p.add_argument("scan")
    p.add_argument("--garments", help="names list or 18-bit mask")
    p.add_argument("--body", help="body params JSON file")
    p.add_argument("--labels", help="labels JSON carrying garments/body")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--no-restrict", action="store_true")
    p.add_argument("--cache-dir", help="body feature cache directory")

    p = add("refine", _cmd_refine, "refine a checkpoint from user corrections")
    p.add_argument("--ckpt")
    p.add_argument("--scan")
    p.add_argument("--labels", help="labels JSON (current labels + metadata)")
    p.add_argument("--garments")
    p.add_argument("--body")
    p.add_argument("--corrections",
                   help='JSON {"indices": [...], "class_id": k | "labels": [...]}')
    p.add_argument("--suite", help="manifest for the regression suite")
    p.add_argument("--lambdas", help="c,f,w (default 0.1,1.0,0.1)")
    p.add_argument("--preset", help="loss preset: naive, weighted, or full")
    p.add_argument("--layers", help="comma-separated trainable layer names")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--ckpt-out")
    p.add_argument("--out", help="write the report JSON here")

    p = add("clean", _cmd_clean, "apply body-part plausibility rules")
    p.add_argument("--scan")
    p.add_argument("--labels")
    p.add_argument("--rules", help="rules JSON (defaults to built-in rules)")
    p.add_argument("--body-model")
    p.add_argument("--out")
    p.add_argument("--k", type=int, default=8)

    p = add("merge3", _cmd_merge3, "merge fine labels into upper/lower/body")
    p.add_argument("--labels")
    p.add_argument("--map", help="JSON overriding the merge map")
    p.add_argument("--out")

    p = add("attn-map", _cmd_attn_map, "export a garment attention map")
    p.add_argument("--ckpt")
    p.add_argument("--scan")
    p.add_argument("--labels")
    p.add_argument("--cls", dest="cls", metavar="CLASS")
    p.add_argument("--out")

    p = add("serve", _cmd_serve, "run the annotation HTTP service")
    p.add_argument("--ckpt", help="checkpoint path (or CLOSE_CKPT_DIR)")
    p.add_argument("--scan-dir", help="scan store (or CLOSE_SCAN_DIR)")
    p.add_argument("--port", type=int, help="port (or CLOSE_PORT)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--suite", help="regression-suite manifest")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        args = _with_config_defaults(args, list(argv))
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except RuntimeFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except GarmsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
