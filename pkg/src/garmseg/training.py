"""Training loop, evaluation harness, and whole-scan inference.

Body features are computed in the scan's native frame (where the body fit
lives); the network consumes centroid-centered positions. Evaluation pools
intersections and unions over the whole dataset before dividing (the
headline number) and also reports the per-scan average.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .body import BodyModel, encode_body
from .errors import RuntimeFailure, ValidationError
from .metrics import confusion_matrix, iou_from_confusion
from .network import (NetworkConfig, SegmentationNet, ce_loss, save_checkpoint)
from .scan import ScanSample, normalize
from .taxonomy import DEFAULT_TAXONOMY, LabelTaxonomy


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    epochs: int = 120
    batch_size: int = 2
    lr: float = 1e-2
    lr_schedule: str = "cosine"   # or "constant"
    weight_decay: float = 1e-3
    seed: int = 0
    sample_points: int = 512
    class_weighting: bool = False  # inverse-frequency CE weights; default off

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.sample_points < 1:
            raise ValidationError("epochs, batch size, sample_points must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValidationError("lr_schedule must be 'cosine' or 'constant'")
        if isinstance(self.network, dict):
            object.__setattr__(self, "network", NetworkConfig(**self.network))


@dataclass
class EvalReport:
    per_class: list        # taxonomy-length list, None where class absent
    mean_iou: float        # pooled over the dataset
    mean_iou_scan_averaged: float
    per_scan: dict         # scan id -> pooled mIoU of that scan
    wall_clock_s: float
    num_scans: int

    def to_json(self) -> dict:
        return asdict(self)


def _prepare(scan: ScanSample, net_config: NetworkConfig,
             body_model: BodyModel | None, cache_dir=None):
    """Tensors for one scan: 9-channel features, garments, body features."""
    if scan.garments is None:
        raise ValidationError(f"scan {scan.id!r} has no garment vector")
    body_t = None
    if net_config.body_encoder == "hybrid":
        from .body import encode_body_hybrid
        encode_body_hybrid(scan, body_model)  # interface stub, raises
    if net_config.body_encoder == "canonical":
        if body_model is None:
            raise ValidationError("canonical body encoder needs a body model")
        feats = encode_body(scan, body_model, cache_dir=cache_dir)
        body_t = torch.from_numpy(feats.template_coords)
    centered, _ = normalize(scan)
    feats9 = torch.from_numpy(centered.features9())
    garments = torch.from_numpy(scan.garments.asarray())
    labels = None if scan.labels is None else torch.from_numpy(scan.labels)
    return feats9, garments, body_t, labels


def train(train_scans: list[ScanSample], val_scans: list[ScanSample],
          config: TrainConfig, body_model: BodyModel | None = None,
          taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
          log=None) -> tuple[SegmentationNet, list[dict]]:
    """Adam descent on cross entropy; keeps the best-on-validation weights."""
    if not train_scans:
        raise ValidationError("training set is empty")
    for scan in train_scans:
        if scan.labels is None or scan.garments is None:
            raise ValidationError(
                f"scan {scan.id!r} lacks labels or garment vector")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    net = SegmentationNet(config.network, seed=config.seed)
    prepared = [_prepare(s, config.network, body_model) for s in train_scans]
    class_weights = None
    if config.class_weighting:
        counts = np.zeros(config.network.num_classes)
        for scan in train_scans:
            counts += np.bincount(scan.labels,
                                  minlength=config.network.num_classes)
        weights = np.where(counts > 0, counts.sum() / np.maximum(counts, 1), 0.0)
        class_weights = torch.from_numpy(
            weights / max(weights[counts > 0].mean(), 1e-12))
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr,
                                 weight_decay=config.weight_decay)
    scheduler = None
    if config.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=config.epochs)
    history = []
    best = (-1.0, None, -1)  # (val miou, state_dict, epoch)
    for epoch in range(config.epochs):
        net.train()
        order = rng.permutation(len(train_scans))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            optimizer.zero_grad()
            losses = []
            for idx in batch:
                feats9, garments, body_t, labels = prepared[idx]
                n = feats9.shape[0]
                if n > config.sample_points:
                    pick = rng.choice(n, size=config.sample_points, replace=False)
                    pick_t = torch.from_numpy(pick)
                    feats9, labels = feats9[pick_t], labels[pick_t]
                    body_t = None if body_t is None else body_t[pick_t]
                logits = net(feats9, garments, body_t)
                losses.append(ce_loss(logits, labels, weight=class_weights))
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                ids = [train_scans[i].id for i in batch]
                raise RuntimeFailure(
                    f"non-finite loss at epoch {epoch} on batch {ids}")
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
        if scheduler is not None:
            scheduler.step()
        val_miou = float("nan")
        if val_scans:
            val_miou = evaluate(val_scans, net, body_model, taxonomy).mean_iou
            if val_miou > best[0]:
                best = (val_miou,
                        {k: v.detach().clone() for k, v in
                         net.state_dict().items()},
                        epoch)
        row = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
               "val_miou": val_miou,
               "lr": optimizer.param_groups[0]["lr"]}
        history.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {row['train_loss']:.4f}  "
                f"val mIoU {val_miou:.4f}")
    net.eval()
    if best[1] is not None:
        net.load_state_dict(best[1])
    return net, history


@torch.no_grad()
def segment(scan: ScanSample, net: SegmentationNet,
            body_model: BodyModel | None = None, restrict: bool = True,
            chunk_size: int = 8192, cache_dir=None
            ) -> tuple[np.ndarray, np.ndarray]:
    """Predict 0-based labels and per-point confidence for a whole scan.

    Point encoding sees the full cloud (the graph and global pooling need
    it); the attention/decoder stages run in point chunks so peak memory
    past the encoder stays O(chunk).
    """
    feats9, garments, body_t, _ = _prepare(scan, net.config, body_model,
                                           cache_dir=cache_dir)
    net.eval()
    per_layer, _, f_p = net.point_encoder(feats9)
    n = feats9.shape[0]
    labels = np.empty(n, dtype=np.int64)
    confidence = np.empty(n, dtype=np.float64)
    absent = ~garments.to(dtype=torch.bool)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        pieces = [f_p[start:stop]]
        if net.config.body_encoder == "canonical":
            pieces.append(body_t[start:stop])
        if net.config.clothing_encoder == "attention":
            pieces.append(net.clothing(per_layer[2][start:stop],
                                       feats9[start:stop, :3], garments))
        elif net.config.clothing_encoder == "binary":
            g = garments.to(feats9.dtype)
            pieces.append(g[None, :].expand(stop - start, -1))
        logits = net.decoder(torch.cat(pieces, dim=1))
        if restrict:
            logits = logits.masked_fill(absent[None, :], -torch.inf)
        probs = torch.softmax(logits, dim=1)
        conf, pred = probs.max(dim=1)
        labels[start:stop] = pred.numpy()
        confidence[start:stop] = conf.numpy()
    return labels, confidence


def evaluate(scans: list[ScanSample], net: SegmentationNet,
             body_model: BodyModel | None = None,
             taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
             restrict: bool = False, cache_dir=None) -> EvalReport:
    """Dataset-level (pooled) IoU plus per-scan breakdown."""
    if not scans:
        raise ValidationError("evaluation set is empty")
    started = time.perf_counter()
    num_classes = taxonomy.num_classes
    pooled = np.zeros((num_classes, num_classes), dtype=np.int64)
    per_scan = {}
    for scan in scans:
        if scan.labels is None:
            raise ValidationError(f"scan {scan.id!r} has no labels to evaluate")
        pred, _ = segment(scan, net, body_model, restrict=restrict,
                          cache_dir=cache_dir)
        cm = confusion_matrix(pred, scan.labels, num_classes)
        pooled += cm
        per_scan[scan.id] = iou_from_confusion(cm)[1]
    per_class, mean = iou_from_confusion(pooled)
    return EvalReport(
        per_class=[None if np.isnan(v) else float(v) for v in per_class],
        mean_iou=mean,
        mean_iou_scan_averaged=float(np.mean(list(per_scan.values()))),
        per_scan=per_scan,
        wall_clock_s=time.perf_counter() - started,
        num_scans=len(scans))


def check_eval_compatible(net: SegmentationNet, config: NetworkConfig) -> None:
    """Checkpoints carry their ablation flags; evaluation refuses a mismatch."""
    for flag in ("body_encoder", "clothing_encoder", "mask_mode"):
        have, want = getattr(net.config, flag), getattr(config, flag)
        if have != want:
            raise ValidationError(
                f"checkpoint was trained with {flag}={have!r}; "
                f"evaluation requested {flag}={want!r}")


def write_history_csv(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def run_training(train_scans, val_scans, config: TrainConfig,
                 body_model: BodyModel | None, out_dir,
                 taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY, log=None) -> dict:
    """Programmatic train entry: checkpoint + history.csv + report.json."""
    from pathlib import Path
    import json
    from .body import body_model_to_doc

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net, history = train(train_scans, val_scans, config, body_model,
                         taxonomy, log=log)
    ckpt = out_dir / "model.ckpt"
    extra = {"train_config": {
        "epochs": config.epochs, "batch_size": config.batch_size,
        "lr": config.lr, "lr_schedule": config.lr_schedule,
        "seed": config.seed, "sample_points": config.sample_points}}
    if body_model is not None:
        extra["body_model"] = body_model_to_doc(body_model)
    save_checkpoint(ckpt, net, taxonomy, extra=extra)
    write_history_csv(history, out_dir / "history.csv")
    report = {"checkpoint": ckpt.name,
              "final_train_loss": history[-1]["train_loss"],
              "best_val_miou": max((h["val_miou"] for h in history
                                    if not np.isnan(h["val_miou"])),
                                   default=None)}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    return {"checkpoint": str(ckpt), "history": history, "report": report}
