"""Continual-learning refinement from user label corrections.

A session freezes the pre-refinement network as reference and trains a
working copy with three terms: cross entropy on the user-corrected points,
cross entropy on the remaining points against the reference model's own
predictions (the stability set), and a squared-L2 anchor on the trainable
weights toward their reference values. Only a named subset of layers trains
(by default the decoder's last layer and the point encoder's global MLP);
everything else stays bit-identical.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .body import BodyModel
from .errors import ValidationError
from .metrics import iou
from .network import (DEFAULT_REFINE_LAYERS, SegmentationNet, ce_loss,
                      params_for_layers)
from .scan import ScanSample
from .taxonomy import DEFAULT_TAXONOMY, LabelTaxonomy
from .training import _prepare, evaluate, segment

DEFAULT_LAMBDAS = {"c": 0.1, "f": 1.0, "w": 0.1}
DEFAULT_BUDGET_POINTS = 1.5  # allowed suite mIoU drop, in IoU percentage points

# loss-variant presets (correction emphasis / weighted CE / full objective);
# all honor the required c < f ordering
REFINE_PRESETS = {
    "naive": {"c": 0.4, "f": 1.0, "w": 0.0},
    "weighted": {"c": 0.1, "f": 1.0, "w": 0.0},
    "full": dict(DEFAULT_LAMBDAS),
}


@dataclass
class RefinementSession:
    """Owns the working network for one scan's refinement."""

    reference: SegmentationNet         # frozen pre-refinement weights
    working: SegmentationNet           # the copy being trained
    scan: ScanSample
    corrected: np.ndarray              # user-corrected point indices (C)
    target_labels: torch.Tensor        # current field with corrections applied
    ref_predictions: torch.Tensor      # reference argmax on the scan
    ref_log_probs: torch.Tensor        # reference distribution over declared
                                       # classes, stability targets on F
    lambdas: dict = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    trainable_layers: tuple = DEFAULT_REFINE_LAYERS
    feats9: torch.Tensor | None = None
    garments: torch.Tensor | None = None
    body_feats: torch.Tensor | None = None

    @property
    def uncorrected(self) -> np.ndarray:
        mask = np.ones(self.scan.num_points, dtype=bool)
        mask[self.corrected] = False
        return np.flatnonzero(mask)


def create_session(net: SegmentationNet, scan: ScanSample,
                   corrected_indices, corrected_labels,
                   body_model: BodyModel | None = None,
                   base_labels: np.ndarray | None = None,
                   lambdas: dict | None = None,
                   trainable_layers=DEFAULT_REFINE_LAYERS) -> RefinementSession:
    """Build a refinement session from user corrections.

    ``corrected_labels`` are the user's 0-based classes on
    ``corrected_indices``; ``base_labels`` is the label field being fixed
    (defaults to the model's own unrestricted predictions).
    """
    raw_idx = np.asarray(corrected_indices, dtype=np.int64)
    if raw_idx.size == 0:
        raise ValidationError("nothing corrected: the corrected set is empty")
    if raw_idx.min() < 0 or raw_idx.max() >= scan.num_points:
        raise ValidationError("corrected indices outside the scan")
    corrected_labels = np.asarray(corrected_labels, dtype=np.int64)
    if corrected_labels.size == 1:
        corrected_labels = np.full(raw_idx.size, int(corrected_labels))
    if corrected_labels.shape != raw_idx.shape:
        raise ValidationError(
            f"{raw_idx.size} corrected indices but "
            f"{corrected_labels.size} labels")
    # sort indices and labels together; reject conflicting duplicates
    order = np.argsort(raw_idx, kind="stable")
    sorted_idx, sorted_labels = raw_idx[order], corrected_labels[order]
    corrected, first = np.unique(sorted_idx, return_index=True)
    if corrected.size != sorted_idx.size:
        dup_ok = all(
            np.unique(sorted_labels[sorted_idx == i]).size == 1
            for i in corrected)
        if not dup_ok:
            raise ValidationError(
                "conflicting duplicate corrections for the same point")
    corrected_labels = sorted_labels[first]
    num_classes = net.config.num_classes
    if corrected_labels.min() < 0 or corrected_labels.max() >= num_classes:
        raise ValidationError("corrected labels out of range")
    lams = dict(DEFAULT_LAMBDAS)
    lams.update(lambdas or {})
    if lams["c"] >= lams["f"]:
        raise ValidationError(
            f"correction weight must stay below the stability weight "
            f"(got c={lams['c']}, f={lams['f']})")
    if lams["c"] >= lams["f"] / 2:
        warnings.warn(
            f"correction weight c={lams['c']} is close to f={lams['f']}; "
            "the stability term may no longer dominate", stacklevel=2)
    params_for_layers(net, trainable_layers)  # validate names early
    feats9, garments, body_t, _ = _prepare(scan, net.config, body_model)
    # stability targets come from the reference model's own view of the
    # scan, restricted to declared garments like every tool-facing path
    with torch.no_grad():
        ref_logits = net(feats9, garments, body_t, restrict=True)
    ref_pred = ref_logits.argmax(dim=1)
    present_cols = torch.from_numpy(scan.garments.present_indices())
    ref_log_probs = torch.log_softmax(ref_logits[:, present_cols], dim=1)
    if base_labels is None:
        base = ref_pred.numpy().copy()
    else:
        base = np.asarray(base_labels, dtype=np.int64).copy()
        if base.shape[0] != scan.num_points:
            raise ValidationError("base label field length mismatch")
    base[corrected] = corrected_labels
    working = copy.deepcopy(net)
    return RefinementSession(
        reference=net, working=working, scan=scan, corrected=corrected,
        target_labels=torch.from_numpy(base), ref_predictions=ref_pred,
        ref_log_probs=ref_log_probs, lambdas=lams,
        trainable_layers=tuple(trainable_layers),
        feats9=feats9, garments=garments, body_feats=body_t)


def refine_loss(session: RefinementSession, logits: torch.Tensor,
                user_labels: torch.Tensor | None = None,
                data_terms_only: bool = False) -> tuple[torch.Tensor, dict]:
    """Correction CE + stability term + weight anchor; returns (loss, parts).

    The stability term matches the uncorrected points against the reference
    model's own predicted distribution (cross entropy up to the reference
    entropy, i.e. a KL divergence): it is exactly zero, with zero gradient,
    while the working model still behaves like the reference there.

    ``data_terms_only`` drops the weight anchor from the returned loss (the
    optimizer applies it as an exact proximal shrink instead); the reported
    parts always include all three terms.
    """
    if session.corrected.size == 0:
        raise ValidationError("nothing corrected: the corrected set is empty")
    targets = session.target_labels if user_labels is None else user_labels
    c_idx = torch.from_numpy(session.corrected)
    f_idx = torch.from_numpy(session.uncorrected)
    term_c = ce_loss(logits[c_idx], targets[c_idx])
    if f_idx.numel():
        present_cols = torch.nonzero(
            session.garments.to(torch.bool), as_tuple=True)[0]
        log_probs = torch.log_softmax(logits[f_idx][:, present_cols], dim=1)
        term_f = torch.nn.functional.kl_div(
            log_probs, session.ref_log_probs[f_idx],
            reduction="batchmean", log_target=True)
    else:
        term_f = logits.new_zeros(())
    ref_params = dict(session.reference.named_parameters())
    term_w = logits.new_zeros(())
    for name, param in params_for_layers(session.working,
                                         session.trainable_layers).items():
        term_w = term_w + ((param - ref_params[name]) ** 2).sum()
    lams = session.lambdas
    loss = lams["c"] * term_c + lams["f"] * term_f
    if not data_terms_only:
        loss = loss + lams["w"] * term_w
    return loss, {"correction_ce": term_c.item(),
                  "stability_ce": term_f.item(),
                  "weight_anchor": term_w.item()}


def weight_delta_norm(session: RefinementSession) -> float:
    ref_params = dict(session.reference.named_parameters())
    with torch.no_grad():
        total = sum(((param - ref_params[name]) ** 2).sum().item()
                    for name, param in session.working.named_parameters())
    return float(np.sqrt(total))


def _target_miou(session: RefinementSession, net: SegmentationNet,
                 num_classes: int) -> float:
    with torch.no_grad():
        logits = net(session.feats9, session.garments, session.body_feats,
                     restrict=True)
    pred = logits.argmax(dim=1).numpy()
    return iou(pred, session.target_labels.numpy(), num_classes)[1]


def refine(session: RefinementSession, epochs: int = 2,
           steps_per_epoch: int = 25, lr: float = 0.3,
           suite: list[ScanSample] | None = None,
           body_model: BodyModel | None = None,
           taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY) -> dict:
    """Fine-tune the trainable layers for a fixed number of epochs.

    Returns the before/after report; the refined weights live in
    ``session.working``. Layers outside the trainable mask are untouched.
    """
    net = session.working
    num_classes = net.config.num_classes
    trainable = params_for_layers(net, session.trainable_layers)
    report = {
        "target_iou_before": _target_miou(session, session.reference,
                                          num_classes),
        "epochs": epochs,
        "lambdas": dict(session.lambdas),
        "trainable_layers": list(session.trainable_layers),
    }
    suite_before = None
    if suite:
        suite_before = evaluate(suite, session.reference, body_model,
                                taxonomy).mean_iou
    report["suite_miou_before"] = suite_before

    with torch.no_grad():
        logits = net(session.feats9, session.garments, session.body_feats,
                     restrict=True)
    c_idx = torch.from_numpy(session.corrected)
    satisfied = bool(
        (logits.argmax(dim=1)[c_idx] == session.target_labels[c_idx]).all())
    frozen = [p for name, p in net.named_parameters() if name not in trainable]
    for p in frozen:
        p.requires_grad_(False)
    # plain SGD on the data terms: steps stay proportional to the actual
    # gradients, so weights the corrections never touch stay put (Adam would
    # random-walk them all). The weight anchor applies as its exact proximal
    # shrink toward the reference after each step, stable for any lambda_w.
    optimizer = torch.optim.SGD(trainable.values(), lr=lr)
    ref_params = dict(session.reference.named_parameters())
    shrink = 1.0 / (1.0 + 2.0 * session.lambdas["w"] * lr)
    # the working net stays in eval mode: refinement trains a thin layer
    # subset and the stability term must start at exactly zero (dropout
    # noise would reintroduce drift)
    try:
        for _ in range(epochs if not satisfied else 0):
            for _ in range(steps_per_epoch):
                optimizer.zero_grad()
                logits = net(session.feats9, session.garments,
                             session.body_feats)
                loss, _ = refine_loss(session, logits, data_terms_only=True)
                loss.backward()
                optimizer.step()
                with torch.no_grad():
                    for name, param in trainable.items():
                        ref = ref_params[name]
                        param.copy_(ref + (param - ref) * shrink)
    finally:
        for p in frozen:
            p.requires_grad_(True)

    report["target_iou_after"] = _target_miou(session, net, num_classes)
    report["suite_miou_after"] = (
        evaluate(suite, net, body_model, taxonomy).mean_iou if suite else None)
    report["weight_delta_norm"] = weight_delta_norm(session)
    return report


def regression_guard(net: SegmentationNet, suite: list[ScanSample],
                     baseline_miou: float,
                     body_model: BodyModel | None = None,
                     taxonomy: LabelTaxonomy = DEFAULT_TAXONOMY,
                     budget_points: float = DEFAULT_BUDGET_POINTS
                     ) -> tuple[bool, float]:
    """Fails when suite mIoU drops more than the budget (in 0-100 points)."""
    if not suite:
        raise ValidationError("regression suite is empty")
    current = evaluate(suite, net, body_model, taxonomy).mean_iou
    drop_points = (baseline_miou - current) * 100.0
    return drop_points <= budget_points, drop_points


def apply_to_labels(labels: np.ndarray, indices, class_id: int,
                    num_classes: int) -> np.ndarray:
    """Apply one correction batch to a label field (returns a copy)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValidationError("empty correction selection")
    if indices.min() < 0 or indices.max() >= labels.shape[0]:
        raise ValidationError("correction indices outside the scan")
    if not 0 <= class_id < num_classes:
        raise ValidationError(f"class id {class_id} out of range")
    out = labels.copy()
    out[indices] = class_id
    return out
