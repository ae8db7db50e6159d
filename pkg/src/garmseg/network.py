"""Segmentation network: dynamic-graph edge convolutions over the colored
point cloud, a garment codebook attended to by per-point features, the
canonical body feature, and an MLP decoder over the concatenation.

Everything runs in float64 on CPU: desk-scale clouds are small, gradient
checks are tight, and forward passes stay bit-reproducible. A single scan
is one forward call (no padded batching); the training loop accumulates
over scans.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ValidationError
from .graph import knn_neighbors
from .taxonomy import LabelTaxonomy, NUM_CLASSES

DTYPE = torch.float64

BODY_ENCODERS = ("canonical", "none", "hybrid")
CLOTHING_ENCODERS = ("attention", "binary", "none")
MASK_MODES = ("neg_inf", "zero_key")


@dataclass(frozen=True)
class NetworkConfig:
    k: int = 20
    l: int = 64
    global_width: int = 1024
    n_heads: int = 4
    num_classes: int = NUM_CLASSES
    pe_bands: int = 6
    body_encoder: str = "canonical"
    clothing_encoder: str = "attention"
    mask_mode: str = "neg_inf"
    static_graph: bool = False
    decoder_widths: tuple[int, ...] = (256, 128)
    dropout: float = 0.3

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if min(self.l, self.global_width, self.num_classes, self.pe_bands) < 1:
            raise ValidationError("all widths must be positive")
        if self.l % self.n_heads != 0:
            raise ValidationError(
                f"feature width {self.l} not divisible by {self.n_heads} heads")
        if self.body_encoder not in BODY_ENCODERS:
            raise ValidationError(f"body_encoder must be one of {BODY_ENCODERS}")
        if self.clothing_encoder not in CLOTHING_ENCODERS:
            raise ValidationError(
                f"clothing_encoder must be one of {CLOTHING_ENCODERS}")
        if self.mask_mode not in MASK_MODES:
            raise ValidationError(f"mask_mode must be one of {MASK_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if isinstance(self.decoder_widths, list):
            object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))

    @property
    def point_feature_width(self) -> int:
        return 3 * self.l + self.global_width

    @property
    def body_feature_width(self) -> int:
        return 3 if self.body_encoder == "canonical" else 0

    @property
    def clothing_feature_width(self) -> int:
        if self.clothing_encoder == "attention":
            return self.l
        if self.clothing_encoder == "binary":
            return self.num_classes
        return 0

    @property
    def decoder_input_width(self) -> int:
        return (self.point_feature_width + self.body_feature_width
                + self.clothing_feature_width)

    @property
    def pe_width(self) -> int:
        return 3 * 2 * self.pe_bands


def positional_encoding(positions: torch.Tensor, bands: int) -> torch.Tensor:
    """Sinusoidal encoding of 3-D positions: sin/cos of 2^b * pi * x."""
    freqs = (2.0 ** torch.arange(bands, dtype=positions.dtype)) * torch.pi
    angles = positions[:, :, None] * freqs  # (n, 3, bands)
    enc = torch.cat([torch.sin(angles), torch.cos(angles)], dim=2)
    return enc.reshape(positions.shape[0], -1)


class EdgeConvLayer(nn.Module):
    """p'_i = max_j h((p_i, p_j - p_i)) over the k graph neighbors of i."""

    def __init__(self, in_width: int, out_width: int):
        super().__init__()
        self.linear = nn.Linear(2 * in_width, out_width, bias=False)
        self.norm = nn.LayerNorm(out_width)

    def forward(self, feats: torch.Tensor, neighbors: torch.Tensor
                ) -> torch.Tensor:
        if feats.shape[1] * 2 != self.linear.in_features:
            raise ValidationError(
                f"edge layer expects width {self.linear.in_features // 2}, "
                f"got {feats.shape[1]}")
        nbr = feats[neighbors]                      # (n, k, F)
        center = feats[:, None, :].expand_as(nbr)   # (n, k, F)
        edge = torch.cat([center, nbr - center], dim=2)
        out = F.leaky_relu(self.norm(self.linear(edge)), negative_slope=0.2)
        return out.max(dim=1).values


class PointEncoder(nn.Module):
    """Three edge-conv scales plus a max-pooled global MLP encoding."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        widths = [9, config.l, config.l]
        self.convs = nn.ModuleList(
            [EdgeConvLayer(w, config.l) for w in widths])
        self.global_mlp = nn.Sequential(
            nn.Linear(3 * config.l, config.global_width, bias=False),
            nn.LayerNorm(config.global_width),
            nn.LeakyReLU(negative_slope=0.2),
        )

    def _graph(self, feats: torch.Tensor) -> torch.Tensor:
        return knn_neighbors(feats, self.config.k)

    def forward(self, feats9: torch.Tensor
                ) -> tuple[list[torch.Tensor], torch.Tensor, torch.Tensor]:
        """Returns (per-layer features, global vector, per-point bundle)."""
        positions = feats9[:, :3]
        neighbors = self._graph(positions)
        per_layer = []
        current = feats9
        for i, conv in enumerate(self.convs):
            if i > 0 and not self.config.static_graph:
                neighbors = self._graph(current)
            current = conv(current, neighbors)
            per_layer.append(current)
        stacked = torch.cat(per_layer, dim=1)           # (n, 3l)
        pooled = self.global_mlp(stacked).max(dim=0).values  # (global_width,)
        f_p = torch.cat(
            [stacked, pooled[None, :].expand(stacked.shape[0], -1)], dim=1)
        return per_layer, pooled, f_p


class ClothingAttention(nn.Module):
    """Multi-head attention from point features to the garment codebook.

    Queries come from the last edge-conv scale with a positional encoding
    appended; keys/values are projections of the learnable codebook. Classes
    absent from the garment vector get exactly zero attention weight
    (``neg_inf`` masking); ``zero_key`` keeps the literal zeroed-key variant
    for ablation, which yields logit 0 rather than weight 0.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        l, heads = config.l, config.n_heads
        self.head_width = l // heads
        self.codebook = nn.Parameter(
            torch.randn(config.num_classes, l) / np.sqrt(l))
        self.q_proj = nn.Linear(l + config.pe_width, l)
        self.k_proj = nn.Linear(l, l)
        self.v_proj = nn.Linear(l, l)
        self.out_proj = nn.Linear(l, l)

    def forward(self, queries: torch.Tensor, positions: torch.Tensor,
                garments: torch.Tensor, return_weights: bool = False):
        present = garments.to(dtype=torch.bool)
        if not bool(present.any()):
            raise ValidationError("no garment classes declared")
        n = queries.shape[0]
        heads, dh = self.config.n_heads, self.head_width
        pe = positional_encoding(positions, self.config.pe_bands)
        q = self.q_proj(torch.cat([queries, pe], dim=1))
        q = q.reshape(n, heads, dh).transpose(0, 1)            # (h, n, dh)
        k = self.k_proj(self.codebook)
        v = self.v_proj(self.codebook)
        if self.config.mask_mode == "zero_key":
            k = k * present[:, None].to(k.dtype)
        k = k.reshape(-1, heads, dh).transpose(0, 1)           # (h, K, dh)
        v = v.reshape(-1, heads, dh).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / np.sqrt(dh)           # (h, n, K)
        if self.config.mask_mode == "neg_inf":
            scores = scores.masked_fill(~present[None, None, :], -torch.inf)
        weights = torch.softmax(scores, dim=2)
        out = (weights @ v).transpose(0, 1).reshape(n, -1)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class SegmentationDecoder(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        layers = []
        width = config.decoder_input_width
        for hidden in config.decoder_widths:
            layers += [nn.Linear(width, hidden), nn.LayerNorm(hidden),
                       nn.LeakyReLU(negative_slope=0.2)]
            width = hidden
        self.hidden = nn.Sequential(*layers)
        self.out = nn.Linear(width, config.num_classes)

    def forward(self, f_all: torch.Tensor) -> torch.Tensor:
        return self.out(self.hidden(f_all))


class SegmentationNet(nn.Module):
    """Full forward pass from a 9-channel cloud to per-point class logits."""

    def __init__(self, config: NetworkConfig, seed: int | None = None):
        super().__init__()
        self.config = config
        if seed is None:
            self._build()
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self._build()
        self.to(DTYPE)
        self.eval()  # deterministic by default; train() enables dropout

    def _build(self):
        self.point_encoder = PointEncoder(self.config)
        self.clothing = (ClothingAttention(self.config)
                         if self.config.clothing_encoder == "attention" else None)
        self.decoder = SegmentationDecoder(self.config)

    def forward(self, feats9: torch.Tensor, garments: torch.Tensor,
                body_feats: torch.Tensor | None = None,
                restrict: bool = False) -> torch.Tensor:
        if feats9.ndim != 2 or feats9.shape[1] != 9:
            raise ValidationError(
                f"expected (n, 9) input features, got {tuple(feats9.shape)}")
        cfg = self.config
        per_layer, _, f_p = self.point_encoder(feats9)
        if self.training and cfg.dropout > 0:
            # regularize only the point-feature bundle: the body and
            # clothing channels are the scan-conditional signals the
            # decoder must never learn to ignore
            f_p = F.dropout(f_p, p=cfg.dropout)
        pieces = [f_p]
        if cfg.body_encoder == "canonical":
            if body_feats is None:
                raise ValidationError(
                    "body features missing; run the body-encoding "
                    "preprocessing step (encode_body) first")
            pieces.append(body_feats)
        if cfg.clothing_encoder == "attention":
            pieces.append(self.clothing(per_layer[2], feats9[:, :3], garments))
        elif cfg.clothing_encoder == "binary":
            g = garments.to(feats9.dtype)
            pieces.append(g[None, :].expand(feats9.shape[0], -1))
        logits = self.decoder(torch.cat(pieces, dim=1))
        if restrict:
            absent = ~garments.to(dtype=torch.bool)
            logits = logits.masked_fill(absent[None, :], -torch.inf)
        return logits


def ce_loss(logits: torch.Tensor, labels: torch.Tensor,
            weight: torch.Tensor | None = None) -> torch.Tensor:
    """Mean cross entropy over points; labels are 0-based class ids."""
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValidationError("label out of range for the logit width")
    return F.cross_entropy(logits, labels, weight=weight)


def export_attention_map(net: SegmentationNet, feats9: torch.Tensor,
                         class_index: int, taxonomy: LabelTaxonomy | None = None,
                         return_raw: bool = False):
    """Per-point similarity to one garment's codebook row, min-max scaled.

    The raw score is the plain dot product between the last edge-conv
    feature and the class row; a constant field normalizes to all zeros.
    """
    if net.clothing is None:
        raise ValidationError("this checkpoint has no clothing attention module")
    num_classes = net.config.num_classes
    if taxonomy is not None and num_classes != taxonomy.num_classes:
        raise ValidationError("network and taxonomy class counts differ")
    if not 0 <= class_index < num_classes:
        raise ValidationError(
            f"class index {class_index} outside 0..{num_classes - 1}")
    with torch.no_grad():
        per_layer, _, _ = net.point_encoder(feats9)
        raw = per_layer[2] @ net.clothing.codebook[class_index]
    raw = raw.numpy()
    span = raw.max() - raw.min()
    scaled = np.zeros_like(raw) if span == 0 else (raw - raw.min()) / span
    if return_raw:
        return scaled, raw
    return scaled


# ---------------------------------------------------------------------------
# refinement layer groups

LAYER_GROUPS = {
    "decoder_last": ("decoder.out.",),
    "decoder_full": ("decoder.",),
    "global_mlp": ("point_encoder.global_mlp.",),
    "edgeconv1": ("point_encoder.convs.0.",),
    "edgeconv2": ("point_encoder.convs.1.",),
    "edgeconv3": ("point_encoder.convs.2.",),
    "clothing": ("clothing.",),
    "codebook": ("clothing.codebook",),
}

DEFAULT_REFINE_LAYERS = ("decoder_last", "global_mlp")


def params_for_layers(net: SegmentationNet, layer_names) -> dict[str, nn.Parameter]:
    unknown = [name for name in layer_names if name not in LAYER_GROUPS]
    if unknown:
        raise ValidationError(
            f"unknown trainable layers {unknown}; known: {sorted(LAYER_GROUPS)}")
    prefixes = tuple(p for name in layer_names for p in LAYER_GROUPS[name])
    selected = {pname: param for pname, param in net.named_parameters()
                if any(pname == p.rstrip(".") or pname.startswith(p)
                       for p in prefixes)}
    if not selected:
        raise ValidationError(
            f"layer selection {tuple(layer_names)} matches no parameters "
            "in this configuration")
    return selected


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(path, net: SegmentationNet, taxonomy: LabelTaxonomy,
                    extra: dict | None = None) -> None:
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "taxonomy_hash": taxonomy.content_hash(),
        "state_dict": net.state_dict(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path, taxonomy: LabelTaxonomy
                    ) -> tuple[SegmentationNet, dict]:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"checkpoint format {blob.get('format_version')!r} unsupported")
    if blob["taxonomy_hash"] != taxonomy.content_hash():
        raise ValidationError(
            "checkpoint was trained against a different label taxonomy; "
            "refusing to load")
    config = NetworkConfig(**blob["config"])
    net = SegmentationNet(config)
    net.load_state_dict(blob["state_dict"])
    return net, blob.get("extra", {})


def checkpoint_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
