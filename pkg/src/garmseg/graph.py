"""Exact k-nearest-neighbor graphs.

The point encoder rebuilds this graph per layer in the current feature
space, so the builder accepts points of any dimension. Search is exhaustive
with distance ties broken by lowest index, which keeps graphs
bit-reproducible across runs and point permutations.

Squared distances use the |a|^2+|b|^2-2ab expansion in float64; ties are
therefore exact whenever coordinates are exactly representable (integer
grids, duplicated points). Internally runs on torch (topk candidates plus
a stable re-sort, falling back to a full stable argsort whenever a tie
could cross the selection boundary) so the network's per-layer rebuilds
stay in one thread pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError

_TIE_BUFFER = 8


@dataclass(frozen=True)
class KnnGraph:
    """Directed graph: row i lists the k neighbors of point i."""

    neighbors: np.ndarray  # (n, k) int64

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def num_points(self) -> int:
        return self.neighbors.shape[0]


def _sq_distances(points: torch.Tensor) -> torch.Tensor:
    sq = (points * points).sum(dim=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    d2.clamp_(min=0.0)
    d2.fill_diagonal_(torch.inf)
    return d2


def _stable_smallest_k(d2: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k smallest entries per row, ties to the lowest index."""
    n = d2.shape[0]
    take = min(k + _TIE_BUFFER, n)
    vals, idx = torch.topk(d2, take, dim=1, largest=False)
    # order candidates by index, then stable-sort by value: ties keep the
    # lower index first
    idx, perm = idx.sort(dim=1)
    vals = vals.gather(1, perm)
    order = vals.argsort(dim=1, stable=True)
    idx = idx.gather(1, order[:, :k])
    if take < n:
        # a tie across the candidate boundary could hide a lower index;
        # redo those rows with a full stable sort
        kth = vals.gather(1, order[:, k - 1:k])
        risky = (kth >= vals.gather(1, order[:, take - 1:take])).squeeze(1)
        if bool(risky.any()):
            full = d2[risky].argsort(dim=1, stable=True)
            idx[risky] = full[:, :k]
    return idx


def knn_neighbors(points: torch.Tensor, k: int) -> torch.Tensor:
    """Torch-side kNN used inside the network; k is clipped to n-1."""
    n = points.shape[0]
    if n < 2:
        raise ValidationError(f"kNN graph needs at least 2 points, got {n}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    k = min(k, n - 1)
    with torch.no_grad():
        return _stable_smallest_k(_sq_distances(points.detach()), k)


def build_knn_graph(points: np.ndarray, k: int) -> KnnGraph:
    """Exact Euclidean kNN without self-loops; k is clipped to n-1."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValidationError(f"points must be 2-D, got shape {points.shape}")
    nbrs = knn_neighbors(torch.from_numpy(np.ascontiguousarray(points)), k)
    return KnnGraph(neighbors=nbrs.numpy())
