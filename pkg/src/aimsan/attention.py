"""Dynamic adjacency from masked cross-attention scores.

Scores are raw Q.K dot products over the temporal axis, evaluated only at
pairs stored in the sparsity mask (O(N*k) per head), then head-averaged,
clamped nonnegative and symmetrically normalized. A dense oracle path exists
for equivalence checks and benchmarking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SparseMask, SparseScores, normalize_sparse
from .tensor import ShapeError, Tensor, concat, pointwise_conv


class ScoreCounter:
    """Counts pairwise score evaluations (one dot product per counted pair)."""

    def __init__(self):
        self.total = 0
        self.last_pairs_per_instance = 0

    def reset(self):
        self.total = 0
        self.last_pairs_per_instance = 0

    def add(self, pairs_per_instance: int, instances: int):
        self.last_pairs_per_instance = pairs_per_instance
        self.total += pairs_per_instance * instances


score_counter = ScoreCounter()


@dataclass
class AttentionHeads:
    """Projection weights mapping concatenated channels to h score channels."""
    h: int
    q_weight: Tensor  # [h, C]
    q_bias: Tensor    # [h]
    k_weight: Tensor  # [h, C]
    k_bias: Tensor    # [h]

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("head count must be >= 1")
        if self.q_weight.shape != self.k_weight.shape or self.q_weight.shape[0] != self.h:
            raise ShapeError("projector shapes inconsistent with head count")


def attention_scores_sparse(q: Tensor, k: Tensor,
                            mask: SparseMask) -> SparseScores:
    """Per-entry dot products q[.., i, :] . k[.., j, :] for stored (i, j) only.

    q, k: [B, h, N, T]; result values: [B, h, nnz]. Unstored pairs are never
    computed; the module counter advances by exactly nnz per (batch, head).
    """
    if q.shape != k.shape:
        raise ShapeError(f"q/k shape mismatch: {q.shape} vs {k.shape}")
    if q.ndim != 4 or q.shape[2] != mask.n:
        raise ShapeError(f"expected [B,h,N,T] with N={mask.n}, got {q.shape}")
    rows, cols = mask.rows, mask.col_indices
    b, h = q.shape[0], q.shape[1]
    vals = np.einsum("bhet,bhet->bhe", q.data[:, :, rows, :],
                     k.data[:, :, cols, :], optimize=True)
    score_counter.add(mask.nnz, b * h)
    out = Tensor(vals, _parents=(q, k))

    def bw(g):
        if q.requires_grad:
            q._accumulate(mask.scatter_rows(
                g[..., None] * k.data[:, :, cols, :], axis=2))
        if k.requires_grad:
            k._accumulate(mask.scatter_cols(
                g[..., None] * q.data[:, :, rows, :], axis=2))
    out._backward_fn = bw
    return SparseScores(mask, out)


def attention_scores_dense_oracle(q: Tensor, k: Tensor,
                                  mask_dense: np.ndarray) -> Tensor:
    """Full q.k^T followed by an elementwise mask multiply; O(N^2) reference."""
    if q.shape != k.shape:
        raise ShapeError(f"q/k shape mismatch: {q.shape} vs {k.shape}")
    n = q.shape[2]
    b, h = q.shape[0], q.shape[1]
    score_counter.add(n * n, b * h)
    scores = q.matmul(k.transpose((0, 1, 3, 2)))
    return scores * Tensor(mask_dense.astype(q.dtype))


def head_pool(per_head: SparseScores) -> SparseScores:
    """Arithmetic mean over the head axis: [B, h, nnz] -> [B, nnz]."""
    if per_head.values.ndim != 3:
        raise ShapeError(f"expected [B,h,nnz] values, got {per_head.values.shape}")
    return SparseScores(per_head.pattern, per_head.values.mean_axis(1))


def dynamic_adjacency(i_j: Tensor, d_next, heads: AttentionHeads,
                      mask: SparseMask) -> SparseScores:
    """Per-sample normalized adjacency from hidden data + embedded aux.

    i_j: [B, C, N, T]; d_next: EmbeddedAux aligned to T (or None to attend on
    hidden data alone). Pipeline: channel concat -> q/k projections ->
    masked sparse scores -> head mean -> relu clamp -> D^{-1/2}(A+I)D^{-1/2}.
    """
    feats = i_j if d_next is None else concat([i_j, d_next.values], axis=1)
    q = pointwise_conv(feats, heads.q_weight, heads.q_bias)
    k = pointwise_conv(feats, heads.k_weight, heads.k_bias)
    scores = attention_scores_sparse(q, k, mask)
    pooled = head_pool(scores)
    clamped = SparseScores(pooled.pattern, pooled.values.relu())
    return normalize_sparse(clamped)
