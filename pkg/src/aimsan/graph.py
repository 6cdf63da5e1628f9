"""Sparsity masks (CSR pattern) and sparse-matrix utilities for graph conv.

The pattern is fixed per dataset; per-sample attention values live in a
Tensor whose last axis indexes the stored entries, so everything stays
differentiable through the usual reverse-mode machinery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class GraphSpec:
    """Static graph description: node ids, optional coords, distance triples."""
    node_ids: list
    distances: list  # (from_idx, to_idx, distance), indices in [0, N)
    coordinates: np.ndarray | None = None  # [N, 2] (lat, lon)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def validate(self):
        if self.n == 0:
            raise ValueError("graph has no nodes")
        seen = set()
        for i, j, d in self.distances:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i},{j}) outside [0,{self.n})")
            if (i, j) in seen:
                raise ValueError(f"duplicate distance entry ({i},{j})")
            if not np.isfinite(d):
                raise ValueError(f"non-finite distance on edge ({i},{j})")
            seen.add((i, j))


@dataclass
class SparseMask:
    """Row-compressed N x N binary pattern; every row contains its diagonal."""
    n: int
    row_offsets: np.ndarray  # int64, length n+1
    col_indices: np.ndarray  # int64, sorted within each row

    # expanded row index per stored entry plus a column-sorted (CSC) view,
    # all built once; the diagonal guarantees every row/column segment is
    # non-empty, so scatter-adds reduce to np.add.reduceat over segments
    rows: np.ndarray = field(init=False, repr=False)
    diag_positions: np.ndarray = field(init=False, repr=False)
    csc_order: np.ndarray = field(init=False, repr=False)
    csc_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        counts = np.diff(self.row_offsets)
        self.rows = np.repeat(np.arange(self.n, dtype=np.int64), counts)
        diag = np.flatnonzero(self.rows == self.col_indices)
        if diag.size != self.n:
            raise ValueError("mask pattern must contain every diagonal entry")
        self.diag_positions = diag.astype(np.int64)
        self.csc_order = np.argsort(self.col_indices, kind="stable")
        col_counts = np.bincount(self.col_indices, minlength=self.n)
        self.csc_offsets = np.concatenate(
            [[0], np.cumsum(col_counts)]).astype(np.int64)

    def scatter_rows(self, entries: np.ndarray, axis: int) -> np.ndarray:
        """Sum per-entry values into per-row totals along `axis`."""
        return np.add.reduceat(entries, self.row_offsets[:-1], axis=axis)

    def scatter_cols(self, entries: np.ndarray, axis: int) -> np.ndarray:
        """Sum per-entry values into per-column totals along `axis`."""
        permuted = np.take(entries, self.csc_order, axis=axis)
        return np.add.reduceat(permuted, self.csc_offsets[:-1], axis=axis)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def densify(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=np.float64)
        m[self.rows, self.col_indices] = 1.0
        return m

    def same_pattern(self, other: "SparseMask") -> bool:
        return (self.n == other.n
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices))


@dataclass
class SparseScores:
    """Per-entry values over a shared SparseMask pattern.

    values has shape [..., nnz] (leading batch and, for per-head scores,
    head axes).
    """
    pattern: SparseMask
    values: Tensor

    def __post_init__(self):
        if self.values.shape[-1] != self.pattern.nnz:
            raise ShapeError(
                f"values last axis {self.values.shape[-1]} != nnz {self.pattern.nnz}")

    def densify(self) -> np.ndarray:
        p = self.pattern
        out = np.zeros(self.values.shape[:-1] + (p.n, p.n),
                       dtype=self.values.dtype)
        out[..., p.rows, p.col_indices] = self.values.data
        return out


def _rows_from_sets(n: int, row_sets) -> SparseMask:
    cols, offsets = [], [0]
    for i in range(n):
        entries = sorted(row_sets[i] | {i})
        cols.extend(entries)
        offsets.append(len(cols))
    return SparseMask(n, np.asarray(offsets, dtype=np.int64),
                      np.asarray(cols, dtype=np.int64))


def build_mask_topk(spec: GraphSpec, k: int, symmetrize: bool = False) -> SparseMask:
    """Row i keeps node i plus its k nearest neighbors (ties: smaller index)."""
    spec.validate()
    n = spec.n
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")
    neighbors = [[] for _ in range(n)]
    for i, j, d in spec.distances:
        if i != j:
            neighbors[i].append((d, j))
    row_sets = []
    for i in range(n):
        nearest = sorted(neighbors[i])[:k]
        row_sets.append({j for _, j in nearest})
    if symmetrize:
        for i in range(n):
            for j in list(row_sets[i]):
                row_sets[j].add(i)
    return _rows_from_sets(n, row_sets)


def build_mask_threshold(spec: GraphSpec, epsilon: float,
                         symmetrize: bool = False) -> SparseMask:
    """Keep (i, j) iff distance(i, j) <= epsilon, plus the diagonal."""
    spec.validate()
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n = spec.n
    row_sets = [set() for _ in range(n)]
    for i, j, d in spec.distances:
        if i != j and d <= epsilon:
            row_sets[i].add(j)
            if symmetrize:
                row_sets[j].add(i)
    if all(not s for s in row_sets):
        warnings.warn("distance threshold keeps no off-diagonal entries; "
                      "mask is the identity pattern")
    return _rows_from_sets(n, row_sets)


def _row_sum(values: Tensor, mask: SparseMask) -> Tensor:
    """Sum stored entries into per-node totals: [..., nnz] -> [..., N]."""
    out = Tensor(mask.scatter_rows(values.data, axis=values.ndim - 1),
                 _parents=(values,))

    def bw(g):
        if values.requires_grad:
            values._accumulate(g[..., mask.rows])
    out._backward_fn = bw
    return out


def _gather_nodes(x: Tensor, mask: SparseMask, side: str) -> Tensor:
    """Gather per-node values onto entries: [..., N] -> [..., nnz]."""
    idx = mask.rows if side == "row" else mask.col_indices
    out = Tensor(x.data[..., idx], _parents=(x,))

    def bw(g):
        if x.requires_grad:
            if side == "row":
                x._accumulate(mask.scatter_rows(g, axis=g.ndim - 1))
            else:
                x._accumulate(mask.scatter_cols(g, axis=g.ndim - 1))
    out._backward_fn = bw
    return out


def normalize_sparse(scores: SparseScores) -> SparseScores:
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2} over the pattern.

    Degrees are row sums of A + I, so they are >= 1 by construction.
    Input values must be nonnegative (clamping happens upstream).
    """
    if np.any(scores.values.data < 0):
        raise ValueError("normalize_sparse requires nonnegative entries")
    mask = scores.pattern
    diag_one = np.zeros(mask.nnz, dtype=scores.values.dtype)
    diag_one[mask.diag_positions] = 1.0
    vals = scores.values + Tensor(diag_one)          # A + I
    deg_inv_sqrt = _row_sum(vals, mask).power(-0.5)  # [..., N]
    out = vals * _gather_nodes(deg_inv_sqrt, mask, "row") \
               * _gather_nodes(deg_inv_sqrt, mask, "col")
    return SparseScores(mask, out)


def normalize_dense(a: np.ndarray) -> np.ndarray:
    """Dense oracle for normalize_sparse (same formula, full matrices)."""
    n = a.shape[-1]
    ai = a + np.eye(n, dtype=a.dtype)
    deg = ai.sum(axis=-1)
    dis = 1.0 / np.sqrt(deg)
    return ai * dis[..., :, None] * dis[..., None, :]


def sparse_dense_matmul(scores: SparseScores, x: Tensor) -> Tensor:
    """out[b,c,i,t] = sum_{j in row i} a[b,i,j] * x[b,c,j,t].

    scores.values: [B, nnz], x: [B, C, N, T]. Differentiable w.r.t. both.
    """
    mask = scores.pattern
    vals = scores.values
    if vals.ndim != 2:
        raise ShapeError(f"expected [B, nnz] values, got {vals.shape}")
    if x.ndim != 4 or x.shape[2] != mask.n:
        raise ShapeError(
            f"node dimension mismatch: x {x.shape} vs pattern N={mask.n}")
    rows, cols = mask.rows, mask.col_indices
    contrib = vals.data[:, None, :, None] * x.data[:, :, cols, :]
    out = Tensor(mask.scatter_rows(contrib, axis=2), _parents=(vals, x))

    def bw(g):
        g_rows = g[:, :, rows, :]
        if vals.requires_grad:
            vals._accumulate(
                np.einsum("bcet,bcet->be", g_rows, x.data[:, :, cols, :],
                          optimize=True))
        if x.requires_grad:
            x._accumulate(mask.scatter_cols(
                vals.data[:, None, :, None] * g_rows, axis=2))
    out._backward_fn = bw
    return out
