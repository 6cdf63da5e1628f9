"""Scaling benchmark: sparse masked attention vs the dense oracle.

Reports instrumented pairwise-score counts (exact integers) and median wall
times across a list of node counts at fixed neighborhood size."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import attention_scores_dense_oracle, attention_scores_sparse, \
    score_counter
from .gradcheck import ring_mask
from .tensor import Tensor


@dataclass
class BenchmarkRow:
    n: int
    k: int
    heads: int
    sparse_pairs: int   # score evaluations per batch-head instance
    dense_pairs: int
    sparse_time: float  # median seconds per forward
    dense_time: float


def run_benchmark(n_list, k: int, heads: int = 3, repeats: int = 5,
                  t: int = 12, seed: int = 0) -> list:
    """One row per node count; n_list must be ascending."""
    if list(n_list) != sorted(n_list):
        raise ValueError("n_list must be ascending")
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_list:
        mask = ring_mask(n, k)
        dense = mask.densify()
        q = Tensor(rng.standard_normal((1, heads, n, t)).astype(np.float32))
        kk = Tensor(rng.standard_normal((1, heads, n, t)).astype(np.float32))
        attention_scores_sparse(q, kk, mask)  # warm-up

        score_counter.reset()
        sparse_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            attention_scores_sparse(q, kk, mask)
            sparse_times.append(time.perf_counter() - t0)
        sparse_pairs = score_counter.last_pairs_per_instance

        score_counter.reset()
        dense_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            attention_scores_dense_oracle(q, kk, dense)
            dense_times.append(time.perf_counter() - t0)
        dense_pairs = score_counter.last_pairs_per_instance

        rows.append(BenchmarkRow(n=n, k=k, heads=heads,
                                 sparse_pairs=sparse_pairs,
                                 dense_pairs=dense_pairs,
                                 sparse_time=float(np.median(sparse_times)),
                                 dense_time=float(np.median(dense_times))))
    return rows


def rows_to_csv(rows) -> str:
    lines = ["n,k,heads,sparse_pairs,dense_pairs,sparse_time_s,dense_time_s"]
    for r in rows:
        lines.append(f"{r.n},{r.k},{r.heads},{r.sparse_pairs},{r.dense_pairs},"
                     f"{r.sparse_time:.6g},{r.dense_time:.6g}")
    return "\n".join(lines) + "\n"
