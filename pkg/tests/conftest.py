import numpy as np
import pytest

from aimsan.graph import GraphSpec, build_mask_topk


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_ring_spec(n: int) -> GraphSpec:
    dist = []
    for i in range(n):
        for j in range(n):
            if i != j:
                dist.append((i, j, float(min(abs(i - j), n - abs(i - j)))))
    return GraphSpec(node_ids=list(range(n)), distances=dist)


def make_ring_mask(n: int, k: int):
    return build_mask_topk(make_ring_spec(n), k)


def random_mask(rng, n: int):
    """Random pattern with the diagonal forced in."""
    dense = rng.random((n, n)) < rng.uniform(0.1, 0.6)
    np.fill_diagonal(dense, True)
    offsets = np.zeros(n + 1, dtype=np.int64)
    cols = []
    for i in range(n):
        idx = np.flatnonzero(dense[i])
        cols.extend(idx)
        offsets[i + 1] = len(cols)
    from aimsan.graph import SparseMask
    return SparseMask(n, offsets, np.asarray(cols, dtype=np.int64))
