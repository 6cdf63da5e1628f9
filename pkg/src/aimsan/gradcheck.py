"""Central-difference verification suites for every differentiable op and for
a full encoder layer, all in 64-bit precision on tiny shapes."""

from __future__ import annotations

import numpy as np

from .attention import AttentionHeads, attention_scores_sparse, dynamic_adjacency
from .graph import GraphSpec, SparseScores, build_mask_topk, normalize_sparse, \
    sparse_dense_matmul
from .layer import SanParams, san_forward
from .tensor import Tensor, concat, dilated_causal_conv, finite_diff_check, \
    pointwise_conv

SCOPES = ("tensor", "graph", "attention", "san")


def _t(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True,
                  dtype=np.float64)


def ring_mask(n: int, k: int):
    dist = []
    for i in range(n):
        for j in range(n):
            if i != j:
                dist.append((i, j, float(min(abs(i - j), n - abs(i - j)))))
    spec = GraphSpec(node_ids=list(range(n)), distances=dist)
    return build_mask_topk(spec, k)


def _tensor_checks(rng):
    checks = []
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    checks.append(("matmul", finite_diff_check(
        lambda a, b: (a @ b).sum(), [a, b])))
    for kind in ("tanh", "sigmoid", "relu"):
        x = _t(rng, 2, 5)
        checks.append((f"activation[{kind}]", finite_diff_check(
            lambda x, kind=kind: x.activation(kind).sum(), [x])))
    x, w = _t(rng, 2, 3, 2, 8), _t(rng, 4, 3, 1, 2)
    checks.append(("dilated_causal_conv", finite_diff_check(
        lambda x, w: dilated_causal_conv(x, w, 2).tanh().sum(), [x, w])))
    x, w, bias = _t(rng, 2, 3, 2, 4), _t(rng, 5, 3), _t(rng, 5)
    checks.append(("pointwise_conv", finite_diff_check(
        lambda x, w, bias: pointwise_conv(x, w, bias).tanh().sum(),
        [x, w, bias])))
    p1, p2 = _t(rng, 2, 3), _t(rng, 2, 2)
    checks.append(("concat", finite_diff_check(
        lambda p1, p2: (concat([p1, p2], axis=1) * concat([p2, p1], axis=1))
        .sum(), [p1, p2])))
    x = _t(rng, 3, 4)
    checks.append(("mean_axis", finite_diff_check(
        lambda x: (x.mean_axis(0) * x.mean_axis(0)).sum(), [x])))
    x = _t(rng, 2, 6)
    checks.append(("take_last", finite_diff_check(
        lambda x: x.take_last(3, axis=1).tanh().sum(), [x])))
    x = _t(rng, 4)
    checks.append(("mul_power", finite_diff_check(
        lambda x: ((x * x + 1.2).power(-0.5)).sum(), [x])))
    return checks


def _graph_checks(rng):
    mask = ring_mask(6, 2)
    checks = []
    v = Tensor(rng.uniform(0.1, 1, size=(2, mask.nnz)), requires_grad=True,
               dtype=np.float64)
    checks.append(("normalize_sparse", finite_diff_check(
        lambda v: (normalize_sparse(SparseScores(mask, v)).values
                   .power(2.0)).sum(), [v])))
    v = Tensor(rng.uniform(0.1, 1, size=(2, mask.nnz)), requires_grad=True,
               dtype=np.float64)
    x = _t(rng, 2, 3, 6, 4)
    checks.append(("sparse_dense_matmul", finite_diff_check(
        lambda v, x: sparse_dense_matmul(SparseScores(mask, v), x).tanh().sum(),
        [v, x])))
    return checks


def _attention_checks(rng):
    mask = ring_mask(5, 2)
    checks = []
    q, k = _t(rng, 2, 2, 5, 3), _t(rng, 2, 2, 5, 3)
    checks.append(("attention_scores_sparse", finite_diff_check(
        lambda q, k: attention_scores_sparse(q, k, mask).values.tanh().sum(),
        [q, k])))
    x = _t(rng, 1, 3, 5, 4)
    qw, qb = _t(rng, 2, 3), _t(rng, 2)
    kw, kb = _t(rng, 2, 3), _t(rng, 2)

    def f(x, qw, qb, kw, kb):
        heads = AttentionHeads(2, qw, qb, kw, kb)
        a_n = dynamic_adjacency(x, None, heads, mask)
        return sparse_dense_matmul(a_n, x).sum()
    checks.append(("dynamic_adjacency", finite_diff_check(
        f, [x, qw, qb, kw, kb])))
    return checks


def _san_checks(rng):
    n, c, c_skip, t_in, d = 4, 2, 3, 5, 1
    mask = ring_mask(n, 2)
    i_prev = _t(rng, 1, c, n, t_in)
    s_prev = _t(rng, 1, c_skip, n, t_in)
    tensors = {
        "filter": _t(rng, c, c, 1, 2), "gate": _t(rng, c, c, 1, 2),
        "qw": _t(rng, 2, c), "qb": _t(rng, 2),
        "kw": _t(rng, 2, c), "kb": _t(rng, 2),
        "w0": _t(rng, c, c), "w1": _t(rng, c, c), "w2": _t(rng, c, c),
        "fw": _t(rng, c, c), "fb": _t(rng, c),
        "rw": _t(rng, c, c), "rb": _t(rng, c),
        "sw": _t(rng, c_skip, c), "sb": _t(rng, c_skip),
    }

    def f(i_prev, s_prev, *flat):
        vals = dict(zip(tensors.keys(), flat))
        p = SanParams(dilation=d,
                      filter_conv=vals["filter"], gate_conv=vals["gate"],
                      attention=AttentionHeads(2, vals["qw"], vals["qb"],
                                               vals["kw"], vals["kb"]),
                      diffusion_weights=[vals["w0"], vals["w1"], vals["w2"]],
                      fusion_gate_w=vals["fw"], fusion_gate_b=vals["fb"],
                      residual_w=vals["rw"], residual_b=vals["rb"],
                      skip_w=vals["sw"], skip_b=vals["sb"])
        i_j, s_j = san_forward(i_prev, s_prev, None, mask, p)
        return (i_j.tanh().sum() + s_j.tanh().sum())
    err = finite_diff_check(f, [i_prev, s_prev, *tensors.values()])
    return [("san_forward", err)]


def run(scope: str, seed: int = 0) -> list:
    """Run one suite; returns a list of (op name, max relative error)."""
    rng = np.random.default_rng(seed)
    if scope == "tensor":
        return _tensor_checks(rng)
    if scope == "graph":
        return _graph_checks(rng)
    if scope == "attention":
        return _attention_checks(rng)
    if scope == "san":
        return _san_checks(rng)
    raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {SCOPES}")


def run_all(seed: int = 0) -> list:
    out = []
    for scope in SCOPES:
        out.extend(run(scope, seed))
    return out
