"""One encoder layer: gated dilated temporal convolution, dynamic sparse
adjacency, diffusion graph convolution, fusion gate, residual and skip paths."""

from __future__ import annotations

from dataclasses import dataclass

from .attention import AttentionHeads, dynamic_adjacency
from .graph import SparseMask, SparseScores, sparse_dense_matmul
from .tensor import ShapeError, Tensor, dilated_causal_conv, pointwise_conv


@dataclass
class SanParams:
    dilation: int
    filter_conv: Tensor        # [C, C, 1, 2]
    gate_conv: Tensor          # [C, C, 1, 2]
    attention: AttentionHeads | None
    diffusion_weights: list    # k+1 tensors [C, C]
    fusion_gate_w: Tensor      # [C, C]
    fusion_gate_b: Tensor      # [C]
    residual_w: Tensor         # [C, C]
    residual_b: Tensor         # [C]
    skip_w: Tensor             # [C_skip, C]
    skip_b: Tensor             # [C_skip]


def gate(x1: Tensor, x2: Tensor) -> Tensor:
    """tanh(x1) * sigmoid(x2), elementwise."""
    if x1.shape != x2.shape:
        raise ShapeError(f"gate inputs differ: {x1.shape} vs {x2.shape}")
    return x1.tanh() * x2.sigmoid()


def diffusion_gcn(a_n: SparseScores, x: Tensor, weights: list) -> Tensor:
    """Z = sum_{i=0}^{k} A_N^i X W_i, without ever materializing A_N^i.

    x_i = A_N x_{i-1} is iterated; each hop is one sparse-dense product.
    """
    hop = x
    z = pointwise_conv(hop, weights[0])
    for w in weights[1:]:
        hop = sparse_dense_matmul(a_n, hop)
        z = z + pointwise_conv(hop, w)
    return z


def san_forward(i_prev: Tensor, s_prev: Tensor, d_j, mask: SparseMask | None,
                p: SanParams, use_attention: bool = True):
    """Run one layer; returns (i_j, s_j) at temporal length T_in - dilation.

    d_j is the temporally aligned embedded auxiliary data (or None when
    auxiliary awareness is pruned); with use_attention=False the layer is a
    pure gated temporal convolution.
    """
    g = gate(dilated_causal_conv(i_prev, p.filter_conv, p.dilation),
             dilated_causal_conv(i_prev, p.gate_conv, p.dilation))
    t_out = g.shape[3]
    if use_attention:
        if p.attention is None or mask is None:
            raise ValueError("attention path requested without heads or mask")
        a_n = dynamic_adjacency(g, d_j, p.attention, mask)
        z = diffusion_gcn(a_n, g, p.diffusion_weights)
        o = gate(z, pointwise_conv(g, p.fusion_gate_w, p.fusion_gate_b))
    else:
        o = g
    i_j = o + pointwise_conv(i_prev.take_last(t_out, axis=3),
                             p.residual_w, p.residual_b)
    s_j = s_prev.take_last(t_out, axis=3) + pointwise_conv(o, p.skip_w, p.skip_b)
    return i_j, s_j
