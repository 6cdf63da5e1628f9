"""Full encoder-decoder assembly: embedding conv, stacked AIM+attention
layers, and a two-conv decoder with future-auxiliary injection. Also owns
parameter initialization and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .aim import (TIME_DIM, POSITION_DIM, AimBranch, AuxFeatures,
                  aim_forward, temporal_align)
from .attention import AttentionHeads
from .graph import SparseMask
from .layer import SanParams, san_forward
from .tensor import ShapeError, Tensor, concat, pointwise_conv

ABLATIONS = ("none", "tcn-only", "no-atten", "no-mask", "no-aim",
             "hist-only", "future-only")

_BRANCH_IN_DIM = {"time": TIME_DIM, "position": POSITION_DIM}

_CKPT_MAGIC = b"AIMSAN-CKPT v1\n"


@dataclass
class ModelConfig:
    dilations: list = field(default_factory=lambda: [2, 2, 2, 2, 2, 1])
    kernel: int = 2
    heads: int = 3
    aim_dim: int = 16
    hidden: int = 32
    skip: int = 256
    diffusion_k: int = 2
    s_in: int = 12
    t_out: int = 12
    q: int = 1
    branches: list = field(default_factory=lambda: ["time"])
    weather_dim: int = 0
    mask_mode: str = "topk"      # "topk" | "threshold"
    mask_k: int = 8
    mask_epsilon: float = 1.0
    symmetrize_mask: bool = False
    ablation: str = "none"

    def validate(self):
        shrink = sum(d * (self.kernel - 1) for d in self.dilations)
        if shrink != self.s_in - 1:
            raise ValueError(
                f"dilations {self.dilations} shrink the window by {shrink}, "
                f"but s_in-1 = {self.s_in - 1}: encoder cannot collapse to length 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; "
                             f"choose from {ABLATIONS}")
        if self.mask_mode not in ("topk", "threshold"):
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        for b in self.branches:
            if b not in ("time", "position", "weather"):
                raise ValueError(f"unknown auxiliary branch {b!r}")

    # ablation switches
    @property
    def use_attention(self) -> bool:
        return self.ablation not in ("tcn-only", "no-atten")

    @property
    def use_hist_aim(self) -> bool:
        return self.use_attention and self.ablation not in (
            "tcn-only", "no-aim", "future-only")

    @property
    def use_future_aim(self) -> bool:
        return self.ablation not in ("tcn-only", "no-aim", "hist-only")

    @property
    def dense_mask(self) -> bool:
        return self.ablation == "no-mask"

    @property
    def aux_channels(self) -> int:
        return self.aim_dim * len(self.branches)

    def branch_in_dim(self, name: str) -> int:
        return self.weather_dim if name == "weather" else _BRANCH_IN_DIM[name]


def _param_shapes(config: ModelConfig) -> list:
    """Deterministic (name, shape) enumeration; the init and checkpoint order."""
    c = config
    shapes = [("embed.w", (c.hidden, c.q)), ("embed.b", (c.hidden,))]

    def aim_shapes(prefix):
        out = []
        for br in c.branches:
            p = c.branch_in_dim(br)
            out += [(f"{prefix}.{br}.w1", (c.aim_dim, p)),
                    (f"{prefix}.{br}.b1", (c.aim_dim,)),
                    (f"{prefix}.{br}.w2", (c.aim_dim, c.aim_dim)),
                    (f"{prefix}.{br}.b2", (c.aim_dim,))]
        return out

    cat = c.hidden + (c.aux_channels if c.use_hist_aim else 0)
    for j, _ in enumerate(c.dilations):
        if c.use_hist_aim:
            shapes += aim_shapes(f"aim{j}")
        shapes += [(f"layer{j}.filter", (c.hidden, c.hidden, 1, c.kernel)),
                   (f"layer{j}.gate", (c.hidden, c.hidden, 1, c.kernel))]
        if c.use_attention:
            shapes += [(f"layer{j}.attn.qw", (c.heads, cat)),
                       (f"layer{j}.attn.qb", (c.heads,)),
                       (f"layer{j}.attn.kw", (c.heads, cat)),
                       (f"layer{j}.attn.kb", (c.heads,))]
            shapes += [(f"layer{j}.diff{i}.w", (c.hidden, c.hidden))
                       for i in range(c.diffusion_k + 1)]
            shapes += [(f"layer{j}.fusion.w", (c.hidden, c.hidden)),
                       (f"layer{j}.fusion.b", (c.hidden,))]
        shapes += [(f"layer{j}.residual.w", (c.hidden, c.hidden)),
                   (f"layer{j}.residual.b", (c.hidden,)),
                   (f"layer{j}.skip.w", (c.skip, c.hidden)),
                   (f"layer{j}.skip.b", (c.skip,))]
    aux_flat = c.aux_channels * c.t_out if c.use_future_aim else 0
    if c.use_future_aim:
        shapes += aim_shapes("dec.aim0")
    shapes += [("dec.out0.w", (c.skip, c.skip + aux_flat)),
               ("dec.out0.b", (c.skip,))]
    if c.use_future_aim:
        shapes += aim_shapes("dec.aim1")
    shapes += [("dec.out1.w", (c.t_out, c.skip + aux_flat)),
               ("dec.out1.b", (c.t_out,))]
    return shapes


def init_params(config: ModelConfig, seed: int) -> dict:
    """Scaled-uniform weights, zero biases, one seeded generator."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(config):
        if len(shape) == 1 or name.endswith(".w1"):
            # auxiliary branch input layers start at zero so that one-hot
            # categories absent from training contribute nothing at eval
            data = np.zeros(shape, dtype=np.float32)
        else:
            if len(shape) == 4:
                fan_in = shape[1] * shape[3]
                fan_out = shape[0] * shape[3]
            else:
                fan_in, fan_out = shape[1], shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)
    return params


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s in _param_shapes(config))


def _aim_branch_params(params: dict, prefix: str, branches) -> dict:
    return {br: AimBranch(params[f"{prefix}.{br}.w1"], params[f"{prefix}.{br}.b1"],
                          params[f"{prefix}.{br}.w2"], params[f"{prefix}.{br}.b2"])
            for br in branches}


def _layer_params(params: dict, config: ModelConfig, j: int) -> SanParams:
    attn = None
    diff = []
    fusion_w = fusion_b = None
    if config.use_attention:
        attn = AttentionHeads(config.heads,
                              params[f"layer{j}.attn.qw"], params[f"layer{j}.attn.qb"],
                              params[f"layer{j}.attn.kw"], params[f"layer{j}.attn.kb"])
        diff = [params[f"layer{j}.diff{i}.w"]
                for i in range(config.diffusion_k + 1)]
        fusion_w = params[f"layer{j}.fusion.w"]
        fusion_b = params[f"layer{j}.fusion.b"]
    return SanParams(dilation=config.dilations[j],
                     filter_conv=params[f"layer{j}.filter"],
                     gate_conv=params[f"layer{j}.gate"],
                     attention=attn,
                     diffusion_weights=diff,
                     fusion_gate_w=fusion_w,
                     fusion_gate_b=fusion_b,
                     residual_w=params[f"layer{j}.residual.w"],
                     residual_b=params[f"layer{j}.residual.b"],
                     skip_w=params[f"layer{j}.skip.w"],
                     skip_b=params[f"layer{j}.skip.b"])


def dense_pattern(n: int) -> SparseMask:
    """All-ones mask (the no-mask ablation)."""
    offsets = np.arange(n + 1, dtype=np.int64) * n
    cols = np.tile(np.arange(n, dtype=np.int64), n)
    return SparseMask(n, offsets, cols)


def _flatten_time(emb: Tensor) -> Tensor:
    """[B, C, N, T] -> [B, C*T, N, 1] so the decoder can concat at length 1."""
    b, ch, n, t = emb.shape
    return emb.transpose((0, 1, 3, 2)).reshape(b, ch * t, n, 1)


def model_forward(x: Tensor, d_hist: AuxFeatures | None,
                  f_fut: AuxFeatures | None, mask: SparseMask | None,
                  params: dict, config: ModelConfig) -> Tensor:
    """Predict [B, T, N, 1] from [B, q, N, S] traffic plus auxiliary data.

    Predictions are in normalized space; the pipeline inverts them before
    metrics."""
    config.validate()
    if x.ndim != 4 or x.shape[1] != config.q or x.shape[3] != config.s_in:
        raise ShapeError(f"input shape {x.shape} does not match config "
                         f"(q={config.q}, S={config.s_in})")
    b, _, n, _ = x.shape
    if config.use_hist_aim and d_hist is None:
        raise ValueError("config uses historical auxiliary data but none given")
    if config.use_future_aim and f_fut is None:
        raise ValueError("config uses future auxiliary data but none given")
    if config.use_attention:
        mask = dense_pattern(n) if config.dense_mask else mask
        if mask is None:
            raise ValueError("attention path requires a sparsity mask")
        if mask.n != n:
            raise ShapeError(f"mask N={mask.n} but input has {n} nodes")

    i_cur = pointwise_conv(x, params["embed.w"], params["embed.b"])
    s_cur = Tensor(np.zeros((b, config.skip, n, config.s_in), dtype=x.dtype))
    for j, d in enumerate(config.dilations):
        d_j = None
        if config.use_hist_aim:
            emb = aim_forward(d_hist,
                              _aim_branch_params(params, f"aim{j}", config.branches),
                              config.branches, n)
            d_j = temporal_align(emb, i_cur.shape[3] - d * (config.kernel - 1))
        i_cur, s_cur = san_forward(i_cur, s_cur, d_j, mask,
                                   _layer_params(params, config, j),
                                   use_attention=config.use_attention)

    y = s_cur.relu()
    if config.use_future_aim:
        emb0 = aim_forward(f_fut,
                           _aim_branch_params(params, "dec.aim0", config.branches),
                           config.branches, n)
        y = concat([y, _flatten_time(emb0.values)], axis=1)
    y = pointwise_conv(y, params["dec.out0.w"], params["dec.out0.b"]).relu()
    if config.use_future_aim:
        emb1 = aim_forward(f_fut,
                           _aim_branch_params(params, "dec.aim1", config.branches),
                           config.branches, n)
        y = concat([y, _flatten_time(emb1.values)], axis=1)
    y = pointwise_conv(y, params["dec.out1.w"], params["dec.out1.b"])
    # channel axis now carries the horizon; temporal axis is the singleton
    return y.reshape(b, config.t_out, n, 1)


# -- checkpoint I/O -----------------------------------------------------------

def save_checkpoint(path, params: dict, config: ModelConfig, seed: int):
    """Text header (names, shapes, offsets, config, seed) + raw <f4 buffers."""
    entries, offset = [], 0
    blobs = []
    for name, _ in _param_shapes(config):
        t = params[name]
        raw = np.ascontiguousarray(t.data.astype("<f4")).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": asdict(config), "seed": seed,
                         "params": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Returns (params, config, seed); round-trips bitwise with save."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a recognized checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        raw = fh.read()
    config = ModelConfig(**header["config"])
    params = {}
    for ent in header["params"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f4", count=count,
                             offset=ent["offset"]).reshape(shape)
        params[ent["name"]] = Tensor(data.copy(), requires_grad=True)
    return params, config, header["seed"]
