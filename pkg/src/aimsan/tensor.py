"""Minimal dense tensor with reverse-mode differentiation.

Everything is numpy underneath. A Tensor remembers the ops that produced it
(parents + a backward closure); backward() runs one reverse topological sweep
and accumulates gradients with += at fan-out points.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "concat",
    "dilated_causal_conv",
    "pointwise_conv",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        raise TypeError("expected raw data, got Tensor")
    a = np.asarray(x)
    if dtype is not None:
        a = a.astype(dtype)
    elif a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float32)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None,
                 _parents=(), _backward_fn=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph machinery ----------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        # non-leaf intermediates keep their grads; callers only read leaves

    # -- elementwise / arithmetic --------------------------------------------

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward_fn = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(-g)
        out._backward_fn = bw
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward_fn = bw
        return out

    __rmul__ = __mul__

    def power(self, p: float) -> "Tensor":
        out = Tensor(self.data ** p, _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * p * self.data ** (p - 1))
        out._backward_fn = bw
        return out

    def __truediv__(self, other):
        return self * self._lift(other).power(-1.0)

    def absolute(self) -> "Tensor":
        out = Tensor(np.abs(self.data), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * np.sign(self.data))
        out._backward_fn = bw
        return out

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor(y, _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - y * y))
        out._backward_fn = bw
        return out

    def sigmoid(self) -> "Tensor":
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(y, _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g * y * (1.0 - y))
        out._backward_fn = bw
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                # subgradient 0 at the kink
                self._accumulate(g * (self.data > 0))
        out._backward_fn = bw
        return out

    def activation(self, kind: str) -> "Tensor":
        try:
            return {"tanh": self.tanh, "sigmoid": self.sigmoid,
                    "relu": self.relu}[kind]()
        except KeyError:
            raise ValueError(f"unknown activation kind: {kind!r}") from None

    # -- reductions -----------------------------------------------------------

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward_fn = bw
        return out

    def mean_axis(self, axis: int) -> "Tensor":
        axis = axis % self.ndim
        n = self.shape[axis]
        out = Tensor(self.data.mean(axis=axis), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(
                    np.repeat(np.expand_dims(g / n, axis), n, axis=axis))
        out._backward_fn = bw
        return out

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.size)

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {self.shape} x {other.shape}")
        out = Tensor(np.matmul(self.data, other.data), _parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(
                    np.matmul(g, np.swapaxes(other.data, -1, -2)), self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(
                    np.matmul(np.swapaxes(self.data, -1, -2), g), other.shape))
        out._backward_fn = bw
        return out

    __matmul__ = matmul

    # -- shape ops --------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))
        out._backward_fn = bw
        return out

    def transpose(self, axes) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = Tensor(self.data.transpose(axes), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inv))
        out._backward_fn = bw
        return out

    def expand(self, shape) -> "Tensor":
        shape = tuple(shape)
        out = Tensor(np.broadcast_to(self.data, shape).copy(),
                     _parents=(self,))

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
        out._backward_fn = bw
        return out

    def take_last(self, n: int, axis: int) -> "Tensor":
        """Keep the trailing n slots along `axis` (temporal suffix)."""
        axis = axis % self.ndim
        size = self.shape[axis]
        if n > size:
            raise ShapeError(f"cannot take last {n} of axis sized {size}")
        idx = [slice(None)] * self.ndim
        idx[axis] = slice(size - n, size)
        idx = tuple(idx)
        out = Tensor(self.data[idx].copy(), _parents=(self,))

        def bw(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[idx] = g
                self._accumulate(full)
        out._backward_fn = bw
        return out


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    ref = parts[0]
    axis = axis % ref.ndim
    for p in parts[1:]:
        a, b = list(ref.shape), list(p.shape)
        a[axis] = b[axis] = 0
        if a != b:
            raise ShapeError(
                f"concat shapes ragged off axis {axis}: {ref.shape} vs {p.shape}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 _parents=tuple(parts))
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])
    out._backward_fn = bw
    return out


def dilated_causal_conv(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    """Valid (no padding) dilated causal convolution along the last axis.

    x: [B, C_in, N, T], w: [C_out, C_in, 1, k]. Output temporal length is
    T - dilation*(k-1); tap i of the filter reads the input dilation*i steps
    in the past.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    b, c_in, n, t = x.shape
    c_out, c_in_w, one, k = w.shape
    if c_in_w != c_in or one != 1:
        raise ShapeError(f"filter {w.shape} does not fit input {x.shape}")
    t_out = t - dilation * (k - 1)
    if t_out < 1:
        raise ShapeError(
            f"temporal dimension {t} too small for kernel {k} dilation {dilation}")
    # xs[m] is the input shifted m*dilation steps; tap i pairs with shift k-1-i
    xs = np.stack([x.data[..., m * dilation: m * dilation + t_out]
                   for m in range(k)])
    w_rev = w.data[:, :, 0, ::-1]  # [C_out, C_in, k] with tap order flipped
    out = Tensor(np.einsum("ocm,mbcnt->bont", w_rev, xs, optimize=True),
                 _parents=(x, w))

    def bw(g):
        if w.requires_grad:
            gw = np.einsum("bont,mbcnt->ocm", g, xs, optimize=True)
            w._accumulate(gw[:, :, ::-1][:, :, None, :].reshape(w.shape))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gxs = np.einsum("ocm,bont->mbcnt", w_rev, g, optimize=True)
            for m in range(k):
                gx[..., m * dilation: m * dilation + t_out] += gxs[m]
            x._accumulate(gx)
    out._backward_fn = bw
    return out


def pointwise_conv(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: per-position linear map across channels.

    x: [B, C_in, N, T], w: [C_out, C_in], bias: [C_out] or None.
    """
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"channel mismatch: input {x.shape} vs weight {w.shape}")
    parents = (x, w) if bias is None else (x, w, bias)
    y = np.einsum("oc,bcnt->bont", w.data, x.data, optimize=True)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    out = Tensor(y, _parents=parents)

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.einsum("oc,bont->bcnt", w.data, g, optimize=True))
        if w.requires_grad:
            w._accumulate(np.einsum("bont,bcnt->oc", g, x.data, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
    out._backward_fn = bw
    return out


def finite_diff_check(f, xs, eps: float = 1e-5) -> float:
    """Central-difference gradient check; returns the max relative error.

    f maps the list of Tensors `xs` to a scalar Tensor. Inputs must be
    float64; the analytic gradients come from one backward() pass.
    """
    xs = list(xs)
    for x in xs:
        if x.dtype != np.float64:
            raise ValueError("finite_diff_check requires float64 inputs")
        x.grad = None
    loss = f(*xs)
    loss.backward()
    worst = 0.0
    for x in xs:
        if not x.requires_grad:
            continue
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(*xs).data)
            flat[i] = orig - eps
            lo = float(f(*xs).data)
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        numeric = numeric.reshape(x.shape)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1.0)
        err = float(np.max(np.abs(analytic - numeric) / denom))
        worst = max(worst, err)
    return worst
