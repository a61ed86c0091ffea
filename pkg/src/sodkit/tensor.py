"""Dense tensors with reverse-mode automatic differentiation.

Everything the detection models need is built from the primitives here:
conv2d, matmul, global average pooling, activations, batch/layer norm,
channel concat/split, and elementwise arithmetic. Gradients are registered
as closures on the output tensor; ``backward()`` on a scalar walks the
graph once in reverse topological order.

Double precision is the default. Broadcasting is deliberately limited to
bias-style adds and per-channel scales so every backward rule stays easy
to audit.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


class NumericError(FloatingPointError):
    """Non-finite values or numerically invalid state."""


def _as_array(data, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype)
    return arr


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """N-dimensional array node in a dynamically built autograd graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = parents if out.requires_grad else ()
        out._backward = None
        out._op = op
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- autograd -------------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that requires it.

        Only scalar outputs may be differentiated; each graph node is
        visited exactly once.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mul(sum_all(self), 1.0 / self.size)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    if grad.shape != shape:
        raise ShapeError(f"gradient shape {grad.shape} not reducible to {shape}")
    return grad


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}") from exc
    out = Tensor._result(data, (a, b), "add")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g, b.shape))
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from exc
    out = Tensor._result(data, (a, b), "mul")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g * a.data, b.shape))
        out._backward = backward
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ShapeError(f"div: incompatible shapes {a.shape} vs {b.shape}") from exc
    out = Tensor._result(data, (a, b), "div")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(-g * a.data / (b.data * b.data), b.shape))
        out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)
    out = Tensor._result(data, (a,), "exp")
    if out.requires_grad:
        def backward(g):
            a._accumulate(g * data)
        out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = Tensor._result(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def backward(g):
            a._accumulate(g / a.data)
        out._backward = backward
    return out


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    a, b = _wrap(a), _wrap(b)
    data = np.maximum(a.data, b.data)
    out = Tensor._result(data, (a, b), "maximum")
    if out.requires_grad:
        a_wins = a.data >= b.data
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g * a_wins, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g * ~a_wins, b.shape))
        out._backward = backward
    return out


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first operand."""
    a, b = _wrap(a), _wrap(b)
    data = np.minimum(a.data, b.data)
    out = Tensor._result(data, (a, b), "minimum")
    if out.requires_grad:
        a_wins = a.data <= b.data
        def backward(g):
            if a.requires_grad:
                a._accumulate(_reduce_to_shape(g * a_wins, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to_shape(g * ~a_wins, b.shape))
        out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = Tensor._result(np.array(a.data.sum()), (a,), "sum")
    if out.requires_grad:
        def backward(g):
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.data.dtype))
        out._backward = backward
    return out


# -- shape manipulation -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor._result(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        def backward(g):
            a._accumulate(g.reshape(a.shape))
        out._backward = backward
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _wrap(a)
    out = Tensor._result(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose")
    if out.requires_grad:
        inverse = None if axes is None else tuple(np.argsort(axes))
        def backward(g):
            a._accumulate(g.transpose(inverse))
        out._backward = backward
    return out


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            i != axis and p.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeError(f"concat: mismatched shapes {[p.shape for p in parts]}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = Tensor._result(data, tuple(parts), "concat")
    if out.requires_grad:
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if part.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    part._accumulate(g[tuple(idx)])
        out._backward = backward
    return out


def split(a: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    """Split into chunks of the given sizes along ``axis``; inverse of concat."""
    a = _wrap(a)
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    outs: list[Tensor] = []
    offset = 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(offset, offset + size)
        idx = tuple(idx)
        piece = Tensor._result(np.ascontiguousarray(a.data[idx]), (a,), "split")
        if piece.requires_grad:
            def backward(g, idx=idx):
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[idx] += g
            piece._backward = backward
        outs.append(piece)
        offset += size
    return outs


# -- dense linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    Supports plain 2-D operands, a stack of matrices against a shared 2-D
    right operand (the linear-layer case), and operand stacks with identical
    leading dimensions (the attention case). No implicit broadcasting of
    batch dimensions.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data
    out = Tensor._result(data, (a, b), "matmul")
    if out.requires_grad:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                if b.ndim == 2 and a.ndim > 2:
                    k = a.shape[-1]
                    n = g.shape[-1]
                    b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, n))
                else:
                    b._accumulate(np.swapaxes(a.data, -1, -2) @ g)
        out._backward = backward
    return out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation over NCHW input with OIHW weights.

    Output extents follow ``floor((H + 2*padding - kH)/stride) + 1``. The
    forward pass lowers to an im2col matrix product; tests compare it
    against an explicit sliding-window loop.
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv2d: input has {c_in} channels but weight expects {c_in_w}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _require_finite(x.data, "conv2d input")

    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for padded input {h}x{w}")

    if padding:
        x_pad = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        x_pad = x.data
    windows = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c_in * kh * kw
    )
    wmat = weight.data.reshape(c_out, -1)
    out_mat = cols @ wmat.T
    data = out_mat.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        data = data + bias.data.reshape(1, c_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._result(data, parents, "conv2d")
    if out.requires_grad:
        def backward(g):
            g_mat = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
            if weight.requires_grad:
                weight._accumulate((g_mat.T @ cols).reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                d_cols = (g_mat @ wmat).reshape(n, h_out, w_out, c_in, kh, kw)
                dx_pad = np.zeros_like(x_pad)
                for i in range(kh):
                    for j in range(kw):
                        dx_pad[
                            :, :,
                            i : i + stride * h_out : stride,
                            j : j + stride * w_out : stride,
                        ] += d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                if padding:
                    x._accumulate(dx_pad[:, :, padding : padding + h, padding : padding + w])
                else:
                    x._accumulate(dx_pad)
        out._backward = backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial dims: NCHW -> NC."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor._result(x.data.mean(axis=(2, 3)), (x,), "global_avg_pool")
    if out.requires_grad:
        def backward(g):
            x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))
        out._backward = backward
    return out


# -- activations ----------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow at very negative x saturates through 1/inf to an exact 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    _require_finite(x.data, "sigmoid input")
    y = _sigmoid(x.data)
    out = Tensor._result(y, (x,), "sigmoid")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * y * (1.0 - y))
        out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    _require_finite(x.data, "relu input")
    out = Tensor._result(np.maximum(x.data, 0.0), (x,), "relu")
    if out.requires_grad:
        mask = x.data > 0
        def backward(g):
            x._accumulate(g * mask)
        out._backward = backward
    return out


def silu(x: Tensor) -> Tensor:
    x = _wrap(x)
    _require_finite(x.data, "silu input")
    s = _sigmoid(x.data)
    out = Tensor._result(x.data * s, (x,), "silu")
    if out.requires_grad:
        def backward(g):
            x._accumulate(g * (s + x.data * s * (1.0 - s)))
        out._backward = backward
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) with the overflow-safe max/abs formulation."""
    x = _wrap(x)
    _require_finite(x.data, "softplus input")
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    out = Tensor._result(data, (x,), "softplus")
    if out.requires_grad:
        s = _sigmoid(x.data)
        def backward(g):
            x._accumulate(g * s)
        out._backward = backward
    return out


def softmax_lastdim(x: Tensor) -> Tensor:
    x = _wrap(x)
    _require_finite(x.data, "softmax input")
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError("softmax: last dimension must exist and be non-empty")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=-1, keepdims=True)
    out = Tensor._result(y, (x,), "softmax")
    if out.requires_grad:
        def backward(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - dot) * y)
        out._backward = backward
    return out


_ACTIVATIONS = {
    "sigmoid": sigmoid,
    "silu": silu,
    "relu": relu,
    "softmax_lastdim": softmax_lastdim,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# -- normalization ----------------------------------------------------------------

NORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.03


class BatchNorm2dState:
    """Learnable affine plus running statistics for per-channel batch norm."""

    def __init__(self, channels: int, momentum: float = BATCHNORM_MOMENTUM, eps: float = NORM_EPS):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batchnorm2d(x: Tensor, state: BatchNorm2dState, training: bool) -> Tensor:
    """Normalize NCHW input per channel over (N, H, W).

    Train mode uses batch statistics and nudges the running buffers by
    ``momentum``; infer mode uses the running buffers. Variance is biased
    in both paths and guarded by ``eps``.
    """
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if c != state.gamma.size:
        raise ShapeError(f"batchnorm2d: {c} channels vs {state.gamma.size} parameters")
    gamma, beta = state.gamma, state.beta
    eps = state.eps

    if training:
        count = n * h * w
        if count <= 1:
            raise ShapeError("batchnorm2d: train mode needs more than one value per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = np.einsum("nchw,nchw->c", centered, centered) / count
        state.running_mean += state.momentum * (mean - state.running_mean)
        state.running_var += state.momentum * (var - state.running_var)
    else:
        mean = state.running_mean
        centered = x.data - mean[None, :, None, None]
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]
    out = Tensor._result(data, (x, gamma, beta), "batchnorm2d")
    if out.requires_grad:
        def backward(g):
            if gamma.requires_grad:
                gamma._accumulate((g * x_hat).sum(axis=(0, 2, 3)))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                scale = gamma.data[None, :, None, None] * inv_std[None, :, None, None]
                if training:
                    g_mean = g.mean(axis=(0, 2, 3), keepdims=True)
                    gx_mean = (g * x_hat).mean(axis=(0, 2, 3), keepdims=True)
                    x._accumulate(scale * (g - g_mean - x_hat * gx_mean))
                else:
                    x._accumulate(scale * g)
        out._backward = backward
    return out


class LayerNormState:
    """Learnable affine for last-dimension layer norm."""

    def __init__(self, dim: int, eps: float = NORM_EPS):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps


def layernorm(x: Tensor, state: LayerNormState) -> Tensor:
    """Normalize over the last dimension, then apply the learnable affine."""
    x = _wrap(x)
    dim = x.shape[-1]
    if dim != state.gamma.size:
        raise ShapeError(f"layernorm: last dim {dim} vs {state.gamma.size} parameters")
    gamma, beta = state.gamma, state.beta
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x.data - mean) * inv_std
    data = gamma.data * x_hat + beta.data
    out = Tensor._result(data, (x, gamma, beta), "layernorm")
    if out.requires_grad:
        def backward(g):
            if gamma.requires_grad:
                gamma._accumulate((g * x_hat).reshape(-1, dim).sum(axis=0))
            if beta.requires_grad:
                beta._accumulate(g.reshape(-1, dim).sum(axis=0))
            if x.requires_grad:
                gg = g * gamma.data
                g_mean = gg.mean(axis=-1, keepdims=True)
                gx_mean = (gg * x_hat).mean(axis=-1, keepdims=True)
                x._accumulate(inv_std * (gg - g_mean - x_hat * gx_mean))
        out._backward = backward
    return out


def normalize(x: Tensor, kind: str, state, mode: str = "train") -> Tensor:
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown normalize mode {mode!r}")
    if kind == "batchnorm2d":
        return batchnorm2d(x, state, training=(mode == "train"))
    if kind == "layernorm":
        return layernorm(x, state)
    raise ValueError(f"unknown normalize kind {kind!r}")


# -- gradient verification ---------------------------------------------------------


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    point: Tensor | np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``fn`` must map a tensor to a scalar and be deterministic; a repeated
    evaluation mismatch raises. The relative error denominator is
    ``max(|analytic|, |numeric|, 1e-8)`` per coordinate.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    base = point.data if isinstance(point, Tensor) else np.asarray(point, dtype=np.float64)

    probe_a = fn(Tensor(base.copy())).data
    probe_b = fn(Tensor(base.copy())).data
    if not np.array_equal(probe_a, probe_b):
        raise NumericError("finite_diff_check: fn is not deterministic")

    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.size != 1:
        raise ShapeError("finite_diff_check: fn must return a scalar")
    out.backward()
    analytic = leaf.grad.reshape(-1) if leaf.grad is not None else np.zeros(base.size)

    numeric = np.zeros(base.size)
    flat = base.reshape(-1)
    for i in range(base.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        f_plus = float(fn(Tensor(bumped.reshape(base.shape))).data)
        bumped[i] = flat[i] - h
        f_minus = float(fn(Tensor(bumped.reshape(base.shape))).data)
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
