"""Architectural units: conv blocks, squeeze-excite recalibration, the
split/transform/concat aggregation block, the transformer encoder branch,
and the multi-scale detection head.

Every unit registers its tensors in a ParamStore under dotted names, so a
model is fully described by (layer graph, name -> array map). Initial
values are drawn from a per-name RNG stream: the same (seed, name) pair
always produces the same values regardless of construction order.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Ordered registry of trainable tensors and non-trainable buffers."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _rng(self, name: str) -> np.random.Generator:
        entropy = [self.seed & 0xFFFFFFFF] + list(name.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def param(self, name: str, shape: tuple[int, ...], init: str, fan_in: int = 0) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if init == "kaiming":
            bound = math.sqrt(6.0 / fan_in)
            data = self._rng(name).uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "normal0.02":
            data = 0.02 * self._rng(name).standard_normal(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = array
        return array


class Conv2d:
    """Plain convolution layer; padding defaults to same-size for stride 1."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1, padding: int | None = None,
                 bias: bool = False):
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = store.param(f"{name}.weight", (c_out, c_in, kernel, kernel),
                                  "kaiming", fan_in=c_in * kernel * kernel)
        self.bias = store.param(f"{name}.bias", (c_out,), "zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def flops(self, h: int, w: int) -> float:
        ho, wo = self.out_hw(h, w)
        return 2.0 * self.c_out * self.c_in * self.kernel * self.kernel * ho * wo


class BatchNorm2d:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.state = T.BatchNorm2dState(channels)
        store.params[f"{name}.gamma"] = self.state.gamma
        store.params[f"{name}.beta"] = self.state.beta
        store.buffer(f"{name}.running_mean", self.state.running_mean)
        store.buffer(f"{name}.running_var", self.state.running_var)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm2d(x, self.state, training=training)


class ConvBlock:
    """conv -> batchnorm -> SiLU, the standard GELAN conv unit."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1):
        self.conv = Conv2d(store, f"{name}.conv", c_in, c_out, kernel, stride)
        self.bn = BatchNorm2d(store, f"{name}.bn", c_out)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.silu(self.bn(self.conv(x), training))

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return self.conv.out_hw(h, w)

    def flops(self, h: int, w: int) -> float:
        return self.conv.flops(h, w)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        self.d_in, self.d_out = d_in, d_out
        self.weight = store.param(f"{name}.weight", (d_out, d_in), "kaiming", fan_in=d_in)
        self.bias = store.param(f"{name}.bias", (d_out,), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.transpose(self.weight)) + self.bias

    def flops(self, rows: int) -> float:
        return 2.0 * rows * self.d_in * self.d_out


class SqueezeExcite:
    """Channel recalibration: pooled descriptor -> two FC layers -> sigmoid
    gate applied per channel.

    The gate lies strictly in (0, 1), so output magnitudes contract
    wherever the input is nonzero; with zeroed FC parameters the gate is
    exactly 0.5 everywhere.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, reduction: int = 4):
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        self.hidden = channels // reduction
        self.fc1 = Linear(store, f"{name}.fc1", channels, self.hidden)
        self.fc2 = Linear(store, f"{name}.fc2", self.hidden, channels)

    def __call__(self, y: Tensor) -> Tensor:
        n, c = y.shape[0], y.shape[1]
        if c != self.channels:
            raise T.ShapeError(f"squeeze-excite built for {self.channels} channels, got {c}")
        s = T.global_avg_pool(y)
        z = T.sigmoid(self.fc2(T.relu(self.fc1(s))))
        return y * T.reshape(z, (n, c, 1, 1))

    def flops(self, h: int, w: int) -> float:
        pool = self.channels * (h * w + 1)
        fc = self.fc1.flops(1) + self.fc2.flops(1)
        scale = self.channels * h * w
        return pool + fc + scale


class PathStack:
    """Residual sub-stack used inside the aggregation block: an entry conv
    followed by ``depth`` residual 3x3 units."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, depth: int = 1):
        self.entry = ConvBlock(store, f"{name}.entry", c_in, c_out, 3)
        self.units = [ConvBlock(store, f"{name}.res{i}", c_out, c_out, 3)
                      for i in range(depth)]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.entry(x, training)
        for unit in self.units:
            h = h + unit(h, training)
        return h

    def flops(self, h: int, w: int) -> float:
        total = self.entry.flops(h, w)
        for unit in self.units:
            total += unit.flops(h, w)
        return total


class RepNCSPELAN4:
    """Split/transform/concat aggregation block, optionally with a
    squeeze-excite recalibration between the concat and the exit conv.

    Dataflow: cv1 widens the input, the result splits in half; the second
    half runs through two chained residual sub-stacks (cv2, cv3); the
    concat keeps every intermediate [x0, x1, cv2-out, cv3-out]; an optional
    squeeze-excite gate rescales the aggregate before cv4 projects it to
    the output width. This chained layout is the normative desk-scale
    aggregation shape used throughout the model zoo.
    """

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 use_se: bool = False, depth: int = 1, se_reduction: int = 4):
        if c_out % 2:
            raise ValueError(f"aggregation width must be even, got {c_out}")
        c_mid = c_out
        c_half = c_mid // 2
        self.split_sizes = [c_half, c_half]
        self.cv1 = ConvBlock(store, f"{name}.cv1", c_in, c_mid, 1)
        self.cv2 = PathStack(store, f"{name}.cv2", c_half, c_half, depth)
        self.cv3 = PathStack(store, f"{name}.cv3", c_half, c_half, depth)
        cat_channels = c_mid + 2 * c_half
        self.se = SqueezeExcite(store, f"{name}.se", cat_channels, se_reduction) if use_se else None
        self.cv4 = ConvBlock(store, f"{name}.cv4", cat_channels, c_out, 1)
        self._name = name

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        try:
            xp = self.cv1(x, training)
            x0, x1 = T.split(xp, self.split_sizes)
            p2 = self.cv2(x1, training)
            p3 = self.cv3(p2, training)
            y = T.concat([x0, x1, p2, p3])
            if self.se is not None:
                y = self.se(y)
            return self.cv4(y, training)
        except T.ShapeError as exc:
            raise T.ShapeError(f"{self._name}: {exc}") from exc

    def flops(self, h: int, w: int) -> float:
        total = self.cv1.flops(h, w)
        total += self.cv2.flops(h, w)
        total += self.cv3.flops(h, w)
        if self.se is not None:
            total += self.se.flops(h, w)
        total += self.cv4.flops(h, w)
        return total


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.o = Linear(store, f"{name}.o", dim, dim)

    def __call__(self, x: Tensor, return_weights: bool = False):
        n, t, d = x.shape

        def to_heads(z: Tensor) -> Tensor:
            return T.transpose(T.reshape(z, (n, t, self.heads, self.head_dim)), (0, 2, 1, 3))

        q = to_heads(self.q(x))
        k = to_heads(self.k(x))
        v = to_heads(self.v(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        weights = T.softmax_lastdim(scores)
        mixed = T.matmul(weights, v)
        out = self.o(T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (n, t, d)))
        if return_weights:
            return out, weights
        return out

    def flops(self, tokens: int) -> float:
        proj = 4 * 2.0 * tokens * self.dim * self.dim
        # scores and value mixing: T*T*dim multiply-accumulates each
        mix = 2 * 2.0 * tokens * tokens * self.dim
        return proj + mix


class EncoderBlock:
    """Pre-norm transformer encoder block: attention then MLP, both residual."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_ratio: int):
        self.ln1 = T.LayerNormState(dim)
        store.params[f"{name}.ln1.gamma"] = self.ln1.gamma
        store.params[f"{name}.ln1.beta"] = self.ln1.beta
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads)
        self.ln2 = T.LayerNormState(dim)
        store.params[f"{name}.ln2.gamma"] = self.ln2.gamma
        store.params[f"{name}.ln2.beta"] = self.ln2.beta
        hidden = dim * mlp_ratio
        self.fc1 = Linear(store, f"{name}.mlp.fc1", dim, hidden)
        self.fc2 = Linear(store, f"{name}.mlp.fc2", hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(T.layernorm(x, self.ln1))
        return x + self.fc2(T.silu(self.fc1(T.layernorm(x, self.ln2))))

    def flops(self, tokens: int) -> float:
        return self.attn.flops(tokens) + self.fc1.flops(tokens) + self.fc2.flops(tokens)


class ViTEncoder:
    """Patchify a feature map, run transformer encoder blocks, and fold the
    tokens back into a spatial map for fusion with the conv trunk."""

    def __init__(self, store: ParamStore, name: str, c_in: int, grid_hw: tuple[int, int],
                 patch: int = 4, dim: int = 64, heads: int = 2, depth: int = 2,
                 mlp_ratio: int = 2):
        self.patch, self.dim = patch, dim
        self.grid_hw = grid_hw
        tokens = grid_hw[0] * grid_hw[1]
        self.patch_embed = Conv2d(store, f"{name}.patch_embed", c_in, dim,
                                  patch, stride=patch, padding=0, bias=True)
        self.pos = store.param(f"{name}.pos_embed", (tokens, dim), "normal0.02")
        self.blocks = [EncoderBlock(store, f"{name}.block{i}", dim, heads, mlp_ratio)
                       for i in range(depth)]
        self.norm = T.LayerNormState(dim)
        store.params[f"{name}.norm.gamma"] = self.norm.gamma
        store.params[f"{name}.norm.beta"] = self.norm.beta

    def __call__(self, feat: Tensor, training: bool = False) -> Tensor:
        n, c, h, w = feat.shape
        if h % self.patch or w % self.patch:
            raise T.ShapeError(f"feature map {h}x{w} not divisible by patch {self.patch}")
        gh, gw = h // self.patch, w // self.patch
        if (gh, gw) != self.grid_hw:
            raise T.ShapeError(f"token grid {gh}x{gw} differs from configured {self.grid_hw}")
        x = self.patch_embed(feat)
        tokens = T.transpose(T.reshape(x, (n, self.dim, gh * gw)), (0, 2, 1))
        tokens = tokens + self.pos
        for block in self.blocks:
            tokens = block(tokens)
        tokens = T.layernorm(tokens, self.norm)
        return T.reshape(T.transpose(tokens, (0, 2, 1)), (n, self.dim, gh, gw))

    def flops(self, h: int, w: int) -> float:
        tokens = self.grid_hw[0] * self.grid_hw[1]
        total = self.patch_embed.flops(h, w)
        for block in self.blocks:
            total += block.flops(tokens)
        return total


class DetectHead:
    """Per-scale 1x1 conv emitting (tx, ty, tw, th, objectness, class logits)."""

    # Fresh detectors must start near-silent: a strongly negative objectness
    # prior keeps the background confidence tiny from the first step.
    OBJ_PRIOR_LOGIT = -4.0

    def __init__(self, store: ParamStore, name: str, in_channels: tuple[int, ...],
                 num_classes: int):
        self.num_classes = num_classes
        out = 5 + num_classes
        self.convs = [Conv2d(store, f"{name}.scale{i}", c, out, 1, bias=True)
                      for i, c in enumerate(in_channels)]
        for conv in self.convs:
            conv.bias.data[4] = self.OBJ_PRIOR_LOGIT

    def __call__(self, features: list[Tensor]) -> list[Tensor]:
        if len(features) != len(self.convs):
            raise T.ShapeError(
                f"head expects {len(self.convs)} feature maps, got {len(features)}")
        return [conv(feat) for conv, feat in zip(self.convs, features)]

    def flops(self, spatial: list[tuple[int, int]]) -> float:
        return sum(conv.flops(h, w) for conv, (h, w) in zip(self.convs, spatial))
