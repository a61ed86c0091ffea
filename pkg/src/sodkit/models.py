"""Model zoo: the three detector variants behind one spec-driven builder.

Variants:
    gelan-t       conv trunk only
    gelan-vit     adds a transformer branch tapped from the stride-8 map,
                  fused into the deepest map by channel-concat + 1x1 conv
    gelan-vit-se  same, with squeeze-excite recalibration inside the two
                  aggregation blocks that feed the last two detection scales

The variants are strict supersets parameter-wise: gelan-vit adds only
vit.* and fuse.* entries, gelan-vit-se additionally adds only *.se.*
entries. Output map shapes are identical across variants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .blocks import ConvBlock, DetectHead, ParamStore, RepNCSPELAN4, ViTEncoder
from .tensor import Tensor

VARIANTS = ("gelan-t", "gelan-vit", "gelan-vit-se")

# Stage widths before the width multiplier: stem, then one per downsample.
BASE_WIDTHS = (8, 16, 32, 48, 64)
VIT_PATCH = 4
VIT_DIM = 64
VIT_HEADS = 2
VIT_DEPTH = 2
VIT_MLP_RATIO = 2


@dataclass
class ModelSpec:
    variant: str = "gelan-t"
    input_size: int = 160
    width_mult: float = 1.0
    depth_mult: float = 1.0
    num_classes: int = 1
    strides: tuple[int, ...] = (8, 16, 32)

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.strides != (8, 16, 32):
            raise ValueError(f"unsupported stride set {self.strides}")
        if self.input_size % max(self.strides):
            raise ValueError(
                f"input size {self.input_size} not divisible by stride {max(self.strides)}")
        if self.uses_vit and (self.input_size // self.strides[0]) % VIT_PATCH:
            raise ValueError(
                f"input size {self.input_size} incompatible with patch {VIT_PATCH} "
                f"on the stride-{self.strides[0]} map")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")

    @property
    def uses_vit(self) -> bool:
        return self.variant in ("gelan-vit", "gelan-vit-se")

    @property
    def uses_se(self) -> bool:
        return self.variant == "gelan-vit-se"

    def widths(self) -> tuple[int, ...]:
        scaled = []
        for base in BASE_WIDTHS:
            w = int(round(base * self.width_mult / 8.0)) * 8
            scaled.append(max(8, w))
        return tuple(scaled)

    def path_depth(self) -> int:
        return max(1, round(self.depth_mult))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def from_json(path: str | Path) -> "ModelSpec":
        payload = json.loads(Path(path).read_text())
        return ModelSpec(**payload)


class Model:
    """A built detector: layer graph plus its named parameters."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        store = ParamStore(seed)
        self.store = store
        w0, w1, w2, w3, w4 = spec.widths()
        depth = spec.path_depth()

        self.stem = ConvBlock(store, "stem", 3, w0, 3, stride=2)
        self.down1 = ConvBlock(store, "down1", w0, w1, 3, stride=2)
        self.elan1 = RepNCSPELAN4(store, "elan1", w1, w1, depth=depth)
        self.down2 = ConvBlock(store, "down2", w1, w2, 3, stride=2)
        self.elan2 = RepNCSPELAN4(store, "elan2", w2, w2, depth=depth)
        self.down3 = ConvBlock(store, "down3", w2, w3, 3, stride=2)
        self.elan3 = RepNCSPELAN4(store, "elan3", w3, w3, use_se=spec.uses_se, depth=depth)
        self.down4 = ConvBlock(store, "down4", w3, w4, 3, stride=2)
        self.elan4 = RepNCSPELAN4(store, "elan4", w4, w4, use_se=spec.uses_se, depth=depth)

        if spec.uses_vit:
            grid = spec.input_size // max(spec.strides)
            self.vit = ViTEncoder(store, "vit", w2, (grid, grid), patch=VIT_PATCH,
                                  dim=VIT_DIM, heads=VIT_HEADS, depth=VIT_DEPTH,
                                  mlp_ratio=VIT_MLP_RATIO)
            self.fuse = ConvBlock(store, "fuse", w4 + VIT_DIM, w4, 1)
        else:
            self.vit = None
            self.fuse = None

        self.head = DetectHead(store, "head", (w2, w3, w4), spec.num_classes)
        self._widths = (w0, w1, w2, w3, w4)

    # -- inference ------------------------------------------------------------

    def forward(self, images: Tensor, training: bool = False) -> list[Tensor]:
        s = self.spec.input_size
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (s, s):
            raise T.ShapeError(
                f"expected images of shape [N,3,{s},{s}], got {images.shape}")
        x = self.stem(images, training)
        x = self.elan1(self.down1(x, training), training)
        p3 = self.elan2(self.down2(x, training), training)
        p4 = self.elan3(self.down3(p3, training), training)
        p5 = self.elan4(self.down4(p4, training), training)
        if self.vit is not None:
            tokens = self.vit(p3, training)
            p5 = self.fuse(T.concat([p5, tokens]), training)
        return self.head([p3, p4, p5])

    __call__ = forward

    # -- bookkeeping ------------------------------------------------------------

    def parameter_names(self) -> list[str]:
        return list(self.store.params.keys())

    def parameters(self) -> list[Tensor]:
        return list(self.store.params.values())

    def zero_grad(self) -> None:
        for p in self.store.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.store.params.items()}
        state.update(self.store.buffers)
        return state

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tens in self.store.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in state")
            if arrays[name].shape != tens.data.shape:
                raise T.ShapeError(
                    f"{name}: shape {arrays[name].shape} != {tens.data.shape}")
            tens.data = arrays[name].astype(tens.data.dtype)
        for name, buf in self.store.buffers.items():
            if name in arrays:
                buf[...] = arrays[name]

    def cast(self, dtype) -> "Model":
        """In-place dtype cast of parameters and buffers (float32 inference)."""
        for tens in self.store.params.values():
            tens.data = tens.data.astype(dtype)
        for buf in self.store.buffers.values():
            buf[...] = buf.astype(dtype)
        return self

    def parameter_bytes(self) -> int:
        return sum(t.data.nbytes for t in self.store.params.values())

    # -- complexity -----------------------------------------------------------

    def count_flops(self) -> dict[str, float]:
        """Closed-form forward FLOPs per top-level block (MACs counted x2).

        Convolutions, linear layers, attention score/value products, and
        squeeze-excite pooling/gating are counted; elementwise activations
        and normalizations are excluded.
        """
        s = self.spec.input_size
        table: dict[str, float] = {}
        h = w = s

        for name, block in (("stem", self.stem), ("down1", self.down1)):
            table[name] = block.flops(h, w)
            h, w = block.out_hw(h, w)
        table["elan1"] = self.elan1.flops(h, w)
        table["down2"] = self.down2.flops(h, w)
        h, w = self.down2.out_hw(h, w)
        table["elan2"] = self.elan2.flops(h, w)
        p3_hw = (h, w)
        table["down3"] = self.down3.flops(h, w)
        h, w = self.down3.out_hw(h, w)
        table["elan3"] = self.elan3.flops(h, w)
        p4_hw = (h, w)
        table["down4"] = self.down4.flops(h, w)
        h, w = self.down4.out_hw(h, w)
        table["elan4"] = self.elan4.flops(h, w)
        p5_hw = (h, w)

        if self.vit is not None:
            table["vit"] = self.vit.flops(*p3_hw)
            table["fuse"] = self.fuse.flops(*p5_hw)
        table["head"] = self.head.flops([p3_hw, p4_hw, p5_hw])
        table["total"] = sum(table.values())
        return table

    def gflops(self) -> float:
        return self.count_flops()["total"] / 1e9


def build(spec: ModelSpec, seed: int = 0) -> Model:
    """Deterministically construct and initialize a detector variant."""
    spec.validate()
    return Model(spec, seed)


def forward(model: Model, images: Tensor, training: bool = False) -> list[Tensor]:
    return model.forward(images, training=training)
