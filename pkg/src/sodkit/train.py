"""Target assignment, detection loss, prediction decoding, optimizers, and
the training loop.

Assignment: each ground-truth box goes to the largest stride whose doubled
value still fits inside the box's larger side (clamped to the smallest
stride for tiny boxes), and to the cell containing the box center.

Decode: center = (cell + sigmoid(txy)) * stride, size = stride * exp(twh)
with the exponent capped at ln(4) as an overflow guard, confidence =
sigmoid(objectness) * sigmoid(best class logit).

Loss: lambda_box * (1 - IoU) averaged over positive cells
    + lambda_obj * objectness binary cross-entropy, with negative cells
      averaged over every cell and positive cells averaged per positive
      (positives are a sliver of the grid; a flat mean would starve them)
    + lambda_cls * binary cross-entropy averaged over positives
    + a small quadratic penalty on size logits beyond the exp cap: the
      capped decode has zero gradient up there, so without the penalty a
      size logit that overshoots ln(4) can never come back.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .metrics import Detection, MetricsReport, map_suite, nms
from .models import Model
from .tensor import Tensor
from .weights import load_weights, save_weights

MAX_SIZE_RATIO = 4.0
_LOG_MAX_RATIO = math.log(MAX_SIZE_RATIO)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss at epoch {epoch}: {value}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 8           # full-scale protocol: 1000 epochs, batch 16
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    lambda_box: float = 5.0
    lambda_obj: float = 1.0
    lambda_cls: float = 0.5
    conf_threshold: float = 0.25
    nms_iou: float = 0.5
    seed: int = 0
    eval_every: int = 0           # 0 disables eval-during-training
    target_map50: float | None = None  # early stop once reached (needs eval_every)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class ScaleTarget:
    mask: np.ndarray      # [H, W] 1.0 at assigned cells
    boxes: np.ndarray     # [4, H, W] target (cx, cy, w, h) in pixels
    classes: np.ndarray   # [H, W] int class ids, -1 where unassigned


@dataclass
class TargetMap:
    scales: list[ScaleTarget]
    num_positive: int


def select_scale(strides, max_dim_px: float) -> int:
    chosen = 0
    for idx, stride in enumerate(strides):
        if 2.0 * stride <= max_dim_px:
            chosen = idx
    return chosen


def assign_targets(gts, image_size: int, strides, num_classes: int) -> TargetMap:
    """Map normalized (class, cx, cy, w, h) boxes onto per-scale grids.

    Each box lands on exactly one (scale, cell); when two boxes contend for
    the same cell the first keeps it.
    """
    scales = []
    for stride in strides:
        cells = image_size // stride
        scales.append(ScaleTarget(
            mask=np.zeros((cells, cells)),
            boxes=np.ones((4, cells, cells)),
            classes=np.full((cells, cells), -1, dtype=int),
        ))
    num_positive = 0
    for cls, cx, cy, w, h in gts:
        if not (0 <= cls < num_classes):
            raise ValueError(f"class id {cls} outside [0, {num_classes})")
        cx_px, cy_px = cx * image_size, cy * image_size
        w_px, h_px = w * image_size, h * image_size
        scale = select_scale(strides, max(w_px, h_px))
        stride = strides[scale]
        target = scales[scale]
        cells = target.mask.shape[0]
        col = min(int(cx_px / stride), cells - 1)
        row = min(int(cy_px / stride), cells - 1)
        if target.mask[row, col]:
            continue
        target.mask[row, col] = 1.0
        target.boxes[:, row, col] = (cx_px, cy_px, w_px, h_px)
        target.classes[row, col] = cls
        num_positive += 1
    return TargetMap(scales=scales, num_positive=num_positive)


def encode_box(cx_px: float, cy_px: float, w_px: float, h_px: float, stride: int):
    """Raw-logit encoding of a pixel box at its assigned cell; inverse of
    the decode formulas for boxes within the representable size band."""
    col, row = int(cx_px / stride), int(cy_px / stride)
    def logit(p):
        p = min(max(p, 1e-7), 1.0 - 1e-7)
        return math.log(p / (1.0 - p))
    tx = logit(cx_px / stride - col)
    ty = logit(cy_px / stride - row)
    tw = math.log(max(w_px, 1e-9) / stride)
    th = math.log(max(h_px, 1e-9) / stride)
    return row, col, (tx, ty, tw, th)


def _bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """target*softplus(-x) + (1-target)*softplus(x), elementwise."""
    return (Tensor(target) * T.softplus(-logits)
            + Tensor(1.0 - target) * T.softplus(logits))


def _stack_scale(targets: list[TargetMap], scale: int):
    mask = np.stack([t.scales[scale].mask for t in targets])[:, None]
    boxes = np.stack([t.scales[scale].boxes for t in targets])
    classes = np.stack([t.scales[scale].classes for t in targets])
    return mask, boxes, classes


def detection_loss(raw_maps: list[Tensor], targets: list[TargetMap],
                   strides, image_size: int, cfg: TrainConfig):
    """Differentiable loss over a batch; returns (total, named terms)."""
    num_classes = raw_maps[0].shape[1] - 5
    num_positive = sum(t.num_positive for t in targets)
    pos_norm = 1.0 / max(1, num_positive)
    total_cells = sum(m.shape[0] * m.shape[2] * m.shape[3] for m in raw_maps)

    box_sum = Tensor(0.0)
    obj_neg_sum = Tensor(0.0)
    obj_pos_sum = Tensor(0.0)
    cls_sum = Tensor(0.0)
    cap_sum = Tensor(0.0)
    for scale, (raw, stride) in enumerate(zip(raw_maps, strides)):
        n, _, cells, _ = raw.shape
        mask, tboxes, tclasses = _stack_scale(targets, scale)
        mask_t = Tensor(mask)
        grid = np.arange(cells) * 1.0
        grid_x = np.broadcast_to(grid[None, None, None, :], (n, 1, cells, cells))
        grid_y = np.broadcast_to(grid[None, None, :, None], (n, 1, cells, cells))

        tx, ty, tw, th, obj, cls_logits = T.split(raw, [1, 1, 1, 1, 1, num_classes])

        pred_cx = (Tensor(grid_x) + T.sigmoid(tx)) * float(stride)
        pred_cy = (Tensor(grid_y) + T.sigmoid(ty)) * float(stride)
        pred_w = T.exp(T.minimum(tw, _LOG_MAX_RATIO)) * float(stride)
        pred_h = T.exp(T.minimum(th, _LOG_MAX_RATIO)) * float(stride)
        over_w = T.relu(tw - _LOG_MAX_RATIO)
        over_h = T.relu(th - _LOG_MAX_RATIO)
        cap_sum = cap_sum + (over_w * over_w + over_h * over_h).sum()

        tb_cx = Tensor(tboxes[:, 0:1])
        tb_cy = Tensor(tboxes[:, 1:2])
        tb_w = Tensor(tboxes[:, 2:3])
        tb_h = Tensor(tboxes[:, 3:4])

        ix = T.maximum(T.minimum(pred_cx + pred_w * 0.5, tb_cx + tb_w * 0.5)
                       - T.maximum(pred_cx - pred_w * 0.5, tb_cx - tb_w * 0.5), 0.0)
        iy = T.maximum(T.minimum(pred_cy + pred_h * 0.5, tb_cy + tb_h * 0.5)
                       - T.maximum(pred_cy - pred_h * 0.5, tb_cy - tb_h * 0.5), 0.0)
        inter = ix * iy
        union = pred_w * pred_h + tb_w * tb_h - inter + 1e-9
        cell_iou = inter / union
        box_sum = box_sum + (mask_t * (1.0 - cell_iou)).sum()

        obj_bce = _bce_with_logits(obj, mask)
        obj_neg_sum = obj_neg_sum + (Tensor(1.0 - mask) * obj_bce).sum()
        obj_pos_sum = obj_pos_sum + (mask_t * obj_bce).sum()

        onehot = np.zeros((n, num_classes, cells, cells))
        for c in range(num_classes):
            onehot[:, c] = (tclasses == c)
        cls_sum = cls_sum + (mask_t * _bce_with_logits(cls_logits, onehot)).sum()

    box_loss = box_sum * (cfg.lambda_box * pos_norm)
    obj_loss = (obj_neg_sum * (cfg.lambda_obj / total_cells)
                + obj_pos_sum * (cfg.lambda_obj * pos_norm))
    cls_loss = cls_sum * (cfg.lambda_cls * pos_norm / max(1, num_classes))
    cap_loss = cap_sum * (1.0 / total_cells)
    total = box_loss + obj_loss + cls_loss + cap_loss

    parts = {
        "box": float(box_loss.data),
        "obj": float(obj_loss.data),
        "cls": float(cls_loss.data),
    }
    for name, value in parts.items():
        if not math.isfinite(value):
            raise T.NumericError(f"non-finite {name} loss term: {value}")
    return total, parts


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode(raw_maps: list[Tensor], strides, image_size: int,
           conf_threshold: float) -> list[list[Detection]]:
    """Raw prediction maps -> per-image detection lists (before NMS)."""
    if not (0.0 <= conf_threshold <= 1.0):
        raise ValueError(f"confidence threshold must lie in [0, 1], got {conf_threshold}")
    batch = raw_maps[0].shape[0]
    out: list[list[Detection]] = [[] for _ in range(batch)]
    for raw, stride in zip(raw_maps, strides):
        data = raw.data
        n, _, cells, _ = data.shape
        grid = np.arange(cells) * 1.0
        cx = (grid[None, None, :] + _sigmoid_np(data[:, 0])) * stride
        cy = (grid[None, :, None] + _sigmoid_np(data[:, 1])) * stride
        w = stride * np.exp(np.minimum(data[:, 2], _LOG_MAX_RATIO))
        h = stride * np.exp(np.minimum(data[:, 3], _LOG_MAX_RATIO))
        obj = _sigmoid_np(data[:, 4])
        cls_prob = _sigmoid_np(data[:, 5:])
        best_cls = cls_prob.argmax(axis=1)
        conf = obj * np.take_along_axis(cls_prob, best_cls[:, None], axis=1)[:, 0]

        for b in range(n):
            rows, cols = np.nonzero(conf[b] >= conf_threshold)
            for r, c in zip(rows, cols):
                x1 = float(np.clip(cx[b, r, c] - w[b, r, c] / 2, 0, image_size))
                x2 = float(np.clip(cx[b, r, c] + w[b, r, c] / 2, 0, image_size))
                y1 = float(np.clip(cy[b, r, c] - h[b, r, c] / 2, 0, image_size))
                y2 = float(np.clip(cy[b, r, c] + h[b, r, c] / 2, 0, image_size))
                if x1 >= x2 or y1 >= y2:
                    continue
                out[b].append(Detection(
                    class_id=int(best_cls[b, r, c]),
                    confidence=float(conf[b, r, c]),
                    box=(x1, y1, x2, y2),
                ))
    return out


# -- optimizers ---------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (p.grad - m)
            v += (1.0 - b2) * (p.grad * p.grad - v)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {f"opt.m.{n}": a for n, a in self.m.items()}
        state.update({f"opt.v.{n}": a for n, a in self.v.items()})
        state["opt.step"] = np.array(float(self.step_count))
        return state

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.m:
            self.m[name][...] = arrays[f"opt.m.{name}"]
            self.v[name][...] = arrays[f"opt.v.{name}"]
        self.step_count = int(arrays["opt.step"].reshape(-1)[0])


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-2, momentum: float = 0.9):
        self.params = params
        self.lr, self.momentum = lr, momentum
        self.buf = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            buf = self.buf[name]
            buf *= self.momentum
            buf += p.grad
            p.data -= self.lr * buf

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"opt.buf.{n}": a for n, a in self.buf.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.buf:
            self.buf[name][...] = arrays[f"opt.buf.{name}"]


def make_optimizer(model: Model, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(model.store.params, lr=cfg.lr, betas=cfg.betas)
    if cfg.optimizer == "sgd":
        return SGD(model.store.params, lr=cfg.lr, momentum=cfg.momentum)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


# -- data plumbing ---------------------------------------------------------------


def labels_to_pixel_gts(labels, image_size: int):
    """Normalized (cls, cx, cy, w, h) -> (cls, (x1, y1, x2, y2)) in pixels."""
    out = []
    for cls, cx, cy, w, h in labels:
        out.append((cls, (
            (cx - w / 2) * image_size,
            (cy - h / 2) * image_size,
            (cx + w / 2) * image_size,
            (cy + h / 2) * image_size,
        )))
    return out


def _batch_tensor(images: list[np.ndarray]) -> Tensor:
    stack = np.stack([img.astype(np.float64).transpose(2, 0, 1) / 255.0 for img in images])
    return Tensor(stack)


def evaluate_model(model: Model, images: list[np.ndarray], labels,
                   conf_threshold: float, nms_iou: float) -> MetricsReport:
    """Infer-mode forward + decode + NMS over a split, then the mAP suite."""
    size = model.spec.input_size
    dets_per_image, gts_per_image = [], []
    for image, gts in zip(images, labels):
        maps = model.forward(_batch_tensor([image]), training=False)
        dets = decode(maps, model.spec.strides, size, conf_threshold)[0]
        dets_per_image.append(nms(dets, nms_iou))
        gts_per_image.append(labels_to_pixel_gts(gts, size))
    return map_suite(dets_per_image, gts_per_image)


# -- training loop ----------------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    loss: float
    box: float
    obj: float
    cls: float
    lr: float
    map50: float | None = None


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "loss", "box", "obj", "cls", "lr", "val_map50"])
            for row in self.rows:
                writer.writerow([
                    row.epoch, f"{row.loss:.6f}", f"{row.box:.6f}", f"{row.obj:.6f}",
                    f"{row.cls:.6f}", f"{row.lr:.6g}",
                    "" if row.map50 is None else f"{row.map50:.6f}",
                ])


def train(model: Model, images: list[np.ndarray], labels, cfg: TrainConfig,
          start_epoch: int = 0, optimizer=None) -> tuple[TrainLog, object]:
    """Optimize the model on (images, labels); deterministic under cfg.seed.

    Returns the per-epoch log and the optimizer (for checkpointing).
    Raises TrainingDiverged when the loss goes non-finite.
    """
    if not images:
        raise ValueError("training requires a non-empty dataset")
    size = model.spec.input_size
    strides = model.spec.strides
    num_classes = model.spec.num_classes
    targets = [assign_targets(gts, size, strides, num_classes) for gts in labels]
    optimizer = optimizer or make_optimizer(model, cfg)

    log = TrainLog()
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(images))
        sums = {"loss": 0.0, "box": 0.0, "obj": 0.0, "cls": 0.0}
        batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = _batch_tensor([images[i] for i in idx])
            batch_targets = [targets[i] for i in idx]
            try:
                maps = model.forward(batch, training=True)
                loss, parts = detection_loss(maps, batch_targets, strides, size, cfg)
            except T.NumericError as exc:
                raise TrainingDiverged(epoch, float("nan")) from exc
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            model.zero_grad()
            loss.backward()
            optimizer.step()
            sums["loss"] += value
            for key in ("box", "obj", "cls"):
                sums[key] += parts[key]
            batches += 1

        row = EpochRow(
            epoch=epoch + 1,
            loss=sums["loss"] / batches,
            box=sums["box"] / batches,
            obj=sums["obj"] / batches,
            cls=sums["cls"] / batches,
            lr=cfg.lr,
        )
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate_model(model, images, labels,
                                    cfg.conf_threshold, cfg.nms_iou)
            row.map50 = report.map50
        log.rows.append(row)
        if (cfg.target_map50 is not None and row.map50 is not None
                and row.map50 >= cfg.target_map50):
            break
    return log, optimizer


# -- checkpointing ---------------------------------------------------------------


def save_checkpoint(path: str | Path, model: Model, optimizer=None,
                    epoch: int = 0) -> None:
    arrays = dict(model.state_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    arrays["train.epoch"] = np.array(float(epoch))
    save_weights(arrays, path)


def load_checkpoint(path: str | Path, model: Model, optimizer=None) -> int:
    """Restore model (and optional optimizer) state; returns the stored epoch."""
    arrays = load_weights(path)
    model.load_state(arrays)
    if optimizer is not None:
        optimizer.load_state(arrays)
    epoch = arrays.get("train.epoch")
    return int(epoch.reshape(-1)[0]) if epoch is not None else 0
