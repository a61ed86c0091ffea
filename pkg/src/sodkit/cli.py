"""Command-line entry point.

Subcommands cover the full workflow: generate a synthetic dataset, train a
detector variant, evaluate a checkpoint (or externally supplied
detections), benchmark steady-state inference, and report model FLOPs.

Flags override values from an optional JSON config file (flat keys named
like the long flags with underscores). Exit codes: 0 success, 1 runtime
failure, 2 usage error.

A checkpoint is a directory holding model_spec.json, weights.sodw, and the
training log.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bench import BenchReport, time_inference
from .metrics import Detection, MetricsReport, map_suite, nms
from .models import Model, ModelSpec, VARIANTS, build
from .scene.dataset import GenConfig, generate_dataset, load_split, write_ppm
from .train import (
    TrainConfig,
    decode,
    evaluate_model,
    labels_to_pixel_gts,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train,
)
from .tensor import Tensor
from .viz import (
    draw_detections,
    save_latency_png,
    save_pr_curve_png,
    save_training_curves_png,
)

CHECKPOINT_WEIGHTS = "weights.sodw"
CHECKPOINT_SPEC = "model_spec.json"


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return payload


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _dataclass_from(args, config, cls, renames: dict | None = None, **overrides):
    renames = renames or {}
    kwargs = {}
    for f in fields(cls):
        key = renames.get(f.name, f.name)
        if f.name in overrides:
            kwargs[f.name] = overrides[f.name]
        else:
            value = _merged(args, config, key, None)
            if value is not None:
                kwargs[f.name] = value
    return cls(**kwargs)


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _load_config(args.config)
    cfg = _dataclass_from(args, config, GenConfig)
    out = Path(args.out)
    manifest = generate_dataset(cfg, out)
    n_train = len(manifest["splits"]["train"])
    n_test = len(manifest["splits"]["test"])
    objects = sum(rec["objects"] for split in manifest["splits"].values() for rec in split)
    print(f"{n_train} train / {n_test} test images under {out} "
          f"({objects} boxes, seed {cfg.seed})")
    return 0


def _resolve_checkpoint_dir(path: str) -> Path:
    ckpt = Path(path)
    if not (ckpt / CHECKPOINT_SPEC).exists():
        raise FileNotFoundError(f"{ckpt}: missing {CHECKPOINT_SPEC}")
    if not (ckpt / CHECKPOINT_WEIGHTS).exists():
        raise FileNotFoundError(f"{ckpt}: missing {CHECKPOINT_WEIGHTS}")
    return ckpt


def _load_model(path: str) -> Model:
    ckpt = _resolve_checkpoint_dir(path)
    spec = ModelSpec.from_json(ckpt / CHECKPOINT_SPEC)
    model = build(spec, seed=0)
    load_checkpoint(ckpt / CHECKPOINT_WEIGHTS, model)
    return model


def cmd_train(args) -> int:
    config = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start_epoch = 0
    optimizer = None
    cfg = _dataclass_from(args, config, TrainConfig,
                          renames={"batch_size": "batch", "nms_iou": "iou",
                                   "conf_threshold": "conf"})
    if args.resume:
        resume_dir = _resolve_checkpoint_dir(args.resume)
        spec = ModelSpec.from_json(resume_dir / CHECKPOINT_SPEC)
        model = build(spec, seed=cfg.seed)
        optimizer = make_optimizer(model, cfg)
        start_epoch = load_checkpoint(resume_dir / CHECKPOINT_WEIGHTS, model, optimizer)
    else:
        spec = _dataclass_from(args, config, ModelSpec)
        model = build(spec, seed=cfg.seed)

    images, labels = load_split(args.data, "train")
    log, optimizer = train(model, images, labels, cfg,
                           start_epoch=start_epoch, optimizer=optimizer)

    final_epoch = log.rows[-1].epoch if log.rows else start_epoch
    save_checkpoint(out / CHECKPOINT_WEIGHTS, model, optimizer, epoch=final_epoch)
    spec.to_json(out / CHECKPOINT_SPEC)
    log.write_csv(out / "log.csv")
    save_training_curves_png(out / "log.csv", out / "loss_curve.png")
    last = log.rows[-1] if log.rows else None
    if last is None:
        print(f"no epochs to run (start {start_epoch} >= epochs {cfg.epochs})")
    else:
        map_part = "" if last.map50 is None else f", val mAP50 {last.map50:.3f}"
        print(f"trained {spec.variant} to epoch {last.epoch} "
              f"(loss {last.loss:.4f}{map_part}); checkpoint at {out}")
    return 0


def _load_external_detections(path: str, image_names: list[str]):
    payload = json.loads(Path(path).read_text())
    by_image: dict[str, list[Detection]] = {name: [] for name in image_names}
    for rec in payload:
        name = rec["image"]
        if name not in by_image:
            raise KeyError(f"detection references unknown image {name!r}")
        by_image[name].append(Detection(
            class_id=int(rec["class_id"]),
            confidence=float(rec["confidence"]),
            box=tuple(float(v) for v in rec["box"]),
        ))
    return [by_image[name] for name in image_names]


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = load_split(args.data, args.split)
    image_names = [f"{args.split}/img_{i:05d}.ppm" for i in range(len(images))]
    conf, iou_thr = args.conf, args.iou

    if args.detections:
        dets_per_image = _load_external_detections(args.detections, image_names)
        dets_per_image = [nms(d, iou_thr) for d in dets_per_image]
        image_size = images[0].shape[0]
    elif args.checkpoint:
        model = _load_model(args.checkpoint)
        image_size = model.spec.input_size
        dets_per_image = []
        for image in images:
            stack = np.stack([image.astype(np.float64).transpose(2, 0, 1) / 255.0])
            maps = model.forward(Tensor(stack), training=False)
            dets = decode(maps, model.spec.strides, image_size, conf)[0]
            dets_per_image.append(nms(dets, iou_thr))
    else:
        raise ValueError("eval needs --checkpoint or --detections")

    gts_per_image = [labels_to_pixel_gts(gt, image_size) for gt in labels]
    report = map_suite(dets_per_image, gts_per_image)

    report.save_json(out / "metrics.json")
    with open(out / "metrics.csv", "w") as handle:
        handle.write("iou_threshold,ap\n")
        for threshold, ap in report.ap_by_threshold.items():
            handle.write(f"{threshold:.2f},{ap:.6f}\n")
    report.write_svg(out / "pr_curve.svg")
    save_pr_curve_png(report, out / "pr_curve.png")

    annotated_dir = out / "annotated"
    annotated_dir.mkdir(exist_ok=True)
    for idx in range(min(args.annotate_count, len(images))):
        overlay = draw_detections(images[idx], dets_per_image[idx])
        write_ppm(overlay, annotated_dir / f"img_{idx:05d}.ppm")

    print(f"mAP50 {report.map50:.4f} | mAP50:95 {report.map50_95:.4f} "
          f"({len(images)} {args.split} images)")
    return 0


def cmd_bench(args) -> int:
    model = _load_model(args.checkpoint)
    if args.float32:
        model.cast(np.float32)
    report = time_inference(model, runs=args.runs, discard=args.discard,
                            name=model.spec.variant, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / "bench.json")
    save_latency_png(report, out / "latency.png")
    print(report.summary_line())
    return 0


def cmd_flops(args) -> int:
    config = _load_config(args.config)
    spec = _dataclass_from(args, config, ModelSpec)
    model = build(spec, seed=0)
    table = model.count_flops()
    print(f"{spec.variant} @ {spec.input_size}x{spec.input_size}: "
          f"{table['total'] / 1e9:.4f} GFLOPs")
    if args.per_layer:
        for name, value in table.items():
            if name != "total":
                print(f"  {name:10s} {value / 1e6:10.3f} MFLOPs")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sodkit",
        description="Synthetic space-object-detection workflow: data generation, "
                    "training, evaluation, benchmarking, FLOPs accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--train-count", dest="train_count", type=int)
    gen.add_argument("--test-count", dest="test_count", type=int)
    gen.add_argument("--image-size", dest="image_size", type=int)
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train a detector variant")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.add_argument("--variant", choices=VARIANTS)
    tr.add_argument("--input-size", dest="input_size", type=int)
    tr.add_argument("--width-mult", dest="width_mult", type=float)
    tr.add_argument("--num-classes", dest="num_classes", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--optimizer", choices=("adam", "sgd"))
    tr.add_argument("--seed", type=int)
    tr.add_argument("--eval-every", dest="eval_every", type=int)
    tr.add_argument("--target-map50", dest="target_map50", type=float)
    tr.add_argument("--conf", type=float)
    tr.add_argument("--iou", type=float)
    tr.add_argument("--resume", help="checkpoint directory to continue from")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint or detection file")
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=("train", "test"))
    ev.add_argument("--out", required=True)
    ev.add_argument("--checkpoint")
    ev.add_argument("--detections", help="JSON detections to score instead of a model")
    ev.add_argument("--conf", type=float, default=0.1)
    ev.add_argument("--iou", type=float, default=0.5)
    ev.add_argument("--annotate-count", dest="annotate_count", type=int, default=8)
    ev.set_defaults(func=cmd_eval)

    be = sub.add_parser("bench", help="steady-state inference benchmark")
    be.add_argument("--checkpoint", required=True)
    be.add_argument("--out", required=True)
    be.add_argument("--runs", type=int, default=25)
    be.add_argument("--discard", type=int, default=5)
    be.add_argument("--seed", type=int)
    be.add_argument("--float32", action="store_true")
    be.set_defaults(func=cmd_bench)

    fl = sub.add_parser("flops", help="closed-form FLOPs for a model spec")
    fl.add_argument("--config")
    fl.add_argument("--variant", choices=VARIANTS)
    fl.add_argument("--input-size", dest="input_size", type=int)
    fl.add_argument("--width-mult", dest="width_mult", type=float)
    fl.add_argument("--per-layer", action="store_true")
    fl.set_defaults(func=cmd_flops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
