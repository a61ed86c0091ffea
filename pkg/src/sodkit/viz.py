"""Report rendering: detection overlays on frames, and matplotlib figures
for the PR curve, training log, and benchmark runs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchReport
from .metrics import Detection, MetricsReport

BOX_COLOR = (96, 255, 128)

# 3x5 bitmap glyphs for confidence text on raw frames.
_GLYPHS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
    ".": ("000", "000", "000", "000", "010"),
}


def _draw_text(image: np.ndarray, x: int, y: int, text: str, color) -> None:
    h, w = image.shape[:2]
    for ch in text:
        glyph = _GLYPHS.get(ch)
        if glyph is None:
            x += 4
            continue
        for row, bits in enumerate(glyph):
            for col, bit in enumerate(bits):
                if bit == "1" and 0 <= y + row < h and 0 <= x + col < w:
                    image[y + row, x + col] = color
        x += 4


def _draw_rect(image: np.ndarray, x1: int, y1: int, x2: int, y2: int, color) -> None:
    h, w = image.shape[:2]
    x1, x2 = max(0, x1), min(w - 1, x2)
    y1, y2 = max(0, y1), min(h - 1, y2)
    if x1 > x2 or y1 > y2:
        return
    image[y1, x1 : x2 + 1] = color
    image[y2, x1 : x2 + 1] = color
    image[y1 : y2 + 1, x1] = color
    image[y1 : y2 + 1, x2] = color


def draw_detections(image: np.ndarray, detections: list[Detection],
                    color=BOX_COLOR) -> np.ndarray:
    """Copy of the frame with box outlines and confidence text."""
    out = image.copy()
    for det in detections:
        x1, y1, x2, y2 = (int(round(v)) for v in det.box)
        _draw_rect(out, x1, y1, x2 - 1, y2 - 1, color)
        label = f"{det.confidence:.2f}"
        ty = y1 - 7 if y1 >= 7 else y2 + 2
        _draw_text(out, max(0, x1), ty, label, color)
    return out


def save_pr_curve_png(report: MetricsReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(report.pr_recall, report.pr_precision, color="#1f77b4")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"PR @ IoU 0.50 (mAP50 = {report.map50:.3f}, "
                 f"mAP50:95 = {report.map50_95:.3f})")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves_png(csv_path: str | Path, path: str | Path) -> None:
    epochs, losses, maps = [], [], []
    with open(csv_path, newline="") as handle:
        for row in csv.DictReader(handle):
            epochs.append(int(row["epoch"]))
            losses.append(float(row["loss"]))
            maps.append(float(row["val_map50"]) if row["val_map50"] else None)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color="#d62728", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    known = [(e, m) for e, m in zip(epochs, maps) if m is not None]
    if known:
        ax2 = ax.twinx()
        ax2.plot(*zip(*known), color="#1f77b4", marker="o", label="val mAP50")
        ax2.set_ylabel("mAP50")
        ax2.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_latency_png(report: BenchReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    runs = np.arange(1, len(report.latencies_ms) + 1)
    ax.plot(runs, report.latencies_ms, marker="o", ms=3, color="#2ca02c")
    if report.runs_discarded:
        ax.axvspan(0.5, report.runs_discarded + 0.5, color="grey", alpha=0.2,
                   label=f"discarded ({report.runs_discarded})")
        ax.legend()
    ax.axhline(report.mean_ms, color="#d62728", ls="--", lw=1)
    ax.set_xlabel("run")
    ax.set_ylabel("latency (ms)")
    ax.set_title(f"{report.model_name}: mean {report.mean_ms:.2f} ms over "
                 f"{report.retained} retained runs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
