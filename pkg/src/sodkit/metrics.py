"""Detection-quality metrics: IoU, greedy NMS, and COCO-style average
precision (101-point interpolation, IoU thresholds 0.50:0.05:0.95).

Conventions pinned for cross-implementation determinism:
  - boxes are (x1, y1, x2, y2) in pixels with x1 < x2, y1 < y2;
  - detections are processed in descending confidence, ties broken by
    lower (image index, original index);
  - matching is greedy: each detection takes the unmatched ground-truth
    box of its class with the highest IoU at or above the threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
_GRID_EPS = 1e-12


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    box: tuple[float, float, float, float]

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"box corners must be ordered, got {self.box}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


GroundTruth = tuple[int, tuple[float, float, float, float]]


def iou(a, b) -> float:
    """Intersection over union; 0 for disjoint or degenerate boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy suppression; returns survivors in processing order."""
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou threshold must lie in [0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept: list[Detection] = []
    for i in order:
        cand = dets[i]
        if any(k.class_id == cand.class_id and iou(k.box, cand.box) > iou_threshold
               for k in kept):
            continue
        kept.append(cand)
    return kept


def _class_pr(dets_per_image, gts_per_image, iou_threshold: float, class_id: int):
    """Cumulative precision/recall arrays for one class over the corpus."""
    ranked = []
    for img, dets in enumerate(dets_per_image):
        for idx, det in enumerate(dets):
            if det.class_id == class_id:
                ranked.append((-det.confidence, img, idx, det))
    ranked.sort(key=lambda rec: rec[:3])

    gt_boxes = [[box for cls, box in gts if cls == class_id] for gts in gts_per_image]
    total_gt = sum(len(g) for g in gt_boxes)
    taken = [np.zeros(len(g), dtype=bool) for g in gt_boxes]

    tp = np.zeros(len(ranked))
    for rank, (_, img, _, det) in enumerate(ranked):
        best_iou, best = 0.0, -1
        for j, box in enumerate(gt_boxes[img]):
            if taken[img][j]:
                continue
            val = iou(det.box, box)
            if val > best_iou:
                best_iou, best = val, j
        if best >= 0 and best_iou >= iou_threshold:
            taken[img][best] = True
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-16)
    recall = cum_tp / total_gt if total_gt else np.zeros(len(ranked))
    return precision, recall, total_gt


def _interpolated_ap(precision: np.ndarray, recall: np.ndarray):
    """101-point interpolation of the precision envelope."""
    if len(precision) == 0:
        return 0.0, np.zeros_like(RECALL_GRID)
    order = np.argsort(recall, kind="stable")
    recall = recall[order]
    envelope = np.maximum.accumulate(precision[order][::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID - _GRID_EPS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean()), sampled


def average_precision(dets_per_image, gts_per_image, iou_threshold: float):
    """Mean AP over the classes present in the ground truth.

    Returns (ap, warn_empty); a corpus with no ground truth and no
    detections is defined as AP 0 with the warning flag set.
    """
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detection and ground-truth lists must align per image")
    classes = sorted({cls for gts in gts_per_image for cls, _ in gts})
    if not classes:
        has_dets = any(dets for dets in dets_per_image)
        return 0.0, not has_dets
    aps = []
    for cls in classes:
        precision, recall, total_gt = _class_pr(dets_per_image, gts_per_image,
                                                iou_threshold, cls)
        if total_gt == 0:
            aps.append(0.0)
            continue
        ap, _ = _interpolated_ap(precision, recall)
        aps.append(ap)
    return float(np.mean(aps)), False


@dataclass
class MetricsReport:
    map50: float
    map50_95: float
    ap_by_threshold: dict[float, float]
    pr_recall: list[float]
    pr_precision: list[float]
    empty_corpus: bool = False

    def to_dict(self) -> dict:
        return {
            "mAP50": self.map50,
            "mAP50_95": self.map50_95,
            "ap_by_threshold": {f"{t:.2f}": ap for t, ap in self.ap_by_threshold.items()},
            "pr_recall": self.pr_recall,
            "pr_precision": self.pr_precision,
            "empty_corpus": self.empty_corpus,
        }

    @staticmethod
    def from_dict(payload: dict) -> "MetricsReport":
        return MetricsReport(
            map50=payload["mAP50"],
            map50_95=payload["mAP50_95"],
            ap_by_threshold={float(t): ap for t, ap in payload["ap_by_threshold"].items()},
            pr_recall=list(payload["pr_recall"]),
            pr_precision=list(payload["pr_precision"]),
            empty_corpus=payload["empty_corpus"],
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load_json(path: str | Path) -> "MetricsReport":
        return MetricsReport.from_dict(json.loads(Path(path).read_text()))

    def write_svg(self, path: str | Path, width: int = 440, height: int = 340) -> None:
        """Precision-recall polyline at IoU 0.50, for quick human inspection."""
        pad = 40
        plot_w, plot_h = width - 2 * pad, height - 2 * pad
        points = " ".join(
            f"{pad + r * plot_w:.1f},{height - pad - p * plot_h:.1f}"
            for r, p in zip(self.pr_recall, self.pr_precision)
        )
        svg = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
            f'  <rect width="{width}" height="{height}" fill="white"/>\n'
            f'  <line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
            f'  <line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
            f'  <text x="{width // 2}" y="{height - 8}" font-size="12" text-anchor="middle">recall</text>\n'
            f'  <text x="12" y="{height // 2}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 12 {height // 2})">precision</text>\n'
            f'  <text x="{width // 2}" y="{pad - 12}" font-size="12" text-anchor="middle">'
            f'PR @ IoU 0.50 (mAP50 = {self.map50:.3f})</text>\n'
            f'  <polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>\n'
            f"</svg>\n"
        )
        Path(path).write_text(svg)


def map_suite(dets_per_image, gts_per_image) -> MetricsReport:
    """mAP50 plus the 0.50:0.05:0.95 threshold ladder."""
    ap_by_threshold: dict[float, float] = {}
    empty = False
    pr_curve = np.zeros_like(RECALL_GRID)
    for threshold in IOU_THRESHOLDS:
        ap, warn = average_precision(dets_per_image, gts_per_image, threshold)
        ap_by_threshold[threshold] = ap
        empty = empty or warn
        if threshold == 0.5:
            classes = sorted({cls for gts in gts_per_image for cls, _ in gts})
            curves = []
            for cls in classes:
                precision, recall, total_gt = _class_pr(
                    dets_per_image, gts_per_image, threshold, cls)
                if total_gt:
                    curves.append(_interpolated_ap(precision, recall)[1])
            if curves:
                pr_curve = np.mean(curves, axis=0)
    return MetricsReport(
        map50=ap_by_threshold[0.5],
        map50_95=float(np.mean(list(ap_by_threshold.values()))),
        ap_by_threshold=ap_by_threshold,
        pr_recall=[float(r) for r in RECALL_GRID],
        pr_precision=[float(p) for p in pr_curve],
        empty_corpus=empty,
    )
