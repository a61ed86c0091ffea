"""Independent brute-force reference implementations used as test oracles.

Everything here is written as plain loops over numpy scalars, deliberately
ignoring the vectorized/algorithmic shortcuts the package itself uses.
"""

from __future__ import annotations

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None = None,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Sliding-window cross-correlation with explicit loops."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for b in range(n):
        for co in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ci, i * stride + u, j * stride + v] * w[co, ci, u, v]
                    out[b, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def global_avg_pool_naive(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c))
    for b in range(n):
        for ch in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[b, ch, i, j]
            out[b, ch] = acc / (h * w)
    return out


def matmul_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


# -- detection metric oracles -------------------------------------------------


def iou_naive(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return inter / union


def nms_naive(dets, iou_threshold: float):
    """Greedy suppression re-derived from the stated rule: walk detections
    in descending confidence (ties -> lower original index), keep a
    detection unless it overlaps a kept same-class detection above the
    threshold."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept_indices: list[int] = []
    for i in order:
        suppressed = False
        for j in kept_indices:
            if dets[j].class_id != dets[i].class_id:
                continue
            if iou_naive(dets[j].box, dets[i].box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept_indices.append(i)
    return [dets[i] for i in kept_indices]


def average_precision_naive(dets_per_image, gts_per_image, iou_threshold: float,
                            class_id: int = 0) -> float:
    """Enumerate the PR staircase by hand, then 101-point interpolation."""
    flat = []
    for img, dets in enumerate(dets_per_image):
        for order, det in enumerate(dets):
            if det.class_id == class_id:
                flat.append((img, order, det))
    flat.sort(key=lambda rec: (-rec[2].confidence, rec[0], rec[1]))

    gt_boxes = []
    for gts in gts_per_image:
        gt_boxes.append([g for g in gts if g[0] == class_id])
    total_gt = sum(len(g) for g in gt_boxes)
    matched = [[False] * len(g) for g in gt_boxes]

    tps, fps = [], []
    for img, _, det in flat:
        best_iou, best_idx = 0.0, -1
        for idx, (_, box) in enumerate(gt_boxes[img]):
            if matched[img][idx]:
                continue
            val = iou_naive(det.box, box)
            if val > best_iou:
                best_iou, best_idx = val, idx
        if best_idx >= 0 and best_iou >= iou_threshold:
            matched[img][best_idx] = True
            tps.append(1)
            fps.append(0)
        else:
            tps.append(0)
            fps.append(1)

    if total_gt == 0:
        return 0.0
    precisions, recalls = [], []
    tp = fp = 0
    for t, f in zip(tps, fps):
        tp += t
        fp += f
        precisions.append(tp / (tp + fp))
        recalls.append(tp / total_gt)

    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        best = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r - 1e-12 and p > best:
                best = p
        ap += best / 101.0
    return ap


# -- image oracles -------------------------------------------------------------


def tight_pixel_bounds(image: np.ndarray, threshold: int = 30):
    """Scan for non-background pixels; return (x1, y1, x2, y2) pixel extents
    or None when nothing exceeds the threshold."""
    bright = image.max(axis=2) > threshold
    ys, xs = np.nonzero(bright)
    if xs.size == 0:
        return None
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
