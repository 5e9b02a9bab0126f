"""Numpy fallback kernels. Must stay bit-identical to the Cython twin."""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two box arrays in (x, y, w, h) layout.

    a: (N, 4) float64, b: (M, 4) float64 -> (N, M) float64.
    Cells with zero union area are 0.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    ax1 = a[:, 0:1]
    ay1 = a[:, 1:2]
    ax2 = ax1 + a[:, 2:3]
    ay2 = ay1 + a[:, 3:4]
    bx1 = b[None, :, 0]
    by1 = b[None, :, 1]
    bx2 = bx1 + b[None, :, 2]
    by2 = by1 + b[None, :, 3]
    iw = np.maximum(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0)
    ih = np.maximum(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = (a[:, 2:3] * a[:, 3:4]) + (b[None, :, 2] * b[None, :, 3]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def greedy_match(iou: np.ndarray, order: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy detection-to-ground-truth assignment.

    iou: (N, M) pairwise IoU; order: detection indices in descending
    confidence; each detection claims the unclaimed ground truth with
    the highest IoU >= threshold (ties -> lowest index). Returns an
    (N,) int64 array of ground-truth indices, -1 for unmatched.
    """
    iou = np.asarray(iou, dtype=np.float64)
    n, m = iou.shape
    assign = np.full(n, -1, dtype=np.int64)
    claimed = np.zeros(m, dtype=bool)
    for d in np.asarray(order, dtype=np.int64):
        best = -1
        best_iou = 0.0
        for g in range(m):
            if claimed[g]:
                continue
            v = iou[d, g]
            if v >= threshold and (best < 0 or v > best_iou):
                best = g
                best_iou = v
        if best >= 0:
            assign[d] = best
            claimed[best] = True
    return assign
