# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Bit-identical twin of _pykernels (FP contraction off)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def iou_matrix(a, b):
    """Pairwise IoU of (N, 4) and (M, 4) float64 box arrays in xywh layout."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] aa = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = aa.shape[0]
    cdef Py_ssize_t m = bb.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, aw, ah
    cdef double bx1, by1, bx2, by2, bw, bh
    cdef double iw, ih, inter, union
    for i in range(n):
        ax1 = aa[i, 0]
        ay1 = aa[i, 1]
        aw = aa[i, 2]
        ah = aa[i, 3]
        ax2 = ax1 + aw
        ay2 = ay1 + ah
        for j in range(m):
            bx1 = bb[j, 0]
            by1 = bb[j, 1]
            bw = bb[j, 2]
            bh = bb[j, 3]
            bx2 = bx1 + bw
            by2 = by1 + bh
            iw = min(ax2, bx2) - max(ax1, bx1)
            if iw < 0.0:
                iw = 0.0
            ih = min(ay2, by2) - max(ay1, by1)
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            union = (aw * ah) + (bw * bh) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def greedy_match(iou, order, double threshold):
    """Greedy assignment; see the fallback implementation for semantics."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] mat = np.asarray(iou, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ord_arr = np.asarray(order, dtype=np.int64)
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t m = mat.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] assign = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] claimed = np.zeros(m, dtype=np.uint8)
    cdef Py_ssize_t k, g, d, best
    cdef double v, best_iou
    for k in range(ord_arr.shape[0]):
        d = ord_arr[k]
        best = -1
        best_iou = 0.0
        for g in range(m):
            if claimed[g]:
                continue
            v = mat[d, g]
            if v >= threshold and (best < 0 or v > best_iou):
                best = g
                best_iou = v
        if best >= 0:
            assign[d] = best
            claimed[best] = 1
    return assign
