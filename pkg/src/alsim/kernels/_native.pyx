# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: pairwise IoU, box-in-box pair search, nearest distances.

Semantics match ``_fallback.py``; see that module for the documented contract.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()


def pairwise_iou(boxes_a, boxes_b):
    cdef double[:, ::1] a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double ax1, ay1, ax2, ay2, area_a, iw, ih, inter, area_b
    for i in range(n):
        ax1 = a[i, 0]; ay1 = a[i, 1]; ax2 = a[i, 2]; ay2 = a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            iw = min(ax2, b[j, 2]) - max(ax1, b[j, 0])
            ih = min(ay2, b[j, 3]) - max(ay1, b[j, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            out[i, j] = inter / (area_a + area_b - inter)
    return out_arr


def bib_pairs(boxes, classes, double mu, double delta):
    cdef double[:, ::1] b = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef long long[::1] c = np.ascontiguousarray(classes, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t n = c.shape[0], i, j, count = 0
    if n == 0:
        return np.empty((0, 2), dtype=np.int64)
    area_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] area = area_arr
    for i in range(n):
        area[i] = (b[i, 2] - b[i, 0]) * (b[i, 3] - b[i, 1])
    # worst case n*(n-1) rows; trimmed before return
    pairs_arr = np.empty((n * (n - 1) if n > 1 else 0, 2), dtype=np.int64)
    cdef long long[:, ::1] pairs = pairs_arr
    cdef double iw, ih, inter
    for i in range(n):
        for j in range(n):
            if i == j or c[i] != c[j]:
                continue
            if area[j] / area[i] < mu:
                continue
            iw = min(b[i, 2], b[j, 2]) - max(b[i, 0], b[j, 0])
            ih = min(b[i, 3], b[j, 3]) - max(b[i, 1], b[j, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            if inter / area[i] >= delta:
                pairs[count, 0] = i
                pairs[count, 1] = j
                count += 1
    return pairs_arr[:count].copy()


def min_dist(points, ref):
    p_arr = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    r_arr = np.ascontiguousarray(ref, dtype=np.float64)
    if r_arr.size == 0:
        return np.full(p_arr.shape[0], np.inf)
    r_arr = r_arr.reshape(-1, p_arr.shape[1])
    cdef double[:, ::1] p = p_arr
    cdef double[:, ::1] r = r_arr
    cdef Py_ssize_t n = p.shape[0], q = r.shape[0], d = p.shape[1], i, j, k
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double best, acc, diff
    for i in range(n):
        best = INFINITY
        for j in range(q):
            acc = 0.0
            for k in range(d):
                diff = p[i, k] - r[j, k]
                acc += diff * diff
                if acc >= best:
                    break
            if acc < best:
                best = acc
        out[i] = sqrt(best)
    return out_arr
