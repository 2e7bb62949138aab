"""Pure-NumPy implementations of the hot kernels.

These are the reference semantics; the compiled module in ``_native.pyx``
mirrors them operation-for-operation. Integer outputs (pair indices) are
bit-identical across backends; float distances may differ in the last ulp
because NumPy uses pairwise summation.
"""

import numpy as np


def pairwise_iou(boxes_a, boxes_b):
    """IoU matrix between two sets of [x1, y1, x2, y2] boxes.

    Returns an (N, M) float64 array. Boxes are assumed to have positive
    extent; callers enforce that at construction.
    """
    a = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def bib_pairs(boxes, classes, mu, delta):
    """Ordered (small, large) index pairs passing the box-in-box test.

    A pair (i, j), i != j, qualifies when class i == class j,
    area_j / area_i >= mu and intersection(i, j) / area_i >= delta.
    Rows are sorted by (i, j).
    """
    b = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    c = np.asarray(classes, dtype=np.int64).reshape(-1)
    n = c.shape[0]
    if n == 0:
        return np.empty((0, 2), dtype=np.int64)
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(b[:, None, 2], b[None, :, 2]) - np.maximum(b[:, None, 0], b[None, :, 0])
    ih = np.minimum(b[:, None, 3], b[None, :, 3]) - np.maximum(b[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    ok = (
        (c[:, None] == c[None, :])
        & (area[None, :] / area[:, None] >= mu)
        & (inter / area[:, None] >= delta)
    )
    np.fill_diagonal(ok, False)
    return np.argwhere(ok).astype(np.int64)


def min_dist(points, ref):
    """Euclidean distance from each row of ``points`` to its nearest row of ``ref``.

    Returns +inf everywhere when ``ref`` is empty.
    """
    p = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    r = np.ascontiguousarray(ref, dtype=np.float64)
    if r.size == 0:
        return np.full(p.shape[0], np.inf)
    r = r.reshape(-1, p.shape[1])
    out = np.full(p.shape[0], np.inf)
    # chunked to keep the (chunk, Q, D) temporary small
    step = max(1, int(4_000_000 / max(1, r.shape[0] * r.shape[1])))
    for lo in range(0, p.shape[0], step):
        hi = min(lo + step, p.shape[0])
        d2 = ((p[lo:hi, None, :] - r[None, :, :]) ** 2).sum(axis=2)
        out[lo:hi] = np.sqrt(d2.min(axis=1))
    return out
