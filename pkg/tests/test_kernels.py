"""Backend agreement: compiled kernels against the NumPy fallback and
against independent scipy references."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from alsim.kernels import _fallback

try:
    from alsim.kernels import _native
except ImportError:
    _native = None

needs_native = pytest.mark.skipif(_native is None, reason="compiled kernels not built")


def random_boxes(rng, n):
    xy = rng.uniform(0, 100, size=(n, 2))
    wh = rng.uniform(0.5, 60, size=(n, 2))
    return np.hstack([xy, xy + wh])


@needs_native
def test_pairwise_iou_bit_identical(rng):
    for _ in range(20):
        a = random_boxes(rng, int(rng.integers(1, 40)))
        b = random_boxes(rng, int(rng.integers(1, 40)))
        got_native = _native.pairwise_iou(a, b)
        got_fallback = _fallback.pairwise_iou(a, b)
        assert np.array_equal(got_native, got_fallback)


def test_pairwise_iou_reference_values():
    a = np.array([[0.0, 0.0, 10.0, 10.0]])
    b = np.array([[5.0, 5.0, 15.0, 15.0], [0.0, 0.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]])
    out = _fallback.pairwise_iou(a, b)
    assert out[0] == pytest.approx([25 / 175, 1.0, 0.0])


@needs_native
def test_bib_pairs_bit_identical(rng):
    for _ in range(50):
        n = int(rng.integers(0, 25))
        boxes = random_boxes(rng, n)
        classes = rng.integers(0, 3, size=n)
        mu = float(rng.uniform(1.1, 4.0))
        delta = float(rng.uniform(0.1, 1.0))
        got_native = _native.bib_pairs(boxes, classes, mu, delta)
        got_fallback = _fallback.bib_pairs(boxes, classes, mu, delta)
        assert np.array_equal(got_native, got_fallback)


def test_bib_pairs_row_order_is_sorted(rng):
    boxes = random_boxes(rng, 20)
    classes = np.zeros(20, dtype=np.int64)
    pairs = _fallback.bib_pairs(boxes, classes, 1.2, 0.3)
    as_tuples = [tuple(row) for row in pairs]
    assert as_tuples == sorted(as_tuples)


@pytest.mark.parametrize("impl", [p for p in (_fallback, _native) if p is not None])
def test_min_dist_against_cdist(impl, rng):
    for _ in range(20):
        p = rng.normal(size=(int(rng.integers(1, 30)), 6))
        r = rng.normal(size=(int(rng.integers(1, 20)), 6))
        expected = cdist(p, r).min(axis=1)
        assert impl.min_dist(p, r) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("impl", [p for p in (_fallback, _native) if p is not None])
def test_min_dist_empty_reference(impl):
    out = impl.min_dist(np.zeros((3, 2)), np.empty((0, 0)))
    assert np.all(np.isinf(out))


@needs_native
def test_min_dist_backends_agree(rng):
    p = rng.normal(size=(50, 32))
    r = rng.normal(size=(40, 32))
    assert _native.min_dist(p, r) == pytest.approx(_fallback.min_dist(p, r), rel=1e-12)


def test_env_override_selects_backend():
    import subprocess
    import sys

    code = "from alsim import kernels; print(kernels.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "ALSIM_KERNELS": "fallback"},
    )
    assert out.stdout.strip() == "fallback"
