import numpy as np
import pytest

from alsim.detections import Detection
from alsim.geometry import BBox


def make_probs(class_id: int, n_classes: int, peak: float = 0.7) -> np.ndarray:
    """Valid class-probability vector with its argmax at ``class_id``."""
    p = np.full(n_classes + 1, (1.0 - peak) / n_classes)
    p[class_id] = peak
    return p


def make_detection(
    box,
    class_id: int = 0,
    confidence: float = 0.9,
    n_classes: int = 3,
    feature=None,
    peak: float = 0.7,
) -> Detection:
    if not isinstance(box, BBox):
        box = BBox.from_sequence(box)
    if feature is None:
        feature = np.zeros(4)
    return Detection(box, class_id, confidence, make_probs(class_id, n_classes, peak), feature)


def random_box(rng, span: float = 100.0) -> BBox:
    x1, y1 = rng.uniform(0.0, span, size=2)
    w, h = rng.uniform(0.5, span, size=2)
    return BBox(x1, y1, x1 + w, y1 + h)


def random_detection(rng, n_classes: int = 4, dim: int = 4, span: float = 100.0) -> Detection:
    class_id = int(rng.integers(n_classes))
    probs = rng.dirichlet(np.ones(n_classes + 1))
    top = int(np.argmax(probs[:n_classes]))
    probs[[top, class_id]] = probs[[class_id, top]]
    return Detection(
        random_box(rng, span),
        class_id,
        float(rng.random()),
        probs,
        rng.normal(size=dim),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
