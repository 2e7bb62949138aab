"""Axis-aligned box arithmetic.

Boxes are corner-based ``[x_min, y_min, x_max, y_max]`` in continuous pixel
coordinates. Degenerate boxes are rejected at construction so every
downstream area ratio is well-defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "y_min", float(self.y_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        object.__setattr__(self, "y_max", float(self.y_max))
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate in {self.as_tuple()}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"box must have strictly positive extent: {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_sequence(cls, coords: Sequence[float]) -> "BBox":
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(*coords)


def area(b: BBox) -> float:
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    return inter / (area(a) + area(b) - inter)


def ioa_first(a: BBox, b: BBox) -> float:
    """Intersection of ``a`` and ``b`` over the area of ``a`` (not symmetric)."""
    return intersection_area(a, b) / area(a)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array for the batch kernels."""
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)
