"""Data model shared by every acquisition strategy.

Images carry a weak (image-level) label and optional ground-truth boxes;
detector outputs are per-image lists of scored boxes with class-probability
vectors and region features. Everything is immutable after load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from alsim.geometry import BBox

#: keys accepted in per-image weak-loss maps
LOSS_KEYS = ("mil", "ref1", "ref2", "ref3", "ref_sum")


@dataclass
class Detection:
    """One predicted box.

    ``class_probs`` has C+1 entries: the C object classes followed by
    background (last index). ``class_id`` must be the argmax over the C
    object-class entries, ties going to the lowest index.
    """

    box: BBox
    class_id: int
    confidence: float
    class_probs: np.ndarray
    feature: np.ndarray

    def __post_init__(self):
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        self.feature = np.asarray(self.feature, dtype=np.float64)
        self.confidence = float(self.confidence)
        if self.class_probs.ndim != 1 or self.class_probs.shape[0] < 2:
            raise ValueError("class_probs must be a vector of length C+1 >= 2")
        if np.any(self.class_probs < 0):
            raise ValueError("class_probs entries must be >= 0")
        if abs(float(self.class_probs.sum()) - 1.0) > 1e-6:
            raise ValueError("class_probs must sum to 1 within 1e-6")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        n_obj = self.class_probs.shape[0] - 1
        if not 0 <= self.class_id < n_obj:
            raise ValueError(f"class_id {self.class_id} outside [0, {n_obj})")
        if int(np.argmax(self.class_probs[:n_obj])) != self.class_id:
            raise ValueError(
                f"class_id {self.class_id} is not the argmax of the object-class probabilities"
            )


@dataclass
class ImagePredictions:
    image_id: str
    detections: list[Detection]
    image_feature: np.ndarray | None = None
    weak_loss: dict[str, float] | None = None

    def __post_init__(self):
        if self.image_feature is not None:
            self.image_feature = np.asarray(self.image_feature, dtype=np.float64)
        if self.weak_loss is not None:
            for key, value in self.weak_loss.items():
                if key not in LOSS_KEYS:
                    raise ValueError(f"unknown weak_loss key {key!r}")
                if not math.isfinite(value) or value < 0:
                    raise ValueError(f"weak_loss[{key!r}] must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class GroundTruthBox:
    box: BBox
    class_id: int


@dataclass
class DatasetImage:
    image_id: str
    width: float
    height: float
    weak_label: np.ndarray  # (C,) 0/1 class presence
    gt_boxes: list[GroundTruthBox] = field(default_factory=list)

    def __post_init__(self):
        self.weak_label = np.asarray(self.weak_label, dtype=np.int8)

    @property
    def present_classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.weak_label)]


@dataclass
class Dataset:
    class_names: list[str]
    images: list[DatasetImage]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_ids(self) -> list[str]:
        return [im.image_id for im in self.images]

    def by_id(self) -> dict[str, DatasetImage]:
        return {im.image_id: im for im in self.images}


def validate_dataset(data) -> list[str]:
    """Check dataset invariants, returning one message per violation.

    Accepts either a parsed ``Dataset`` or the raw JSON mapping, so that
    files too malformed to construct typed boxes can still be reported on.
    """
    if isinstance(data, Dataset):
        data = _dataset_to_raw(data)
    violations: list[str] = []
    classes = data.get("classes")
    if not isinstance(classes, list) or not classes:
        return ["dataset: 'classes' must be a non-empty list"]
    n_classes = len(classes)
    seen_ids: set[str] = set()
    for pos, im in enumerate(data.get("images", [])):
        image_id = str(im.get("id", f"<image #{pos}>"))
        if image_id in seen_ids:
            violations.append(f"{image_id}: duplicate image id")
        seen_ids.add(image_id)
        weak = im.get("weak_label", [])
        if len(weak) != n_classes:
            violations.append(
                f"{image_id}: weak_label length {len(weak)} != class count {n_classes}"
            )
            continue
        if not any(weak):
            violations.append(f"{image_id}: weak_label marks no class present")
        width, height = im.get("width", 0), im.get("height", 0)
        for k, gt in enumerate(im.get("gt", [])):
            box = gt.get("box", [])
            cls = gt.get("class", -1)
            if len(box) != 4:
                violations.append(f"{image_id}: gt[{k}] box needs 4 coordinates")
                continue
            x1, y1, x2, y2 = box
            if not all(math.isfinite(float(v)) for v in box):
                violations.append(f"{image_id}: gt[{k}] has non-finite coordinates")
                continue
            if x2 <= x1 or y2 <= y1:
                violations.append(f"{image_id}: gt[{k}] box has non-positive extent")
                continue
            if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
                violations.append(f"{image_id}: gt[{k}] box outside image bounds")
            if not 0 <= cls < n_classes:
                violations.append(f"{image_id}: gt[{k}] class {cls} outside [0, {n_classes})")
            elif not weak[cls]:
                violations.append(
                    f"{image_id}: gt[{k}] class {cls} not marked present in weak_label"
                )
    return violations


def _dataset_to_raw(ds: Dataset) -> dict:
    return {
        "classes": list(ds.class_names),
        "images": [
            {
                "id": im.image_id,
                "width": im.width,
                "height": im.height,
                "weak_label": [int(v) for v in im.weak_label],
                "gt": [
                    {"box": list(gt.box.as_tuple()), "class": gt.class_id}
                    for gt in im.gt_boxes
                ],
            }
            for im in ds.images
        ],
    }


def image_feature_or_default(pred: ImagePredictions) -> np.ndarray:
    """Per-image feature: the explicit one, else mean-pooled detection features."""
    if pred.image_feature is not None:
        return pred.image_feature
    if pred.detections:
        return np.mean([d.feature for d in pred.detections], axis=0)
    raise ValueError(f"image {pred.image_id}: no feature source")


def normalize_class_probs(probs: Sequence[float], context: str = "") -> np.ndarray:
    """Renormalize a probability vector read from a file.

    Rejects vectors whose mass is off by more than 1e-3; smaller drift is
    silently renormalized to sum exactly to 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError(f"{context}: class_probs entries must be >= 0")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-3:
        raise ValueError(f"{context}: class_probs sum {total:.6f} deviates from 1 by more than 1e-3")
    if abs(total - 1.0) <= 1e-12:  # already normalized; keep parse idempotent
        return p
    return p / total


def weak_labels_of(dataset: Dataset) -> dict[str, np.ndarray]:
    return {im.image_id: im.weak_label for im in dataset.images}


def gt_boxes_of(dataset: Dataset) -> dict[str, list[GroundTruthBox]]:
    return {im.image_id: list(im.gt_boxes) for im in dataset.images}
