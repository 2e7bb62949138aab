"""Synthetic detector source and dataset generator for closed-loop runs.

The source emulates a detector refreshed from scratch each cycle on the
current annotation set. Its two box-in-box failure modes mirror the
documented behaviour of weakly-supervised detectors: a tight box on the
most discriminative part of an object alongside the full box, and an
enclosing box merging same-class instances. Which images exhibit which
failure is a persistent latent property drawn once per run; annotating an
image that exhibits a failure mode suppresses that mode for the classes it
contains. Predictions therefore depend on the annotated set as a set (not
on the order it was built), and on nothing else but the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from alsim.bib import BibParams
from alsim.detections import (
    Dataset,
    DatasetImage,
    Detection,
    GroundTruthBox,
    ImagePredictions,
)
from alsim.geometry import BBox

# spawn-key domains for the per-purpose random streams
_LATENT, _TRAIN, _TEST = 0, 1, 2
_SPLIT_DOMAIN = {"train": _TRAIN, "test": _TEST}


@dataclass(frozen=True)
class SyntheticParams:
    """Corruption rates and improvement speed of the simulated detector.

    ``fidelity_gain`` controls how fast failures fade per annotated image;
    the per-mode suppression uses ``mode_gain_factor * fidelity_gain`` per
    annotated image that exhibits the mode and shares a class.
    """

    part_rate: float = 0.0
    group_rate: float = 0.0
    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    fidelity_gain: float = 0.0
    feature_noise: float = 0.1
    feature_dim: int = 16
    mode_gain_factor: float = 8.0

    def __post_init__(self):
        for name in ("part_rate", "group_rate", "miss_rate", "spurious_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.fidelity_gain < 0:
            raise ValueError("fidelity_gain must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


class SyntheticSource:
    """Generates per-image predictions for any split at any annotation state."""

    def __init__(
        self,
        train: Dataset,
        test: Dataset | None,
        params: SyntheticParams,
        bib_params: BibParams,
        seed: int,
    ):
        self.params = params
        self.bib_params = bib_params
        self.seed = int(seed)
        self.datasets: dict[str, Dataset] = {"train": train}
        if test is not None:
            self.datasets["test"] = test
        self._train_by_id = train.by_id()

        n_classes = train.num_classes
        dim = params.feature_dim
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(_LATENT,)))
        self.class_means = rng.normal(0.0, 3.0, size=(n_classes, dim))
        self.part_offset = rng.normal(0.0, 2.0, size=dim)
        self.group_offset = rng.normal(0.0, 2.0, size=dim)
        self.spurious_offset = rng.normal(0.0, 2.0, size=dim)
        self.part_prone: dict[tuple[str, str], bool] = {}
        self.group_prone: dict[tuple[str, str], bool] = {}
        for split in ("train", "test"):
            if split not in self.datasets:
                continue
            for im in self.datasets[split].images:
                key = (split, im.image_id)
                self.part_prone[key] = bool(rng.random() < params.part_rate)
                self.group_prone[key] = bool(rng.random() < params.group_rate)

    @property
    def feature_dim(self) -> int:
        return self.params.feature_dim

    def _suppression(self, annotated: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
        """Per-class damping of the two failure modes given the annotated set."""
        n_classes = self.datasets["train"].num_classes
        n_part = np.zeros(n_classes)
        n_group = np.zeros(n_classes)
        for image_id in annotated:
            im = self._train_by_id[image_id]
            present = np.flatnonzero(im.weak_label)
            if self.part_prone[("train", image_id)]:
                n_part[present] += 1
            if self.group_prone[("train", image_id)]:
                n_group[present] += 1
        gain = self.params.mode_gain_factor * self.params.fidelity_gain
        return 1.0 / (1.0 + gain * n_part), 1.0 / (1.0 + gain * n_group)

    def predict(
        self, split: str, annotated: Iterable[str], cycle_key: int
    ) -> dict[str, ImagePredictions]:
        if split not in self.datasets:
            raise ValueError(f"no dataset loaded for split {split!r}")
        params = self.params
        dataset = self.datasets[split]
        annotated = sorted(annotated)
        decay = 1.0 / (1.0 + params.fidelity_gain * len(annotated))
        sup_part, sup_group = self._suppression(annotated)
        rng = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(_SPLIT_DOMAIN[split], int(cycle_key)))
        )
        out: dict[str, ImagePredictions] = {}
        for im in dataset.images:
            out[im.image_id] = self._predict_image(im, split, decay, sup_part, sup_group, rng)
        return out

    def _predict_image(self, im, split, decay, sup_part, sup_group, rng) -> ImagePredictions:
        params = self.params
        key = (split, im.image_id)
        n_classes = self.datasets["train"].num_classes

        # phase 1: decide the structure (emissions and failures)
        emitted: list[GroundTruthBox] = []
        part_specs: list[tuple[BBox, int]] = []
        group_specs: list[tuple[BBox, int]] = []
        spurious_specs: list[tuple[BBox, int]] = []
        for gt in im.gt_boxes:
            if rng.random() < params.miss_rate * decay:
                continue
            emitted.append(gt)
            if self.part_prone[key] and rng.random() < sup_part[gt.class_id]:
                part_specs.append((self._part_box(gt.box, rng), gt.class_id))
        by_class: dict[int, list[GroundTruthBox]] = {}
        for gt in im.gt_boxes:
            by_class.setdefault(gt.class_id, []).append(gt)
        for class_id in sorted(by_class):
            members = by_class[class_id]
            if len(members) < 2:
                continue
            if self.group_prone[key] and rng.random() < sup_group[class_id]:
                a, b = rng.choice(len(members), size=2, replace=False)
                group_specs.append((_enclosing(members[a].box, members[b].box), class_id))
        if params.spurious_rate > 0 and rng.random() < params.spurious_rate:
            spurious_specs.append(
                (self._random_box(im, rng), int(rng.integers(n_classes)))
            )

        failing = bool(part_specs or group_specs)

        # phase 2: confidences, box jitter and features, in fixed draw order
        # a confused detector is also less sure of its correct boxes, while
        # part boxes (locked onto the most discriminative region) come out
        # highly confident -- that interleaving is what degrades precision
        detections: list[Detection] = []
        for gt in emitted:
            if failing:
                conf = 1.0 - 0.55 * rng.random()
                box = _jitter(gt.box, 0.03, rng)  # keeps IoU far above 0.5
            else:
                conf = 1.0
                box = gt.box
            detections.append(
                self._make_detection(box, gt.class_id, conf, self.class_means[gt.class_id], rng)
            )
        for box, class_id in part_specs:
            conf = 0.80 + 0.19 * rng.random()
            base = self.class_means[class_id] + self.part_offset
            detections.append(self._make_detection(box, class_id, conf, base, rng))
        for box, class_id in group_specs:
            conf = 0.65 + 0.30 * rng.random()
            base = self.class_means[class_id] + self.group_offset
            detections.append(self._make_detection(box, class_id, conf, base, rng))
        for box, class_id in spurious_specs:
            conf = 0.10 + 0.35 * rng.random()
            base = self.class_means[class_id] + self.spurious_offset
            detections.append(self._make_detection(box, class_id, conf, base, rng))

        n_failures = len(part_specs) + len(group_specs)
        u1, u2, u3, u4 = rng.random(4)
        ref1 = decay * (0.25 + 0.30 * n_failures + 0.15 * u1)
        ref2 = decay * (0.28 + 0.32 * n_failures + 0.15 * u2)
        ref3 = decay * (0.30 + 0.35 * n_failures + 0.15 * u3)
        weak_loss = {
            "mil": decay * (0.20 + 0.10 * (len(im.gt_boxes) - len(emitted)) + 0.10 * u4),
            "ref1": ref1,
            "ref2": ref2,
            "ref3": ref3,
            "ref_sum": ref1 + ref2 + ref3,
        }
        present = np.flatnonzero(im.weak_label)
        image_feature = self.class_means[present].mean(axis=0) + params.feature_noise * rng.normal(
            size=params.feature_dim
        )
        return ImagePredictions(im.image_id, detections, image_feature, weak_loss)

    def _make_detection(self, box, class_id, conf, feature_base, rng) -> Detection:
        params = self.params
        n_classes = self.datasets["train"].num_classes
        feature = feature_base + params.feature_noise * rng.normal(size=params.feature_dim)
        probs = np.zeros(n_classes + 1)
        spread = min(0.6, 0.8 * (1.0 - conf))
        probs[class_id] = 1.0 - spread
        probs[n_classes] = 0.4 * spread
        if n_classes > 1:
            others = [c for c in range(n_classes) if c != class_id]
            probs[others] = 0.6 * spread / (n_classes - 1)
        else:
            probs[n_classes] += 0.6 * spread
        return Detection(box, class_id, conf, probs, feature)

    def _part_box(self, full: BBox, rng) -> BBox:
        """A sub-box guaranteed to pair with the full box: area ratio at
        least 1.2*mu, fully contained (containment 1 >= delta)."""
        ratio = self.bib_params.mu * (1.2 + 1.3 * rng.random())
        scale = 1.0 / np.sqrt(ratio)
        pw, ph = full.width * scale, full.height * scale
        ox = rng.random() * (full.width - pw)
        oy = rng.random() * (full.height - ph)
        return BBox(full.x_min + ox, full.y_min + oy, full.x_min + ox + pw, full.y_min + oy + ph)

    def _random_box(self, im: DatasetImage, rng) -> BBox:
        w = (0.08 + 0.22 * rng.random()) * im.width
        h = (0.08 + 0.22 * rng.random()) * im.height
        x = rng.random() * (im.width - w)
        y = rng.random() * (im.height - h)
        return BBox(x, y, x + w, y + h)


def _jitter(box: BBox, scale: float, rng) -> BBox:
    dx = scale * box.width
    dy = scale * box.height
    shifts = rng.uniform(-1.0, 1.0, size=4)
    return BBox(
        box.x_min + shifts[0] * dx,
        box.y_min + shifts[1] * dy,
        box.x_max + shifts[2] * dx,
        box.y_max + shifts[3] * dy,
    )


def _enclosing(a: BBox, b: BBox) -> BBox:
    return BBox(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
    )


def make_synthetic_dataset(
    n_images: int,
    n_classes: int,
    seed: int,
    image_size: tuple[int, int] = (640, 480),
    max_boxes: int = 4,
    class_skew: float = 0.85,
    id_prefix: str = "img",
) -> Dataset:
    """Random dataset with pairwise-disjoint ground-truth boxes.

    Boxes live in separate cells of a 2x2 grid, so no two ground-truth
    boxes of any class overlap (same-class true boxes can never form a
    box-in-box pair on their own). Class frequencies fall geometrically
    (ratio ``class_skew``), so rarer classes exist without vanishing.
    """
    if not 1 <= max_boxes <= 4:
        raise ValueError("max_boxes must be in [1, 4] (one 2x2 grid cell each)")
    if not 0 < class_skew <= 1:
        raise ValueError("class_skew must be in (0, 1]")
    rng = np.random.default_rng(seed)
    width, height = image_size
    cell_w, cell_h = width / 2.0, height / 2.0
    class_weights = class_skew ** np.arange(n_classes, dtype=np.float64)
    class_weights /= class_weights.sum()

    pad = len(str(max(0, n_images - 1)))
    images = []
    for k in range(n_images):
        n_boxes = int(rng.integers(1, max_boxes + 1))
        cells = rng.permutation(4)[:n_boxes]
        gt_boxes = []
        weak = np.zeros(n_classes, dtype=np.int8)
        for cell in cells:
            cx, cy = (cell % 2) * cell_w, (cell // 2) * cell_h
            bw = (0.45 + 0.40 * rng.random()) * cell_w
            bh = (0.45 + 0.40 * rng.random()) * cell_h
            x = cx + rng.random() * (cell_w - bw)
            y = cy + rng.random() * (cell_h - bh)
            class_id = int(rng.choice(n_classes, p=class_weights))
            weak[class_id] = 1
            gt_boxes.append(GroundTruthBox(BBox(x, y, x + bw, y + bh), class_id))
        images.append(
            DatasetImage(f"{id_prefix}{k:0{pad}d}", float(width), float(height), weak, gt_boxes)
        )
    class_names = [f"class{c:02d}" for c in range(n_classes)]
    return Dataset(class_names, images)
