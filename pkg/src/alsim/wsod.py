"""Detector-side procedures at toy scale.

Covers the multiple-instance aggregation that turns region scores into an
image-level class vector, the self-training pseudo-box heuristic, and the
proposal subsampling used once ground-truth boxes become available. All
functions are pure; nothing here trains anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from alsim import kernels
from alsim.detections import GroundTruthBox
from alsim.geometry import BBox, boxes_to_array

PSEUDO_BOX_IOU_THRESHOLD = 0.3
POSITIVE_IOU = 0.5  # strictly above -> positive
NEGATIVE_IOU = 0.3  # at or below (vs all GT) -> negative
SAMPLE_TOTAL = 512
SAMPLE_POSITIVE_QUOTA = 128


@dataclass
class RegionScores:
    """Raw per-region logits from the two scoring streams, both (R, C)."""

    s_c: np.ndarray
    s_d: np.ndarray

    def __post_init__(self):
        self.s_c = np.asarray(self.s_c, dtype=np.float64)
        self.s_d = np.asarray(self.s_d, dtype=np.float64)
        if self.s_c.ndim != 2 or self.s_c.shape != self.s_d.shape:
            raise ValueError(
                f"score matrices must share an (R, C) shape, got {self.s_c.shape} vs {self.s_d.shape}"
            )
        if self.s_c.shape[0] < 1:
            raise ValueError("need at least one region")
        if not (np.isfinite(self.s_c).all() and np.isfinite(self.s_d).all()):
            raise ValueError("score matrices must be finite")


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def combine_scores(rs: RegionScores) -> np.ndarray:
    """Combined region score matrix: row-softmaxed classification stream
    times column-softmaxed detection stream, elementwise."""
    return _softmax(rs.s_c, axis=1) * _softmax(rs.s_d, axis=0)


def mil_image_scores(s: np.ndarray) -> np.ndarray:
    """Image-level class scores: column sums of the combined matrix."""
    return np.asarray(s, dtype=np.float64).sum(axis=0)


def mil_bce_loss(phi, weak_label, eps: float = 1e-6) -> float:
    """Mean binary cross-entropy between image scores and the weak label.

    Column sums may exceed 1, so scores are clamped to [eps, 1-eps] first.
    """
    phi = np.asarray(phi, dtype=np.float64)
    q = np.asarray(weak_label, dtype=np.float64)
    if phi.shape != q.shape:
        raise ValueError(f"shape mismatch: scores {phi.shape} vs label {q.shape}")
    if np.any(phi < 0):
        raise ValueError("image scores must be >= 0")
    clamped = np.clip(phi, eps, 1.0 - eps)
    terms = q * np.log(clamped) + (1.0 - q) * np.log(1.0 - clamped)
    return float(-terms.mean())


def top_fraction_count(n_regions: int) -> int:
    """ceil(15% of R), at least 1; exact integer arithmetic (15% = 3/20)."""
    return max(1, (3 * n_regions + 19) // 20)


def generate_pseudo_boxes(
    regions: Sequence[BBox],
    scores_by_class: Mapping[int, Sequence[float]],
) -> list[GroundTruthBox]:
    """Self-training targets: per present class, keep the top-15% scoring
    regions, then greedily drop any region overlapping a higher-ranked kept
    one at IoU >= 0.3; classes are aggregated into one list."""
    n = len(regions)
    if n == 0:
        return []
    boxes = boxes_to_array(regions)
    iou = kernels.pairwise_iou(boxes, boxes)
    keep_count = top_fraction_count(n)
    out: list[GroundTruthBox] = []
    for class_id in sorted(scores_by_class):
        scores = np.asarray(scores_by_class[class_id], dtype=np.float64)
        if scores.shape[0] != n:
            raise ValueError(
                f"class {class_id}: {scores.shape[0]} scores for {n} regions"
            )
        order = np.argsort(-scores, kind="stable")[:keep_count]
        kept: list[int] = []
        for idx in order:
            if all(iou[idx, k] < PSEUDO_BOX_IOU_THRESHOLD for k in kept):
                kept.append(int(idx))
        out.extend(GroundTruthBox(regions[k], class_id) for k in kept)
    return out


@dataclass
class Proposal:
    box: BBox
    head_scores: np.ndarray | None = None  # (K, C+1) per-head class scores

    def __post_init__(self):
        if self.head_scores is not None:
            self.head_scores = np.asarray(self.head_scores, dtype=np.float64)
            if self.head_scores.ndim != 2 or self.head_scores.shape[0] < 1:
                raise ValueError("head_scores must be a (K >= 1, C+1) matrix")


@dataclass
class SampledProposals:
    positive_indices: list[int]
    negative_indices: list[int]
    requested_total: int
    requested_positives: int

    @property
    def n_positives(self) -> int:
        return len(self.positive_indices)

    @property
    def n_negatives(self) -> int:
        return len(self.negative_indices)

    @property
    def total(self) -> int:
        return self.n_positives + self.n_negatives

    @property
    def shortfall(self) -> int:
        return self.requested_total - self.total


def sample_difficulty_aware(
    proposals: Sequence[Proposal],
    gt_boxes: Sequence[GroundTruthBox],
    rng,
    total: int = SAMPLE_TOTAL,
    positive_quota: int = SAMPLE_POSITIVE_QUOTA,
) -> SampledProposals:
    """Pick a training subset of proposals around the annotated boxes.

    Positives overlap some ground-truth box at IoU > 0.5 and are sampled
    uniformly when over-supplied (up to ``positive_quota``). Negatives
    (IoU <= 0.3 with every ground-truth box) fill the rest of ``total``,
    hardest first: ranked by the highest non-background probability after
    averaging the per-head scores and applying a row-wise softmax.
    Proposals in the (0.3, 0.5] band are never sampled. A supply shortage
    shows up as ``shortfall > 0`` on the result.
    """
    rng = np.random.default_rng(rng)
    n = len(proposals)
    if n == 0:
        return SampledProposals([], [], total, positive_quota)
    for k, prop in enumerate(proposals):
        if prop.head_scores is None:
            raise ValueError(f"proposal {k}: head scores required for negative mining")

    if gt_boxes:
        iou = kernels.pairwise_iou(
            boxes_to_array(p.box for p in proposals),
            boxes_to_array(g.box for g in gt_boxes),
        )
        max_iou = iou.max(axis=1)
    else:
        max_iou = np.zeros(n)

    positive_pool = np.flatnonzero(max_iou > POSITIVE_IOU)
    negative_pool = np.flatnonzero(max_iou <= NEGATIVE_IOU)

    if len(positive_pool) > positive_quota:
        chosen = rng.choice(len(positive_pool), size=positive_quota, replace=False)
        positives = sorted(int(positive_pool[k]) for k in chosen)
    else:
        positives = [int(k) for k in positive_pool]

    objectness = np.empty(n)
    for k, prop in enumerate(proposals):
        averaged = prop.head_scores.mean(axis=0)
        probs = _softmax(averaged, axis=0)
        objectness[k] = probs[:-1].max()  # background excluded

    negative_quota = total - len(positives)
    ranked = negative_pool[np.argsort(-objectness[negative_pool], kind="stable")]
    negatives = [int(k) for k in ranked[:negative_quota]]

    return SampledProposals(positives, negatives, total, positive_quota)
