"""Detection metrics and box-in-box diagnostics.

Matching follows standard AP practice: detections are greedily assigned to
at most one unmatched same-class ground-truth box in descending confidence
order. Average precision integrates the all-point precision envelope; the
summary AP averages thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from alsim import kernels
from alsim.bib import BibPair, BibParams, count_bib
from alsim.detections import Detection, GroundTruthBox, ImagePredictions
from alsim.geometry import boxes_to_array

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))


@dataclass
class MatchResult:
    """Per-detection TP/FP flags (input order) and the GT assignment."""

    tp_flags: np.ndarray          # bool, per detection
    matched_gt: np.ndarray        # int, GT index or -1, per detection
    gt_matched: np.ndarray        # bool, per ground-truth box


def match_detections(
    detections: Sequence[Detection],
    gt_boxes: Sequence[GroundTruthBox],
    iou_threshold: float,
) -> MatchResult:
    n_det, n_gt = len(detections), len(gt_boxes)
    tp = np.zeros(n_det, dtype=bool)
    assigned = np.full(n_det, -1, dtype=np.int64)
    gt_taken = np.zeros(n_gt, dtype=bool)
    if n_det == 0 or n_gt == 0:
        return MatchResult(tp, assigned, gt_taken)

    iou = kernels.pairwise_iou(
        boxes_to_array(d.box for d in detections),
        boxes_to_array(g.box for g in gt_boxes),
    )
    gt_classes = np.array([g.class_id for g in gt_boxes])
    conf = np.array([d.confidence for d in detections])
    order = np.argsort(-conf, kind="stable")  # ties -> lower input index first
    for d_idx in order:
        cls = detections[d_idx].class_id
        best_gt, best_iou = -1, iou_threshold
        for g_idx in range(n_gt):
            if gt_taken[g_idx] or gt_classes[g_idx] != cls:
                continue
            if iou[d_idx, g_idx] >= best_iou and (
                best_gt == -1 or iou[d_idx, g_idx] > best_iou
            ):
                best_gt, best_iou = g_idx, iou[d_idx, g_idx]
        if best_gt >= 0:
            tp[d_idx] = True
            assigned[d_idx] = best_gt
            gt_taken[best_gt] = True
    return MatchResult(tp, assigned, gt_taken)


def _ap_from_ranked_flags(flags: np.ndarray, n_gt: int) -> float:
    """All-point-interpolated AP from confidence-ranked TP flags."""
    if n_gt == 0:
        return 0.0
    if flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags)
    cum_fp = np.cumsum(~flags)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * envelope).sum())


@dataclass
class EvalReport:
    ap50: float
    ap: float
    per_class_ap50: dict[int, float]
    per_threshold: dict[float, float]
    classes_evaluated: list[int] = field(default_factory=list)


def evaluate_detections(
    preds: Mapping[str, ImagePredictions],
    gt: Mapping[str, list[GroundTruthBox]],
    thresholds: Sequence[float] = COCO_THRESHOLDS,
) -> EvalReport:
    """AP over a whole split. Classes with no ground truth are excluded
    from the means (their AP is 0 by definition and would not be informative)."""
    n_gt_per_class: dict[int, int] = {}
    for boxes in gt.values():
        for g in boxes:
            n_gt_per_class[g.class_id] = n_gt_per_class.get(g.class_id, 0) + 1
    classes = sorted(n_gt_per_class)

    per_threshold: dict[float, float] = {}
    per_class_ap50: dict[int, float] = {}
    for thr in thresholds:
        records: dict[int, list[tuple[float, str, int, bool]]] = {c: [] for c in classes}
        for image_id in sorted(preds):
            dets = preds[image_id].detections
            match = match_detections(dets, gt.get(image_id, []), thr)
            for k, det in enumerate(dets):
                if det.class_id in records:
                    records[det.class_id].append(
                        (det.confidence, image_id, k, bool(match.tp_flags[k]))
                    )
        class_aps: dict[int, float] = {}
        for cls in classes:
            ranked = sorted(records[cls], key=lambda r: (-r[0], r[1], r[2]))
            flags = np.array([r[3] for r in ranked], dtype=bool)
            class_aps[cls] = _ap_from_ranked_flags(flags, n_gt_per_class[cls])
        per_threshold[thr] = float(np.mean(list(class_aps.values()))) if classes else 0.0
        if thr == 0.5:
            per_class_ap50 = class_aps
    ap50 = per_threshold.get(0.5, 0.0)
    ap = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return EvalReport(ap50, ap, per_class_ap50, per_threshold, classes)


@dataclass
class BibVerification:
    n_pairs: int
    n_wrong: int

    @property
    def fraction_wrong(self) -> float:
        return self.n_wrong / self.n_pairs if self.n_pairs else 0.0


def verify_bib_pairs(
    pairs: Sequence[BibPair],
    matches: Mapping[str, MatchResult],
) -> BibVerification:
    """Fraction of pairs whose small or large box is a false positive under
    the supplied (IoU 0.5) matching."""
    n_wrong = 0
    for pair in pairs:
        match = matches[pair.image_id]
        if not match.tp_flags[pair.small_index] or not match.tp_flags[pair.large_index]:
            n_wrong += 1
    return BibVerification(len(pairs), n_wrong)


@dataclass
class BibDecayReport:
    counts: list[int]
    non_increasing: bool
    inversions: list[tuple[int, int, int]]  # (cycle index, previous, current)


def bib_decay_report(
    per_cycle_preds: Sequence[Mapping[str, ImagePredictions]],
    params: BibParams,
) -> BibDecayReport:
    """Pair counts across consecutive cycles and whether they only decrease."""
    counts = [count_bib(preds, params)[0] for preds in per_cycle_preds]
    inversions = [
        (k, counts[k - 1], counts[k])
        for k in range(1, len(counts))
        if counts[k] > counts[k - 1]
    ]
    return BibDecayReport(counts, not inversions, inversions)
