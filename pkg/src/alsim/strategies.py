"""Baseline acquisition strategies and the strategy registry.

Each strategy maps a candidate pool to exactly ``min(budget, pool size)``
distinct image ids. All randomness flows through the caller's generator,
and every deterministic tie resolves to the lowest image id, so a fixed
seed yields a fixed selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from alsim import kernels
from alsim.bib import BibParams, PairStore, bib_select
from alsim.detections import (
    LOSS_KEYS,
    ImagePredictions,
    image_feature_or_default,
)

STRATEGY_NAMES = (
    "u-random",
    "b-random",
    "entropy-max",
    "entropy-sum",
    "loss",
    "core-set",
    "core-set-ent",
    "bib",
)


@dataclass(frozen=True)
class StrategyConfig:
    name: str
    bib: BibParams = field(default_factory=BibParams)
    loss_key: str = "ref3"
    l2_normalize_features: bool = False

    def __post_init__(self):
        if self.name not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {self.name!r}; expected one of {STRATEGY_NAMES}")
        if self.loss_key not in LOSS_KEYS:
            raise ValueError(f"loss key must be one of {LOSS_KEYS}, got {self.loss_key!r}")


@dataclass
class SelectionContext:
    """Everything a strategy may consult when picking a cycle's batch.

    ``predictions`` covers at least the candidates; for the coverage-based
    strategies it must also cover the already-selected ids so their
    features are available. Weak labels are passed to every strategy but
    only the class-balancing one reads them.
    """

    candidates: Sequence[str]
    budget: int
    predictions: Mapping[str, ImagePredictions]
    weak_labels: Mapping[str, np.ndarray]
    selected: Sequence[str]
    pair_store: PairStore
    rng: np.random.Generator
    config: StrategyConfig


def box_entropy(class_probs) -> float:
    """Shannon entropy (natural log) of one detection's class distribution."""
    p = np.asarray(class_probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("class probabilities must be >= 0")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_max_score(pred: ImagePredictions) -> float:
    if not pred.detections:
        return 0.0
    return max(box_entropy(d.class_probs) for d in pred.detections)


def entropy_sum_score(pred: ImagePredictions) -> float:
    return sum(box_entropy(d.class_probs) for d in pred.detections)


def select_topk(scores: Mapping[str, float], budget: int) -> list[str]:
    """Ids of the ``budget`` highest scores; ties go to the lowest id."""
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [image_id for image_id, _ in ranked[: max(0, budget)]]


def u_random(candidates: Sequence[str], budget: int, rng) -> list[str]:
    rng = np.random.default_rng(rng)
    pool = sorted(candidates)
    take = min(budget, len(pool))
    chosen = rng.choice(len(pool), size=take, replace=False)
    return [pool[k] for k in chosen]


def b_random(
    candidates: Sequence[str],
    budget: int,
    weak_labels: Mapping[str, np.ndarray],
    already_selected: Sequence[str],
    n_classes: int,
    rng,
) -> list[str]:
    """Class-balancing random selection.

    Each step targets the globally least-represented class (counting each
    present class once per selected image); class-count ties are broken at
    random, and a class with no remaining candidate image is skipped in
    favour of the next least-represented one.
    """
    rng = np.random.default_rng(rng)
    counts = np.zeros(n_classes, dtype=np.int64)
    for image_id in already_selected:
        counts += weak_labels[image_id].astype(np.int64)

    remaining = sorted(candidates)
    picked: list[str] = []
    while remaining and len(picked) < budget:
        order: list[int] = []
        for level in np.unique(counts):
            tied = np.flatnonzero(counts == level)
            order.extend(tied[rng.permutation(len(tied))])
        choice = None
        for cls in order:
            pool = [i for i in remaining if weak_labels[i][cls]]
            if pool:
                choice = pool[int(rng.integers(len(pool)))]
                break
        if choice is None:  # unreachable while weak labels are non-empty
            choice = remaining[int(rng.integers(len(remaining)))]
        picked.append(choice)
        remaining.remove(choice)
        counts += weak_labels[choice].astype(np.int64)
    return picked


def _greedy_max_min(
    features: Mapping[str, np.ndarray],
    candidates: Sequence[str],
    selected: Sequence[str],
    budget: int,
    rng,
    weights: Mapping[str, float] | None = None,
) -> list[str]:
    """Greedy farthest-first selection, optionally weighting each candidate's
    min-distance by its own uncertainty."""
    rng = np.random.default_rng(rng)
    ids = sorted(candidates)
    take = min(budget, len(ids))
    if take == 0:
        return []
    feats = np.stack([np.asarray(features[i], dtype=np.float64) for i in ids])
    w = np.array([weights[i] for i in ids]) if weights is not None else None

    picked: list[str] = []
    taken = np.zeros(len(ids), dtype=bool)

    if selected:
        ref = np.stack([np.asarray(features[j], dtype=np.float64) for j in sorted(selected)])
        dmin = kernels.min_dist(feats, ref)
    else:
        if take == 0:
            return []
        first = int(rng.integers(len(ids)))
        picked.append(ids[first])
        taken[first] = True
        dmin = kernels.min_dist(feats, feats[first : first + 1])

    while len(picked) < take:
        objective = dmin if w is None else w * dmin
        objective = np.where(taken, -np.inf, objective)
        best = int(np.argmax(objective))  # first occurrence = lowest id (ids sorted)
        picked.append(ids[best])
        taken[best] = True
        dmin = np.minimum(dmin, kernels.min_dist(feats, feats[best : best + 1]))
    return picked


def core_set_greedy(features, candidates, selected, budget, rng) -> list[str]:
    return _greedy_max_min(features, candidates, selected, budget, rng)


def core_set_ent(features, uncertainty, candidates, selected, budget, rng) -> list[str]:
    return _greedy_max_min(features, candidates, selected, budget, rng, weights=uncertainty)


def loss_rank(
    preds: Mapping[str, ImagePredictions],
    candidates: Sequence[str],
    key: str,
    budget: int,
) -> list[str]:
    scores: dict[str, float] = {}
    for image_id in candidates:
        loss = preds[image_id].weak_loss
        if loss is None or key not in loss:
            raise ValueError(f"image {image_id}: missing weak_loss key {key!r}")
        scores[image_id] = loss[key]
    return select_topk(scores, budget)


def _candidate_features(ctx: SelectionContext, ids: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    for image_id in ids:
        f = image_feature_or_default(ctx.predictions[image_id])
        if ctx.config.l2_normalize_features:
            norm = float(np.linalg.norm(f))
            f = f / norm if norm > 0 else f
        out[image_id] = f
    return out


def _run_u_random(ctx: SelectionContext) -> list[str]:
    return u_random(ctx.candidates, ctx.budget, ctx.rng)


def _run_b_random(ctx: SelectionContext) -> list[str]:
    n_classes = len(next(iter(ctx.weak_labels.values())))
    return b_random(
        ctx.candidates, ctx.budget, ctx.weak_labels, ctx.selected, n_classes, ctx.rng
    )


def _run_entropy_max(ctx: SelectionContext) -> list[str]:
    scores = {i: entropy_max_score(ctx.predictions[i]) for i in ctx.candidates}
    return select_topk(scores, ctx.budget)


def _run_entropy_sum(ctx: SelectionContext) -> list[str]:
    scores = {i: entropy_sum_score(ctx.predictions[i]) for i in ctx.candidates}
    return select_topk(scores, ctx.budget)


def _run_loss(ctx: SelectionContext) -> list[str]:
    return loss_rank(ctx.predictions, ctx.candidates, ctx.config.loss_key, ctx.budget)


def _run_core_set(ctx: SelectionContext) -> list[str]:
    features = _candidate_features(ctx, list(ctx.candidates) + list(ctx.selected))
    return core_set_greedy(features, ctx.candidates, ctx.selected, ctx.budget, ctx.rng)


def _run_core_set_ent(ctx: SelectionContext) -> list[str]:
    features = _candidate_features(ctx, list(ctx.candidates) + list(ctx.selected))
    uncertainty = {i: entropy_max_score(ctx.predictions[i]) for i in ctx.candidates}
    return core_set_ent(
        features, uncertainty, ctx.candidates, ctx.selected, ctx.budget, ctx.rng
    )


def _run_bib(ctx: SelectionContext) -> list[str]:
    preds = {i: ctx.predictions[i] for i in ctx.candidates}
    result = bib_select(
        preds,
        ctx.budget,
        ctx.pair_store,
        ctx.config.bib,
        ctx.rng,
        normalize_features=ctx.config.l2_normalize_features,
    )
    return result.selected


_RUNNERS: dict[str, Callable[[SelectionContext], list[str]]] = {
    "u-random": _run_u_random,
    "b-random": _run_b_random,
    "entropy-max": _run_entropy_max,
    "entropy-sum": _run_entropy_sum,
    "loss": _run_loss,
    "core-set": _run_core_set,
    "core-set-ent": _run_core_set_ent,
    "bib": _run_bib,
}


def run_strategy(ctx: SelectionContext) -> list[str]:
    if not ctx.candidates:
        raise ValueError("candidate pool is empty")
    if ctx.budget <= 0:
        raise ValueError(f"budget must be >= 1, got {ctx.budget}")
    selected = _RUNNERS[ctx.config.name](ctx)
    expected = min(ctx.budget, len(ctx.candidates))
    assert len(selected) == len(set(selected)) == expected
    return selected
