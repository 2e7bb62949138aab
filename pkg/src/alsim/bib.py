"""Box-in-box pair mining and the diversity-driven acquisition built on it.

A box-in-box pair is two same-class detections where the larger box is at
least ``mu`` times the smaller's area and covers at least ``delta`` of it —
the signature of a detector confusing object parts with objects or merging
instances. Selection selects images containing such pairs, spreading picks
over pair-feature space via distance-proportional sampling against the
store of already-committed pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from alsim import kernels
from alsim.detections import Detection, ImagePredictions
from alsim.geometry import area, boxes_to_array, ioa_first


@dataclass(frozen=True)
class BibParams:
    """Pair-qualification thresholds: area ratio ``mu``, containment ``delta``."""

    mu: float = 3.0
    delta: float = 0.8

    def __post_init__(self):
        if not self.mu > 1:
            raise ValueError(f"mu must be > 1, got {self.mu}")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")


@dataclass
class BibPair:
    image_id: str
    small_index: int
    large_index: int
    small: Detection
    large: Detection
    feature: np.ndarray  # concat(small.feature, large.feature), length 2F

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.image_id, self.small_index, self.large_index)


def is_bib(d_a: Detection, d_b: Detection, params: BibParams) -> bool:
    """True when (small=d_a, large=d_b) qualifies as a box-in-box pair."""
    if d_a.class_id != d_b.class_id:
        return False
    if area(d_b.box) / area(d_a.box) < params.mu:
        return False
    return ioa_first(d_a.box, d_b.box) >= params.delta


def find_bib(
    detections: Sequence[Detection],
    params: BibParams,
    image_id: str = "",
    normalize_features: bool = False,
) -> list[BibPair]:
    """All ordered (small, large) pairs in one image, sorted by index pair."""
    if len(detections) < 2:
        return []
    boxes = boxes_to_array(d.box for d in detections)
    classes = np.array([d.class_id for d in detections], dtype=np.int64)
    idx = kernels.bib_pairs(boxes, classes, params.mu, params.delta)
    pairs = []
    for i, j in idx:
        small, large = detections[i], detections[j]
        feature = np.concatenate(
            [_maybe_normalize(small.feature, normalize_features),
             _maybe_normalize(large.feature, normalize_features)]
        )
        pairs.append(BibPair(image_id, int(i), int(j), small, large, feature))
    return pairs


def _maybe_normalize(v: np.ndarray, enabled: bool) -> np.ndarray:
    if not enabled:
        return v
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0 else v


def count_bib(
    preds: Mapping[str, ImagePredictions], params: BibParams
) -> tuple[int, dict[str, int]]:
    """Total pair count and the per-image breakdown."""
    per_image: dict[str, int] = {}
    for image_id in sorted(preds):
        per_image[image_id] = len(find_bib(preds[image_id].detections, params, image_id))
    return sum(per_image.values()), per_image


class PairStore:
    """Features of already-committed pairs, in insertion order.

    Duplicate (image, small-index, large-index) triples are ignored so the
    store only grows; distance queries run against the stacked matrix.
    """

    def __init__(self):
        self._keys: set[tuple[str, int, int]] = set()
        self._order: list[tuple[str, int, int]] = []
        self._features: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._features)

    def add_pairs(self, pairs: Iterable[BibPair]) -> int:
        added = 0
        for pair in pairs:
            if pair.key in self._keys:
                continue
            self._keys.add(pair.key)
            self._order.append(pair.key)
            self._features.append(np.asarray(pair.feature, dtype=np.float64))
            added += 1
        return added

    def feature_matrix(self) -> np.ndarray:
        if not self._features:
            return np.empty((0, 0))
        return np.stack(self._features)

    def copy(self) -> "PairStore":
        dup = PairStore()
        dup._keys = set(self._keys)
        dup._order = list(self._order)
        dup._features = list(self._features)
        return dup

    def to_jsonable(self) -> dict:
        return {
            "keys": [list(k) for k in self._order],
            "features": [f.tolist() for f in self._features],
        }

    @classmethod
    def from_jsonable(cls, payload: dict) -> "PairStore":
        store = cls()
        for key, feat in zip(payload["keys"], payload["features"]):
            image_id, si, li = key
            triple = (str(image_id), int(si), int(li))
            store._keys.add(triple)
            store._order.append(triple)
            store._features.append(np.asarray(feat, dtype=np.float64))
        return store


@dataclass
class BibSelection:
    selected: list[str]
    n_random_fill: int
    pairs_by_image: dict[str, list[BibPair]] = field(repr=False, default_factory=dict)


def bib_select(
    preds: Mapping[str, ImagePredictions],
    budget: int,
    store: PairStore,
    params: BibParams,
    rng,
    normalize_features: bool = False,
) -> BibSelection:
    """Select up to ``budget`` images, preferring diverse box-in-box evidence.

    ``preds`` must cover exactly the candidate pool. The store is updated in
    place: after each pick, every pair of the chosen image is committed.
    When the store starts empty the first pick is the image with the most
    pairs (ties broken randomly); subsequent picks sample a pair with
    probability proportional to its distance to the nearest stored pair and
    select that pair's image. Images without pairs (or left over once the
    pair pool is exhausted) fill the remaining budget uniformly at random.
    """
    if budget <= 0:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if not preds:
        raise ValueError("candidate pool is empty")
    rng = np.random.default_rng(rng)
    candidates = sorted(preds)

    pairs_by_image: dict[str, list[BibPair]] = {}
    for image_id in candidates:
        found = find_bib(preds[image_id].detections, params, image_id, normalize_features)
        if found:
            pairs_by_image[image_id] = found

    # flat pair pool, kept in (image, pair) order for deterministic indexing
    pool_pairs: list[BibPair] = [p for i in sorted(pairs_by_image) for p in pairs_by_image[i]]
    pool_images = np.array([p.image_id for p in pool_pairs])
    features = (
        np.stack([p.feature for p in pool_pairs]) if pool_pairs else np.empty((0, 0))
    )
    alive = np.ones(len(pool_pairs), dtype=bool)

    selected: list[str] = []
    target = min(budget, len(candidates))

    def commit(image_id: str) -> np.ndarray:
        """Mark an image picked; returns the features of its pairs."""
        selected.append(image_id)
        pairs = pairs_by_image.get(image_id, [])
        store.add_pairs(pairs)
        alive[pool_images == image_id] = False
        return np.stack([p.feature for p in pairs]) if pairs else np.empty((0, 0))

    # distance of each alive pair to its nearest stored pair, maintained
    # incrementally (min against new store rows only; identical to a full
    # recomputation because min is exact)
    if len(store) and len(pool_pairs):
        dmin = kernels.min_dist(features, store.feature_matrix())
    else:
        dmin = np.full(len(pool_pairs), np.inf)

    if len(store) == 0 and pool_pairs and len(selected) < target:
        counts = {i: len(pairs_by_image[i]) for i in sorted(pairs_by_image)}
        best = max(counts.values())
        top = [i for i, n in counts.items() if n == best]
        first = top[int(rng.integers(len(top)))]
        new_feats = commit(first)
        dmin = np.minimum(dmin, kernels.min_dist(features, new_feats))

    while len(selected) < target and alive.any():
        alive_idx = np.flatnonzero(alive)
        weights = dmin[alive_idx]
        positive = weights > 0
        if positive.any():
            w = weights[positive]
            pick = int(rng.choice(alive_idx[positive], p=w / w.sum()))
        else:
            pick = int(rng.choice(alive_idx))
        new_feats = commit(str(pool_images[pick]))
        dmin = np.minimum(dmin, kernels.min_dist(features, new_feats))

    n_fill = target - len(selected)
    if n_fill > 0:
        rest = sorted(set(candidates) - set(selected))
        chosen = rng.choice(len(rest), size=n_fill, replace=False)
        selected.extend(rest[k] for k in chosen)

    return BibSelection(selected, n_fill, pairs_by_image)
