"""Budgeted annotation-cycle simulation engine.

Each cycle selects a batch from the weakly-labelled pool with the
configured strategy, "annotates" it by ground-truth lookup, moves it to the
annotated set and re-evaluates on a held-out split. The detector behind
the loop is an interface: a synthetic generator for closed-loop studies or
a replay of per-cycle prediction files dumped by a real detector. Both are
refreshed from the initial model each cycle, so predictions depend only on
the current annotated set, never on the order it was built.

All randomness is derived from the experiment seed and the cycle index,
which makes runs reproducible and lets an interrupted run resume into the
exact same trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import numpy as np

from alsim.bib import BibParams, PairStore, count_bib
from alsim.detections import (
    Dataset,
    GroundTruthBox,
    ImagePredictions,
    weak_labels_of,
    gt_boxes_of,
)
from alsim.evaluation import COCO_THRESHOLDS, evaluate_detections
from alsim.strategies import SelectionContext, StrategyConfig, run_strategy
from alsim.synthetic import SyntheticParams, SyntheticSource

_SELECT_DOMAIN = 3


class DetectorSource(Protocol):
    """Prediction provider for any split at any annotation state."""

    def predict(
        self, split: str, annotated, cycle_key: int
    ) -> dict[str, ImagePredictions]: ...


@dataclass
class CycleState:
    """Partition of the training ids plus the accumulated annotations."""

    t: int
    weak: set[str]
    annotated: set[str]
    history: list[list[str]]
    boxes: dict[str, list[GroundTruthBox]]
    pair_store: PairStore

    def check(self, all_ids: set[str]) -> None:
        if self.weak & self.annotated:
            raise AssertionError("weak and annotated sets overlap")
        if self.weak | self.annotated != all_ids:
            raise AssertionError("weak and annotated sets do not partition the dataset")
        flattened = {i for batch in self.history for i in batch}
        if flattened != self.annotated:
            raise AssertionError("history does not reproduce the annotated set")
        if set(self.boxes) != self.annotated:
            raise AssertionError("annotation store keys differ from the annotated set")


def initial_state(dataset: Dataset) -> CycleState:
    return CycleState(
        t=0,
        weak=set(dataset.image_ids),
        annotated=set(),
        history=[],
        boxes={},
        pair_store=PairStore(),
    )


def oracle_label(dataset: Dataset, ids) -> dict[str, list[GroundTruthBox]]:
    """Simulated annotator: exact ground-truth lookup."""
    by_id = dataset.by_id()
    out = {}
    for image_id in ids:
        if image_id not in by_id:
            raise KeyError(f"unknown image id {image_id!r}")
        out[image_id] = list(by_id[image_id].gt_boxes)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str = "bib"
    budget: int = 50
    cycles: int = 5
    seed: int = 0
    mu: float = 3.0
    delta: float = 0.8
    loss_key: str = "ref3"
    l2_normalize_features: bool = False
    detector: str = "synthetic"
    synthetic: SyntheticParams = field(default_factory=SyntheticParams)
    replay_manifest: str | None = None
    eval_thresholds: tuple = COCO_THRESHOLDS
    timing: bool = False

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        if self.detector not in ("synthetic", "replay"):
            raise ValueError(f"detector must be synthetic|replay, got {self.detector!r}")
        if self.detector == "replay" and not self.replay_manifest:
            raise ValueError("replay detector needs a replay manifest")
        BibParams(self.mu, self.delta)  # validates thresholds
        self.strategy_config()  # validates strategy name and loss key

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            name=self.strategy,
            bib=BibParams(self.mu, self.delta),
            loss_key=self.loss_key,
            l2_normalize_features=self.l2_normalize_features,
        )

    def validate_for(self, dataset: Dataset) -> None:
        n = len(dataset.images)
        if self.budget * self.cycles > n:
            raise ValueError(
                f"budget*cycles = {self.budget * self.cycles} exceeds dataset size {n}"
            )

    def to_jsonable(self) -> dict:
        return {
            "strategy": self.strategy,
            "budget": self.budget,
            "cycles": self.cycles,
            "seed": self.seed,
            "mu": self.mu,
            "delta": self.delta,
            "loss_key": self.loss_key,
            "l2_normalize_features": self.l2_normalize_features,
            "detector": self.detector,
            "synthetic": {
                "part_rate": self.synthetic.part_rate,
                "group_rate": self.synthetic.group_rate,
                "miss_rate": self.synthetic.miss_rate,
                "spurious_rate": self.synthetic.spurious_rate,
                "fidelity_gain": self.synthetic.fidelity_gain,
                "feature_noise": self.synthetic.feature_noise,
                "feature_dim": self.synthetic.feature_dim,
                "mode_gain_factor": self.synthetic.mode_gain_factor,
            },
            "replay_manifest": self.replay_manifest,
            "eval_thresholds": list(self.eval_thresholds),
        }


def select_rng(seed: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SELECT_DOMAIN, cycle)))


def run_cycle(
    state: CycleState,
    preds: Mapping[str, ImagePredictions],
    dataset: Dataset,
    config: ExperimentConfig,
    rng: np.random.Generator,
) -> CycleState:
    """One acquisition round; returns the successor state, leaving the
    input state untouched."""
    candidates = sorted(state.weak)
    missing = [i for i in candidates if i not in preds]
    if missing:
        raise ValueError(f"predictions missing for {len(missing)} weak images, e.g. {missing[0]!r}")
    store = state.pair_store.copy()
    ctx = SelectionContext(
        candidates=candidates,
        budget=config.budget,
        predictions=preds,
        weak_labels=weak_labels_of(dataset),
        selected=sorted(state.annotated),
        pair_store=store,
        rng=rng,
        config=config.strategy_config(),
    )
    try:
        batch = run_strategy(ctx)
    except Exception as exc:
        raise RuntimeError(f"cycle {state.t + 1}: strategy {config.strategy!r} failed: {exc}") from exc
    new_boxes = dict(state.boxes)
    new_boxes.update(oracle_label(dataset, batch))
    new_state = CycleState(
        t=state.t + 1,
        weak=state.weak - set(batch),
        annotated=state.annotated | set(batch),
        history=[list(b) for b in state.history] + [list(batch)],
        boxes=new_boxes,
        pair_store=store,
    )
    new_state.check(set(dataset.image_ids))
    return new_state


@dataclass
class CycleRow:
    cycle: int
    n_annotated: int
    strategy: str
    seed: int
    ap50: float
    ap: float
    bib_count: int
    wall_ms: int
    selected: list[str] = field(default_factory=list)
    class_counts: dict[int, int] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    rows: list[CycleRow]
    state: CycleState


def build_source(
    config: ExperimentConfig, train: Dataset, test: Dataset | None
) -> DetectorSource:
    if config.detector == "synthetic":
        return SyntheticSource(
            train, test, config.synthetic, BibParams(config.mu, config.delta), config.seed
        )
    from alsim.replay import ReplaySource  # file-driven; imported on demand

    return ReplaySource.from_manifest(config.replay_manifest, cycles=config.cycles,
                                      need_test=test is not None)


def _class_counts(dataset: Dataset, annotated) -> dict[int, int]:
    counts: dict[int, int] = {c: 0 for c in range(dataset.num_classes)}
    by_id = dataset.by_id()
    for image_id in annotated:
        for c in by_id[image_id].present_classes:
            counts[c] += 1
    return counts


def run_experiment(
    config: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    source: DetectorSource | None = None,
    state: CycleState | None = None,
    emit: Callable[[CycleRow, CycleState], None] | None = None,
) -> ExperimentResult:
    """Run (or finish) an experiment; emits one row per completed cycle.

    With ``state`` given, resumes after cycle ``state.t``; otherwise starts
    fresh and emits the cycle-0 baseline row first. ``emit`` is called after
    each row so callers can checkpoint.
    """
    config.validate_for(train)
    bib_params = BibParams(config.mu, config.delta)
    if source is None:
        source = build_source(config, train, test)
    test_gt = gt_boxes_of(test)
    rows: list[CycleRow] = []

    def push(row: CycleRow, snapshot: CycleState) -> None:
        rows.append(row)
        if emit is not None:
            emit(row, snapshot)

    preds_train: dict[str, ImagePredictions] | None = None
    if state is None:
        state = initial_state(train)
        started = time.perf_counter()
        preds_train = source.predict("train", frozenset(), 0)
        bib0 = count_bib({i: preds_train[i] for i in state.weak}, bib_params)[0]
        report = evaluate_detections(
            source.predict("test", frozenset(), 0), test_gt, config.eval_thresholds
        )
        wall = int((time.perf_counter() - started) * 1000) if config.timing else 0
        push(
            CycleRow(0, 0, config.strategy, config.seed, report.ap50, report.ap, bib0, wall,
                     [], _class_counts(train, state.annotated)),
            state,
        )

    for _ in range(state.t + 1, config.cycles + 1):
        started = time.perf_counter()
        if preds_train is None:
            preds_train = source.predict("train", frozenset(state.annotated), state.t)
        weak_before = set(state.weak)
        bib_count = count_bib({i: preds_train[i] for i in weak_before}, bib_params)[0]
        rng = select_rng(config.seed, state.t + 1)
        state = run_cycle(state, preds_train, train, config, rng)
        preds_train = None
        report = evaluate_detections(
            source.predict("test", frozenset(state.annotated), state.t),
            test_gt,
            config.eval_thresholds,
        )
        wall = int((time.perf_counter() - started) * 1000) if config.timing else 0
        push(
            CycleRow(
                state.t,
                len(state.annotated),
                config.strategy,
                config.seed,
                report.ap50,
                report.ap,
                bib_count,
                wall,
                list(state.history[-1]),
                _class_counts(train, state.annotated),
            ),
            state,
        )
    return ExperimentResult(rows, state)
