"""Command-line surface.

Subcommands: simulate | select | eval | bib-stats | validate.
Exit codes: 0 success, 1 usage error, 2 data error. ``ALSIM_SEED``
overrides ``--seed`` when set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from alsim import fileio
from alsim.alloop import (
    CycleRow,
    ExperimentConfig,
    build_source,
    run_experiment,
    select_rng,
)
from alsim.bib import BibParams, PairStore, count_bib, find_bib
from alsim.detections import LOSS_KEYS, gt_boxes_of, validate_dataset, weak_labels_of
from alsim.evaluation import evaluate_detections, match_detections, verify_bib_pairs
from alsim.fileio import DataError
from alsim.strategies import STRATEGY_NAMES, SelectionContext, StrategyConfig, run_strategy
from alsim.synthetic import SyntheticParams


class UsageError(Exception):
    """Bad arguments or argument combinations (CLI exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="alsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a budgeted annotation-cycle experiment")
    sim.add_argument("--dataset", help="training dataset JSON")
    sim.add_argument("--test", help="held-out evaluation dataset JSON")
    sim.add_argument("--strategy", choices=STRATEGY_NAMES, default="bib")
    sim.add_argument("--budget", type=int, default=50)
    sim.add_argument("--cycles", type=int, default=5)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--detector", choices=("synthetic", "replay"), default="synthetic")
    sim.add_argument("--replay-manifest", help="replay manifest JSON (detector=replay)")
    sim.add_argument("--out", required=True, help="run directory")
    sim.add_argument("--mu", type=float, default=3.0)
    sim.add_argument("--delta", type=float, default=0.8)
    sim.add_argument("--loss-key", choices=LOSS_KEYS, default="ref3")
    sim.add_argument("--l2-normalize-features", action="store_true")
    sim.add_argument("--part-rate", type=float, default=0.0)
    sim.add_argument("--group-rate", type=float, default=0.0)
    sim.add_argument("--miss-rate", type=float, default=0.0)
    sim.add_argument("--spurious-rate", type=float, default=0.0)
    sim.add_argument("--fidelity-gain", type=float, default=0.0)
    sim.add_argument("--feature-noise", type=float, default=0.1)
    sim.add_argument("--feature-dim", type=int, default=16)
    sim.add_argument("--mode-gain-factor", type=float, default=8.0)
    sim.add_argument("--timing", action="store_true",
                     help="record real wall time in metrics.csv (breaks byte-reproducibility)")
    sim.add_argument("--resume", action="store_true",
                     help="continue the interrupted run found in --out")

    sel = sub.add_parser("select", help="one-shot selection from a predictions file")
    sel.add_argument("--predictions", required=True)
    sel.add_argument("--strategy", choices=STRATEGY_NAMES, required=True)
    sel.add_argument("--budget", type=int, required=True)
    sel.add_argument("--out", required=True)
    sel.add_argument("--dataset", help="needed by strategies that read weak labels")
    sel.add_argument("--seed", type=int, default=0)
    sel.add_argument("--cycle", type=int, default=1)
    sel.add_argument("--mu", type=float, default=3.0)
    sel.add_argument("--delta", type=float, default=0.8)
    sel.add_argument("--loss-key", choices=LOSS_KEYS, default="ref3")
    sel.add_argument("--l2-normalize-features", action="store_true")

    ev = sub.add_parser("eval", help="detection metrics for a predictions file")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", help="optional JSON report path")

    stats = sub.add_parser("bib-stats", help="box-in-box pair statistics")
    stats.add_argument("--predictions", required=True)
    stats.add_argument("--dataset", required=True)
    stats.add_argument("--mu", type=float, default=3.0)
    stats.add_argument("--delta", type=float, default=0.8)
    stats.add_argument("--out", help="optional JSON report path")

    val = sub.add_parser("validate", help="check dataset (and predictions) invariants")
    val.add_argument("--dataset", required=True)
    val.add_argument("--predictions")
    return parser


def _seed_override(seed: int) -> int:
    env = os.environ.get("ALSIM_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ALSIM_SEED must be an integer, got {env!r}")


def _config_from_args(args) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            strategy=args.strategy,
            budget=args.budget,
            cycles=args.cycles,
            seed=_seed_override(args.seed),
            mu=args.mu,
            delta=args.delta,
            loss_key=args.loss_key,
            l2_normalize_features=args.l2_normalize_features,
            detector=args.detector,
            synthetic=SyntheticParams(
                part_rate=args.part_rate,
                group_rate=args.group_rate,
                miss_rate=args.miss_rate,
                spurious_rate=args.spurious_rate,
                fidelity_gain=args.fidelity_gain,
                feature_noise=args.feature_noise,
                feature_dim=args.feature_dim,
                mode_gain_factor=args.mode_gain_factor,
            ),
            replay_manifest=args.replay_manifest,
            timing=args.timing,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _config_from_jsonable(raw: dict) -> ExperimentConfig:
    return ExperimentConfig(
        strategy=raw["strategy"],
        budget=raw["budget"],
        cycles=raw["cycles"],
        seed=raw["seed"],
        mu=raw["mu"],
        delta=raw["delta"],
        loss_key=raw["loss_key"],
        l2_normalize_features=raw["l2_normalize_features"],
        detector=raw["detector"],
        synthetic=SyntheticParams(**raw["synthetic"]),
        replay_manifest=raw["replay_manifest"],
        eval_thresholds=tuple(raw["eval_thresholds"]),
    )


def _rewrite_metrics_prefix(path: Path, cfg_hash: str, keep_up_to_cycle: int) -> None:
    """Drop any metrics rows past the checkpointed cycle (torn-run repair)."""
    lines = [fileio.metrics_header(cfg_hash)]
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.startswith("#") or line.startswith("cycle,") or not line.strip():
                continue
            if int(line.split(",", 1)[0]) <= keep_up_to_cycle:
                lines.append(line + "\n")
    fileio.atomic_write_text(path, "".join(lines))


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    manifest_path = out / "manifest.json"
    state_path = out / "state.json"
    metrics_path = out / "metrics.csv"

    if args.resume:
        manifest = fileio.load_json(manifest_path)
        if manifest.get("format") != fileio.FORMAT_MANIFEST:
            raise DataError(f"{manifest_path}: not a run manifest")
        if manifest.get("completed"):
            raise DataError(f"{manifest_path}: run already completed; completed runs are immutable")
        config = _config_from_jsonable(manifest["config"])
        cfg_hash = fileio.config_hash(config.to_jsonable())
        if cfg_hash != manifest["config_hash"]:
            raise DataError(f"{manifest_path}: config hash mismatch; manifest was edited")
        train_path, test_path = manifest["dataset_path"], manifest["test_path"]
        train_hash = fileio.file_sha256(train_path)
        if train_hash != manifest["dataset_sha256"]:
            raise DataError(f"{train_path}: dataset hash mismatch with the recorded run")
        if fileio.file_sha256(test_path) != manifest["test_sha256"]:
            raise DataError(f"{test_path}: dataset hash mismatch with the recorded run")
        train = fileio.load_dataset(train_path)
        test = fileio.load_dataset(test_path)
        state = fileio.load_state(state_path, cfg_hash, train_hash)
        _rewrite_metrics_prefix(metrics_path, cfg_hash, state.t)
    else:
        if not args.dataset or not args.test:
            raise UsageError("simulate requires --dataset and --test (or --resume)")
        config = _config_from_args(args)
        cfg_hash = fileio.config_hash(config.to_jsonable())
        train = fileio.load_dataset(args.dataset)
        test = fileio.load_dataset(args.test)
        try:
            config.validate_for(train)
        except ValueError as exc:
            raise UsageError(str(exc))
        out.mkdir(parents=True, exist_ok=True)
        if manifest_path.exists():
            raise UsageError(
                f"{out} already holds a run; use --resume to continue it or pick a new directory"
            )
        train_hash = fileio.file_sha256(args.dataset)
        manifest = {
            "format": fileio.FORMAT_MANIFEST,
            "config": config.to_jsonable(),
            "config_hash": cfg_hash,
            "seed": config.seed,
            "dataset_path": str(args.dataset),
            "dataset_sha256": train_hash,
            "test_path": str(args.test),
            "test_sha256": fileio.file_sha256(args.test),
            "cycle_outputs": {},
            "timings_ms": {},
            "completed": False,
        }
        state = None
        fileio.atomic_write_text(metrics_path, fileio.metrics_header(cfg_hash))
        fileio.atomic_write_json(manifest_path, manifest)

    source = build_source(config, train, test)

    def emit(row: CycleRow, snapshot) -> None:
        fileio.save_state(snapshot, state_path, cfg_hash, train_hash)
        outputs = {"state": str(state_path), "metrics": str(metrics_path)}
        if row.cycle >= 1:
            sel_path = out / f"sel_{row.cycle:03d}.json"
            fileio.save_selection(
                sel_path, row.cycle, row.selected, config.strategy, config.seed, cfg_hash
            )
            outputs["selection"] = str(sel_path)
        with open(metrics_path, "a", encoding="utf-8") as handle:
            handle.write(fileio.metrics_line(row))
        manifest["cycle_outputs"][str(row.cycle)] = outputs
        manifest["timings_ms"][str(row.cycle)] = row.wall_ms
        fileio.atomic_write_json(manifest_path, manifest)

    result = run_experiment(config, train, test, source=source, state=state, emit=emit)
    manifest["completed"] = True
    fileio.atomic_write_json(manifest_path, manifest)
    last = result.rows[-1]
    print(
        f"run complete: {config.strategy} seed={config.seed} cycles={last.cycle} "
        f"annotated={last.n_annotated} ap50={last.ap50:.4f} ap={last.ap:.4f}"
    )
    print(f"metrics: {metrics_path}")
    return 0


def _cmd_select(args) -> int:
    seed = _seed_override(args.seed)
    preds, _ = fileio.load_predictions(args.predictions)
    if not preds:
        raise DataError(f"{args.predictions}: no images to select from")
    weak_labels = {}
    if args.dataset:
        dataset = fileio.load_dataset(args.dataset)
        weak_labels = weak_labels_of(dataset)
        missing = sorted(set(preds) - set(weak_labels))
        if missing:
            raise DataError(
                f"{args.predictions}: {len(missing)} prediction ids not in the dataset, "
                f"e.g. {missing[0]!r}"
            )
    elif args.strategy == "b-random":
        raise UsageError("strategy b-random needs --dataset for weak labels")
    config = StrategyConfig(
        name=args.strategy,
        bib=BibParams(args.mu, args.delta),
        loss_key=args.loss_key,
        l2_normalize_features=args.l2_normalize_features,
    )
    ctx = SelectionContext(
        candidates=sorted(preds),
        budget=args.budget,
        predictions=preds,
        weak_labels=weak_labels,
        selected=[],
        pair_store=PairStore(),
        rng=select_rng(seed, args.cycle),
        config=config,
    )
    try:
        selected = run_strategy(ctx)
    except ValueError as exc:
        raise DataError(str(exc))
    cfg_hash = fileio.config_hash(
        {
            "strategy": args.strategy,
            "budget": args.budget,
            "seed": seed,
            "cycle": args.cycle,
            "mu": args.mu,
            "delta": args.delta,
            "loss_key": args.loss_key,
            "l2_normalize_features": args.l2_normalize_features,
        }
    )
    fileio.save_selection(args.out, args.cycle, selected, args.strategy, seed, cfg_hash)
    print(f"selected {len(selected)} images -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    preds, _ = fileio.load_predictions(args.predictions)
    dataset = fileio.load_dataset(args.dataset)
    report = evaluate_detections(preds, gt_boxes_of(dataset))
    print(f"AP50 = {report.ap50:.4f}")
    print(f"AP   = {report.ap:.4f}")
    for class_id in report.classes_evaluated:
        name = dataset.class_names[class_id]
        print(f"  ap50[{name}] = {report.per_class_ap50[class_id]:.4f}")
    if args.out:
        fileio.atomic_write_json(
            args.out,
            {
                "format": "alsim-eval/1",
                "config_hash": fileio.config_hash(
                    {"predictions": str(args.predictions), "dataset": str(args.dataset)}
                ),
                "ap50": report.ap50,
                "ap": report.ap,
                "per_class_ap50": {str(k): v for k, v in report.per_class_ap50.items()},
                "per_threshold": {f"{k:.2f}": v for k, v in report.per_threshold.items()},
            },
        )
    return 0


def _cmd_bib_stats(args) -> int:
    preds, _ = fileio.load_predictions(args.predictions)
    dataset = fileio.load_dataset(args.dataset)
    gt = gt_boxes_of(dataset)
    params = BibParams(args.mu, args.delta)
    total, per_image = count_bib(preds, params)
    pairs = []
    matches = {}
    for image_id in sorted(preds):
        pairs.extend(find_bib(preds[image_id].detections, params, image_id))
        matches[image_id] = match_detections(
            preds[image_id].detections, gt.get(image_id, []), 0.5
        )
    verification = verify_bib_pairs(pairs, matches)
    images_with_pairs = sum(1 for n in per_image.values() if n)
    print(f"pairs: {total} across {images_with_pairs} of {len(preds)} images "
          f"(mu={args.mu}, delta={args.delta})")
    print(f"pairs with >=1 wrong box (FP at IoU 0.5): {verification.n_wrong} "
          f"({100.0 * verification.fraction_wrong:.1f}%)")
    if args.out:
        fileio.atomic_write_json(
            args.out,
            {
                "format": "alsim-bibstats/1",
                "config_hash": fileio.config_hash({"mu": args.mu, "delta": args.delta}),
                "mu": args.mu,
                "delta": args.delta,
                "total_pairs": total,
                "images_with_pairs": images_with_pairs,
                "n_wrong": verification.n_wrong,
                "fraction_wrong": verification.fraction_wrong,
                "per_image": {k: v for k, v in sorted(per_image.items()) if v},
            },
        )
    return 0


def _cmd_validate(args) -> int:
    raw = fileio.load_json(args.dataset)
    if raw.get("format") != fileio.FORMAT_DATASET:
        raise DataError(
            f"{args.dataset}: expected format {fileio.FORMAT_DATASET!r}, got {raw.get('format')!r}"
        )
    violations = [f"{args.dataset}: {v}" for v in validate_dataset(raw)]
    if args.predictions:
        try:
            preds, _ = fileio.load_predictions(args.predictions)
            dataset_ids = {str(im.get("id")) for im in raw.get("images", [])}
            n_classes = len(raw.get("classes", []))
            for image_id in sorted(preds):
                if image_id not in dataset_ids:
                    violations.append(
                        f"{args.predictions}: {image_id}: prediction for unknown image"
                    )
                for k, det in enumerate(preds[image_id].detections):
                    if det.class_probs.shape[0] != n_classes + 1:
                        violations.append(
                            f"{args.predictions}: {image_id}: detection {k} has "
                            f"{det.class_probs.shape[0]} class probabilities, expected {n_classes + 1}"
                        )
        except DataError as exc:
            violations.append(str(exc))
    if violations:
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s)")
        return 2
    print("ok")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "select": _cmd_select,
    "eval": _cmd_eval,
    "bib-stats": _cmd_bib_stats,
    "validate": _cmd_validate,
}


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
