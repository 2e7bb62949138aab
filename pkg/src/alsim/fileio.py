"""File formats, run persistence and hashing.

All structured inputs and outputs are UTF-8 JSON with a self-describing
``format`` field; metrics go to a fixed-column CSV whose header comment
carries the format version and config hash. Writes are atomic
(temp-file-then-rename) so an interrupted run never leaves a torn file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from alsim.bib import PairStore
from alsim.detections import (
    Dataset,
    DatasetImage,
    Detection,
    GroundTruthBox,
    ImagePredictions,
    normalize_class_probs,
    validate_dataset,
)
from alsim.geometry import BBox

FORMAT_DATASET = "alsim-dataset/1"
FORMAT_PREDS = "alsim-preds/1"
FORMAT_SELECTION = "alsim-sel/1"
FORMAT_STATE = "alsim-state/1"
FORMAT_MANIFEST = "alsim-manifest/1"
FORMAT_METRICS = "alsim-metrics/1"

METRICS_COLUMNS = ("cycle", "n_annotated", "strategy", "seed", "ap50", "ap", "bib_count", "wall_ms")


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise DataError(f"{path}: top-level JSON value must be an object")
    return data


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config_jsonable: dict) -> str:
    canonical = json.dumps(config_jsonable, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _canonical_id(raw, path, where: str) -> str:
    if isinstance(raw, str):
        return raw
    if isinstance(raw, (int, np.integer)):
        return str(raw)
    raise DataError(f"{path}: {where}: image id must be a string or integer, got {type(raw).__name__}")


# ---------------------------------------------------------------- datasets


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = load_json(path)
    if raw.get("format") != FORMAT_DATASET:
        raise DataError(f"{path}: expected format {FORMAT_DATASET!r}, got {raw.get('format')!r}")
    violations = validate_dataset(raw)
    if violations:
        summary = "; ".join(violations[:8])
        more = f" (+{len(violations) - 8} more)" if len(violations) > 8 else ""
        raise DataError(f"{path}: dataset invariants violated: {summary}{more}")
    images = []
    for im in raw.get("images", []):
        image_id = _canonical_id(im.get("id"), path, "images[]")
        gt = [
            GroundTruthBox(BBox.from_sequence(g["box"]), int(g["class"]))
            for g in im.get("gt", [])
        ]
        images.append(
            DatasetImage(
                image_id,
                float(im["width"]),
                float(im["height"]),
                np.asarray(im["weak_label"], dtype=np.int8),
                gt,
            )
        )
    return Dataset([str(c) for c in raw["classes"]], images)


def save_dataset(dataset: Dataset, path) -> None:
    payload = {
        "format": FORMAT_DATASET,
        "classes": list(dataset.class_names),
        "images": [
            {
                "id": im.image_id,
                "width": im.width,
                "height": im.height,
                "weak_label": [int(v) for v in im.weak_label],
                "gt": [
                    {"box": list(g.box.as_tuple()), "class": g.class_id} for g in im.gt_boxes
                ],
            }
            for im in dataset.images
        ],
    }
    atomic_write_json(path, payload)


# ------------------------------------------------------------- predictions


def load_predictions(path) -> tuple[dict[str, ImagePredictions], int]:
    """Returns (per-image predictions, feature dimension)."""
    path = Path(path)
    raw = load_json(path)
    if raw.get("format") != FORMAT_PREDS:
        raise DataError(f"{path}: expected format {FORMAT_PREDS!r}, got {raw.get('format')!r}")
    feature_dim = raw.get("feature_dim")
    if not isinstance(feature_dim, int) or feature_dim < 1:
        raise DataError(f"{path}: feature_dim must be a positive integer")
    out: dict[str, ImagePredictions] = {}
    for im in raw.get("images", []):
        image_id = _canonical_id(im.get("id"), path, "images[]")
        if image_id in out:
            raise DataError(f"{path}: duplicate image id {image_id!r}")
        detections = []
        for k, det in enumerate(im.get("detections", [])):
            where = f"image {image_id!r} detection {k}"
            feature = np.asarray(det["feature"], dtype=np.float64)
            if feature.shape != (feature_dim,):
                raise DataError(
                    f"{path}: {where}: feature length {feature.shape[0]} != "
                    f"declared feature_dim {feature_dim}"
                )
            try:
                probs = normalize_class_probs(det["probs"], where)
                detections.append(
                    Detection(
                        BBox.from_sequence(det["box"]),
                        int(det["class"]),
                        float(det["confidence"]),
                        probs,
                        feature,
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}: {where}: {exc}") from exc
        image_feature = im.get("image_feature")
        if image_feature is not None:
            image_feature = np.asarray(image_feature, dtype=np.float64)
            if image_feature.shape != (feature_dim,):
                raise DataError(
                    f"{path}: image {image_id!r}: image_feature length "
                    f"{image_feature.shape[0]} != declared feature_dim {feature_dim}"
                )
        try:
            out[image_id] = ImagePredictions(
                image_id, detections, image_feature, im.get("weak_loss")
            )
        except ValueError as exc:
            raise DataError(f"{path}: image {image_id!r}: {exc}") from exc
    return out, feature_dim


def save_predictions(preds: dict[str, ImagePredictions], feature_dim: int, path) -> None:
    images = []
    for image_id in sorted(preds):
        p = preds[image_id]
        entry: dict = {
            "id": p.image_id,
            "detections": [
                {
                    "box": list(d.box.as_tuple()),
                    "class": d.class_id,
                    "confidence": d.confidence,
                    "probs": d.class_probs.tolist(),
                    "feature": d.feature.tolist(),
                }
                for d in p.detections
            ],
        }
        if p.image_feature is not None:
            entry["image_feature"] = p.image_feature.tolist()
        if p.weak_loss is not None:
            entry["weak_loss"] = dict(p.weak_loss)
        images.append(entry)
    atomic_write_json(path, {"format": FORMAT_PREDS, "feature_dim": feature_dim, "images": images})


# --------------------------------------------------------------- selection


def save_selection(path, cycle: int, selected, strategy: str, seed: int, cfg_hash: str) -> None:
    atomic_write_json(
        path,
        {
            "format": FORMAT_SELECTION,
            "cycle": cycle,
            "selected": list(selected),
            "strategy": strategy,
            "seed": seed,
            "config_hash": cfg_hash,
        },
    )


# ------------------------------------------------------------------- state


def state_to_jsonable(state, cfg_hash: str, dataset_hash: str) -> dict:
    return {
        "format": FORMAT_STATE,
        "config_hash": cfg_hash,
        "dataset_sha256": dataset_hash,
        "t": state.t,
        "weak": sorted(state.weak),
        "annotated": sorted(state.annotated),
        "history": [list(batch) for batch in state.history],
        "boxes": {
            image_id: [
                {"box": list(g.box.as_tuple()), "class": g.class_id}
                for g in state.boxes[image_id]
            ]
            for image_id in sorted(state.boxes)
        },
        "pair_store": state.pair_store.to_jsonable(),
    }


def save_state(state, path, cfg_hash: str, dataset_hash: str) -> None:
    atomic_write_json(path, state_to_jsonable(state, cfg_hash, dataset_hash))


def load_state(path, cfg_hash: str | None = None, dataset_hash: str | None = None):
    from alsim.alloop import CycleState

    raw = load_json(path)
    if raw.get("format") != FORMAT_STATE:
        raise DataError(f"{path}: expected format {FORMAT_STATE!r}, got {raw.get('format')!r}")
    if cfg_hash is not None and raw.get("config_hash") != cfg_hash:
        raise DataError(
            f"{path}: config hash mismatch (state {raw.get('config_hash')!r} vs current {cfg_hash!r})"
        )
    if dataset_hash is not None and raw.get("dataset_sha256") != dataset_hash:
        raise DataError(f"{path}: dataset hash mismatch; state was produced from different data")
    try:
        boxes = {
            image_id: [
                GroundTruthBox(BBox.from_sequence(g["box"]), int(g["class"])) for g in entries
            ]
            for image_id, entries in raw["boxes"].items()
        }
        return CycleState(
            t=int(raw["t"]),
            weak=set(raw["weak"]),
            annotated=set(raw["annotated"]),
            history=[list(batch) for batch in raw["history"]],
            boxes=boxes,
            pair_store=PairStore.from_jsonable(raw["pair_store"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt state file: {exc}") from exc


# ----------------------------------------------------------------- metrics


def metrics_header(cfg_hash: str) -> str:
    return f"# format={FORMAT_METRICS} config={cfg_hash}\n" + ",".join(METRICS_COLUMNS) + "\n"


def metrics_line(row) -> str:
    return (
        f"{row.cycle},{row.n_annotated},{row.strategy},{row.seed},"
        f"{row.ap50:.6f},{row.ap:.6f},{row.bib_count},{row.wall_ms}\n"
    )
