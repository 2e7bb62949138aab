"""Replay detector source: per-cycle prediction files from a real detector.

The manifest maps absolute cycle indices to prediction files; selection at
cycle t reads the train file for index t-1, and evaluation after cycle t
reads the test file for index t. Because the underlying detector is
re-trained from the base model each cycle, files are indexed by cycle, not
chained.
"""

from __future__ import annotations

import json
from pathlib import Path

from alsim.detections import ImagePredictions


class ReplaySource:
    FORMAT = "alsim-replay/1"

    def __init__(self, files: dict[str, dict[int, Path]]):
        self._files = files
        self._cache: dict[Path, dict[str, ImagePredictions]] = {}

    @classmethod
    def from_manifest(cls, path, cycles: int, need_test: bool = True) -> "ReplaySource":
        from alsim.fileio import DataError, load_json

        path = Path(path)
        raw = load_json(path)
        if raw.get("format") != cls.FORMAT:
            raise DataError(f"{path}: expected format {cls.FORMAT!r}, got {raw.get('format')!r}")
        files: dict[str, dict[int, Path]] = {}
        for split in ("train", "test"):
            entries = raw.get(split, {})
            files[split] = {int(k): (path.parent / v) for k, v in entries.items()}
        missing_train = [t for t in range(cycles) if t not in files["train"]]
        if missing_train:
            raise DataError(
                f"{path}: train predictions missing for cycle keys {missing_train} "
                f"(need 0..{cycles - 1})"
            )
        if need_test:
            missing_test = [t for t in range(cycles + 1) if t not in files["test"]]
            if missing_test:
                raise DataError(
                    f"{path}: test predictions missing for cycle keys {missing_test} "
                    f"(need 0..{cycles} to evaluate every cycle)"
                )
        return cls(files)

    def predict(self, split: str, annotated, cycle_key: int) -> dict[str, ImagePredictions]:
        from alsim.fileio import DataError, load_predictions

        try:
            path = self._files[split][int(cycle_key)]
        except KeyError:
            raise DataError(f"replay manifest has no {split} file for cycle key {cycle_key}")
        if path not in self._cache:
            self._cache[path], _ = load_predictions(path)
        return self._cache[path]


def write_replay_manifest(path, train_files: dict[int, str], test_files: dict[int, str]) -> None:
    payload = {
        "format": ReplaySource.FORMAT,
        "train": {str(k): v for k, v in sorted(train_files.items())},
        "test": {str(k): v for k, v in sorted(test_files.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")
