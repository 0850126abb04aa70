"""Labeled records, JSONL ingestion and the dense dataset view used for training."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import featurize_text


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    group: str
    label: int
    features: np.ndarray | None = None
    text: str | None = None

    def __post_init__(self):
        if (self.features is None) == (self.text is None):
            raise DataError(f"record {self.id!r}: exactly one of features/text must be present")
        if self.label < 0:
            raise DataError(f"record {self.id!r}: negative label {self.label}")

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "group": self.group, "label": int(self.label)}
        if self.features is not None:
            out["features"] = [float(v) for v in self.features]
        else:
            out["text"] = self.text
        return out


def _parse_line(obj, lineno: int) -> Record:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    for key in ("id", "group", "label"):
        if key not in obj:
            raise DataError(f"line {lineno}: missing field '{key}'")
    has_features, has_text = "features" in obj, "text" in obj
    if has_features == has_text:
        raise DataError(f"line {lineno}: exactly one of 'features' or 'text' is required")
    label = obj["label"]
    if isinstance(label, bool) or not isinstance(label, int):
        raise DataError(f"line {lineno}: label must be an integer, got {label!r}")
    features = None
    text = None
    if has_features:
        try:
            features = np.asarray(obj["features"], dtype=np.float64)
        except (TypeError, ValueError):
            raise DataError(f"line {lineno}: features must be a list of numbers") from None
        if features.ndim != 1 or features.size == 0:
            raise DataError(f"line {lineno}: features must be a non-empty flat list")
    else:
        text = obj["text"]
        if not isinstance(text, str):
            raise DataError(f"line {lineno}: text must be a string")
    try:
        return Record(str(obj["id"]), str(obj["group"]), label, features, text)
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None


def ingest_jsonl(path: str | Path, n_classes: int | None = None) -> list[Record]:
    """Read and validate newline-delimited JSON records.

    Blank lines are skipped. Errors name the 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    records: list[Record] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                rec = _parse_line(obj, lineno)
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
            if rec.id in seen:
                raise DataError(
                    f"{path}: line {lineno}: duplicate id {rec.id!r} (first seen on line {seen[rec.id]})")
            if n_classes is not None and rec.label >= n_classes:
                raise DataError(f"{path}: line {lineno}: label {rec.label} >= n_classes {n_classes}")
            seen[rec.id] = lineno
            records.append(rec)
    return records


def write_jsonl(records: Iterable[Record], path: str | Path) -> int:
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")
            count += 1
    return count


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense view of a record list: parallel arrays of ids, groups, labels and features."""

    ids: np.ndarray
    groups: np.ndarray
    labels: np.ndarray
    x: np.ndarray
    n_classes: int

    @classmethod
    def from_records(cls, records: Sequence[Record], text_dim: int = 256,
                     n_classes: int | None = None) -> "Dataset":
        if not records:
            raise DataError("dataset is empty")
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise DataError("dataset contains duplicate record ids")
        rows = [r.features if r.features is not None else featurize_text(r.text, text_dim)
                for r in records]
        widths = {len(row) for row in rows}
        if len(widths) != 1:
            raise DataError(f"records have inconsistent feature widths {sorted(widths)}")
        labels = np.array([r.label for r in records], dtype=np.int64)
        inferred = int(labels.max()) + 1
        if n_classes is None:
            n_classes = inferred
        elif inferred > n_classes:
            raise DataError(f"label {inferred - 1} >= n_classes {n_classes}")
        return cls(np.array(ids, dtype=object), np.array([r.group for r in records], dtype=object),
                   labels, np.vstack(rows).astype(np.float64), int(n_classes))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def group_names(self) -> list[str]:
        return sorted(set(self.groups.tolist()))

    def group_indices(self, group: str) -> np.ndarray:
        idx = np.flatnonzero(self.groups == group)
        if idx.size == 0:
            raise DataError(f"group {group!r} not present in the dataset")
        return idx
