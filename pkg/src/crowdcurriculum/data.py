"""Annotation, feature and split containers plus their file formats."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AnnotationError",
    "DuplicateAnnotationError",
    "LabelDomainError",
    "ParseError",
    "LabelSpace",
    "AnnotationSet",
    "FeatureMatrix",
    "DatasetSplit",
    "load_annotations",
    "write_annotations",
    "load_features",
    "write_features",
    "load_split",
    "write_split",
    "random_split",
]

FEATURE_MAGIC = b"CFM1"


class AnnotationError(ValueError):
    pass


class ParseError(AnnotationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelDomainError(AnnotationError):
    pass


class DuplicateAnnotationError(AnnotationError):
    pass


@dataclass(frozen=True)
class LabelSpace:
    """Either a categorical set of named classes or an L-level ordinal scale.

    Ordinal spaces accept integer levels ``1..num_levels``. Setting
    ``fractional=True`` additionally admits real scores inside that range,
    which is how regression consensus inputs are stored.
    """

    kind: str
    class_names: tuple[str, ...] = ()
    num_levels: int = 0
    fractional: bool = False

    def __post_init__(self):
        if self.kind == "categorical":
            if not self.class_names:
                raise ValueError("categorical label space needs at least one class")
            if len(set(self.class_names)) != len(self.class_names):
                raise ValueError("class names must be unique")
        elif self.kind == "ordinal":
            if self.num_levels < 2:
                raise ValueError("ordinal label space needs num_levels >= 2")
        else:
            raise ValueError(f"unknown label space kind {self.kind!r}")

    @classmethod
    def categorical(cls, class_names: Iterable[str]) -> "LabelSpace":
        return cls("categorical", class_names=tuple(str(c) for c in class_names))

    @classmethod
    def ordinal(cls, num_levels: int, fractional: bool = False) -> "LabelSpace":
        return cls("ordinal", num_levels=int(num_levels), fractional=fractional)

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    @property
    def n_classes(self) -> int:
        """Number of discrete categories (ordinal levels count as classes)."""
        return len(self.class_names) if self.is_categorical else self.num_levels

    def validate(self, label: float) -> None:
        if not math.isfinite(label):
            raise LabelDomainError(f"label {label!r} is not finite")
        if self.is_categorical:
            if label != int(label) or not 0 <= label < len(self.class_names):
                raise LabelDomainError(
                    f"label {label!r} is not a class index in [0, {len(self.class_names)})"
                )
        else:
            if not 1 <= label <= self.num_levels:
                raise LabelDomainError(
                    f"label {label!r} outside ordinal range [1, {self.num_levels}]"
                )
            if not self.fractional and label != int(label):
                raise LabelDomainError(f"label {label!r} is not an integer level")

    def to_dict(self) -> dict:
        if self.is_categorical:
            return {"kind": "categorical", "class_names": list(self.class_names)}
        return {"kind": "ordinal", "num_levels": self.num_levels, "fractional": self.fractional}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpace":
        if d["kind"] == "categorical":
            return cls.categorical(d["class_names"])
        return cls.ordinal(d["num_levels"], d.get("fractional", False))


def _first_appearance(values: Iterable[str]) -> dict[str, int]:
    index: dict[str, int] = {}
    for v in values:
        if v not in index:
            index[v] = len(index)
    return index


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Sparse item x worker label table.

    Dense indices for items and workers follow first-appearance order in
    ``records``. The arrays ``item_index``, ``worker_index`` and ``labels``
    are parallel, one entry per record.
    """

    label_space: LabelSpace
    records: tuple[tuple[str, str, float], ...]
    item_ids: tuple[str, ...] = field(init=False)
    worker_ids: tuple[str, ...] = field(init=False)
    item_index: np.ndarray = field(init=False, repr=False)
    worker_index: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        seen: set[tuple[str, str]] = set()
        for item, worker, label in self.records:
            if (item, worker) in seen:
                raise DuplicateAnnotationError(
                    f"worker {worker!r} labeled item {item!r} more than once"
                )
            seen.add((item, worker))
            self.label_space.validate(label)
        items = _first_appearance(r[0] for r in self.records)
        workers = _first_appearance(r[1] for r in self.records)
        set_ = object.__setattr__
        set_(self, "item_ids", tuple(items))
        set_(self, "worker_ids", tuple(workers))
        set_(self, "item_index", np.array([items[r[0]] for r in self.records], dtype=np.intp))
        set_(self, "worker_index", np.array([workers[r[1]] for r in self.records], dtype=np.intp))
        set_(self, "labels", np.array([r[2] for r in self.records], dtype=np.float64))
        for arr in (self.item_index, self.worker_index, self.labels):
            arr.setflags(write=False)

    @classmethod
    def from_records(
        cls, label_space: LabelSpace, records: Iterable[tuple[str, str, float]]
    ) -> "AnnotationSet":
        return cls(label_space, tuple((str(i), str(w), float(y)) for i, w, y in records))

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return self.label_space == other.label_space and self.records == other.records

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_workers(self) -> int:
        return len(self.worker_ids)

    @property
    def counts(self) -> np.ndarray:
        """Number of annotations per item (``N_i``), in ``item_ids`` order."""
        return np.bincount(self.item_index, minlength=self.n_items)

    def count(self, item_id: str) -> int:
        return int(self.counts[self.item_ids.index(item_id)])

    def class_codes(self) -> np.ndarray:
        """Labels as 0-based category codes.

        Categorical labels are already codes; ordinal levels map ``1..L`` to
        ``0..L-1`` after rounding to the nearest level.
        """
        if self.label_space.is_categorical:
            return self.labels.astype(np.intp)
        return np.rint(self.labels).astype(np.intp) - 1

    def vote_counts(self) -> np.ndarray:
        """Item x class matrix of vote counts over the discretized labels."""
        K = self.label_space.n_classes
        out = np.zeros((self.n_items, K))
        np.add.at(out, (self.item_index, self.class_codes()), 1.0)
        return out

    def labels_for(self, item_id: str) -> np.ndarray:
        i = self.item_ids.index(item_id)
        return self.labels[self.item_index == i]

    def subset(self, item_ids: Iterable[str]) -> "AnnotationSet":
        keep = set(item_ids)
        return AnnotationSet(self.label_space, tuple(r for r in self.records if r[0] in keep))

    def map_labels(self, fn, label_space: LabelSpace) -> "AnnotationSet":
        """Relabel every record with ``fn(label)`` under a new label space."""
        return AnnotationSet(
            label_space, tuple((i, w, float(fn(y))) for i, w, y in self.records)
        )


def _format_label(label: float) -> str:
    return str(int(label)) if label == int(label) else repr(label)


def load_annotations(path: str | Path, label_space: LabelSpace) -> AnnotationSet:
    """Read an ``item_id,worker_id,label`` CSV into a validated set."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["item_id", "worker_id", "label"]:
            raise ParseError("expected header item_id,worker_id,label", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            item, worker, raw = (c.strip() for c in row)
            if not item or not worker:
                raise ParseError("empty item_id or worker_id", line)
            try:
                label = float(raw)
            except ValueError:
                raise ParseError(f"label {raw!r} is not a number", line) from None
            try:
                label_space.validate(label)
            except LabelDomainError as exc:
                raise LabelDomainError(f"line {line}: {exc}") from None
            records.append((item, worker, label))
    return AnnotationSet(label_space, tuple(records))


def write_annotations(ann: AnnotationSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "worker_id", "label"])
        for item, worker, label in ann.records:
            writer.writerow([item, worker, _format_label(label)])


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    item_ids: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] == 0:
            raise ValueError("feature rows must form a non-empty 2-D matrix")
        if rows.shape[0] != len(self.item_ids):
            raise ValueError(
                f"{rows.shape[0]} feature rows for {len(self.item_ids)} item ids"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError("feature item ids must be unique")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature matrix contains non-finite entries")
        rows.setflags(write=False)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "_index", {k: n for n, k in enumerate(self.item_ids)})

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.item_ids)

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.item_ids == other.item_ids and np.array_equal(self.rows, other.rows)

    def take(self, item_ids: Sequence[str]) -> np.ndarray:
        """Rows for ``item_ids`` in the given order."""
        try:
            idx = [self._index[i] for i in item_ids]
        except KeyError as exc:
            raise KeyError(f"no features for item {exc.args[0]!r}") from None
        return self.rows[idx]


def load_features(path: str | Path) -> FeatureMatrix:
    """Load features from CSV (``item_id,f0,...``) or the ``CFM1`` binary format.

    The binary layout carries no item ids; rows are named ``"0".."N-1"``.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURE_MAGIC:
        data = path.read_bytes()
        n, d = struct.unpack_from("<II", data, 4)
        expected = 12 + 8 * n * d
        if len(data) != expected:
            raise ParseError(f"binary feature file has {len(data)} bytes, expected {expected}")
        rows = np.frombuffer(data, dtype="<f8", offset=12).reshape(n, d)
        return FeatureMatrix(tuple(str(k) for k in range(n)), rows)

    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "item_id" or len(header) < 2:
            raise ParseError("expected header item_id,f0,...", 1)
        width = len(header) - 1
        for row in reader:
            if not row:
                continue
            if len(row) != width + 1:
                raise ParseError(f"expected {width + 1} fields, got {len(row)}", reader.line_num)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError("non-numeric feature value", reader.line_num) from None
            ids.append(row[0].strip())
    return FeatureMatrix(tuple(ids), np.array(rows, dtype=np.float64).reshape(len(ids), width))


def write_features(fm: FeatureMatrix, path: str | Path, binary: bool = False) -> None:
    if binary:
        n, d = fm.rows.shape
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC + struct.pack("<II", n, d))
            fh.write(np.ascontiguousarray(fm.rows, dtype="<f8").tobytes())
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id"] + [f"f{k}" for k in range(fm.dim)])
        for item, row in zip(fm.item_ids, fm.rows):
            writer.writerow([item] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple[str, ...]
    dev_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        parts = [set(self.train_ids), set(self.dev_ids), set(self.test_ids)]
        if sum(map(len, parts)) != len(parts[0] | parts[1] | parts[2]):
            raise ValueError("train/dev/test id sets must be pairwise disjoint")
        for name in ("train_ids", "dev_ids", "test_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def restrict(self, available: Iterable[str]) -> "DatasetSplit":
        """Drop ids not present in ``available``, keeping order."""
        keep = set(available)
        return DatasetSplit(
            tuple(i for i in self.train_ids if i in keep),
            tuple(i for i in self.dev_ids if i in keep),
            tuple(i for i in self.test_ids if i in keep),
        )

    def require_nonempty(self) -> None:
        for name in ("train_ids", "dev_ids", "test_ids"):
            if not getattr(self, name):
                raise ValueError(f"{name.split('_')[0]} partition is empty")


def random_split(
    item_ids: Sequence[str], fractions: tuple[float, float, float], seed: int
) -> DatasetSplit:
    """Shuffle ``item_ids`` and cut into train/dev/test.

    Dev and test sizes are ``floor(fraction * N)``; the remainder goes to
    train.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)}, expected 1")
    n = len(item_ids)
    n_dev = math.floor(fractions[1] * n + 1e-9)
    n_test = math.floor(fractions[2] * n + 1e-9)
    n_train = n - n_dev - n_test
    for name, size in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        if size <= 0:
            raise ValueError(f"{name} partition would be empty")
    perm = np.random.default_rng(seed).permutation(n)
    ids = [item_ids[k] for k in perm]
    return DatasetSplit(
        tuple(ids[:n_train]),
        tuple(ids[n_train : n_train + n_dev]),
        tuple(ids[n_train + n_dev :]),
    )


def load_split(path: str | Path) -> DatasetSplit:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        return DatasetSplit(tuple(d["train"]), tuple(d["dev"]), tuple(d["test"]))
    except KeyError as exc:
        raise ParseError(f"splits file missing key {exc.args[0]!r}") from None


def write_split(split: DatasetSplit, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"train": list(split.train_ids), "dev": list(split.dev_ids), "test": list(split.test_ids)},
            fh,
            indent=1,
        )
        fh.write("\n")
