"""Per-item difficulty scores.

Every criterion is oriented so that sorting scores ascending gives the
easiest items first. Agreement-style ratios (majority share, trace share of
the item confusion matrix) are therefore reported as ``1 - ratio``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import softmax

from .aggregation import ItemConfusion
from .data import AnnotationSet, LabelSpace

__all__ = [
    "CRITERIA",
    "TASKS",
    "DifficultyScore",
    "Prediction",
    "criterion1_regression",
    "criterion1_classification",
    "criterion2_regression",
    "criterion2_categorical",
    "criterion3_minmax",
    "difficulty_for_binary",
    "binarize_annotations",
    "write_difficulty",
]

CRITERIA = ("c1_error", "c2_disagreement", "c3_minmax")
TASKS = ("regression", "binary", "multiclass")


@dataclass(frozen=True)
class DifficultyScore:
    criterion: str
    task: str
    scores: Mapping[str, float]

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        bad = [k for k, v in self.scores.items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite difficulty for items {bad[:5]}")

    def ranked(self, item_ids: Sequence[str] | None = None) -> list[str]:
        """Item ids easiest first; ties broken by item id."""
        ids = self.scores.keys() if item_ids is None else item_ids
        return sorted(ids, key=lambda i: (self.scores[i], i))

    def values(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.scores[i] for i in item_ids], dtype=np.float64)


@dataclass(frozen=True)
class Prediction:
    item_id: str
    value: float
    confidence: float | None = None

    def __post_init__(self):
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _same_keys(a: Mapping, b: Mapping) -> None:
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))[:5]
        raise KeyError(f"truth and prediction item sets differ (e.g. {missing})")


def criterion1_regression(truth: Mapping[str, float], preds: Mapping[str, float]) -> DifficultyScore:
    _same_keys(truth, preds)
    return DifficultyScore(
        "c1_error", "regression", {i: abs(float(truth[i]) - float(preds[i])) for i in truth}
    )


def criterion1_classification(
    truth: Mapping[str, int], preds: Mapping[str, Prediction], task: str = "multiclass"
) -> DifficultyScore:
    """Negative confidence for correct predictions, positive for mistakes."""
    _same_keys(truth, preds)
    scores = {}
    for i, y in truth.items():
        p = preds[i]
        if p.confidence is None:
            raise ValueError(f"prediction for {i!r} has no confidence")
        scores[i] = -p.confidence if int(p.value) == int(y) else p.confidence
    return DifficultyScore("c1_error", task, scores)


def criterion2_regression(ann: AnnotationSet) -> DifficultyScore:
    """Population variance of the scores each item received."""
    counts = ann.counts
    means = np.bincount(ann.item_index, weights=ann.labels, minlength=ann.n_items) / counts
    resid = ann.labels - means[ann.item_index]
    var = np.bincount(ann.item_index, weights=resid * resid, minlength=ann.n_items) / counts
    return DifficultyScore("c2_disagreement", "regression", dict(zip(ann.item_ids, var.tolist())))


def criterion2_categorical(ann: AnnotationSet, task: str = "multiclass") -> DifficultyScore:
    votes = ann.vote_counts()
    share = votes.max(axis=1) / votes.sum(axis=1)
    return DifficultyScore("c2_disagreement", task, dict(zip(ann.item_ids, (1.0 - share).tolist())))


def trace_share(tau: np.ndarray) -> float:
    """Diagonal share of ``exp(tau)`` after row normalization."""
    conf = softmax(np.asarray(tau, dtype=np.float64), axis=1)
    return float(np.trace(conf) / conf.sum())


def criterion3_minmax(taus: Sequence[ItemConfusion], task: str = "multiclass") -> DifficultyScore:
    return DifficultyScore(
        "c3_minmax", task, {c.item_id: 1.0 - trace_share(c.tau) for c in taus}
    )


BINARY_SPACE = LabelSpace.categorical(("low", "high"))


def binarize_annotations(ann: AnnotationSet, threshold: float) -> AnnotationSet:
    """Split every individual score at ``threshold`` (``>=`` is high)."""
    return ann.map_labels(lambda y: 1 if y >= threshold else 0, BINARY_SPACE)


def difficulty_for_binary(ann: AnnotationSet, train_median: float) -> DifficultyScore:
    return criterion2_categorical(binarize_annotations(ann, train_median), task="binary")


def write_difficulty(score: DifficultyScore, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "criterion", "task", "score"])
        for item in score.ranked():
            writer.writerow([item, score.criterion, score.task, repr(float(score.scores[item]))])
