"""Synthetic crowd-labeled datasets with known item difficulty and worker ability.

Workers answer an item correctly with probability
``logistic(ability_j - DIFFICULTY_SLOPE * difficulty_i)`` (a Rasch-style
link). Feature noise also grows with item difficulty, so items the crowd
finds hard are harder to separate in feature space too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import AnnotationSet, FeatureMatrix, LabelSpace

__all__ = [
    "DIFFICULTY_SLOPE",
    "SimConfig",
    "SimTruth",
    "simulate",
    "simulate_categorical",
    "simulate_ordinal",
    "write_truth",
    "PRESETS",
]

DIFFICULTY_SLOPE = 4.0


@dataclass(frozen=True)
class SimConfig:
    n_items: int
    n_workers: int
    label_space: LabelSpace
    labels_per_item: int = 5
    feature_dim: int = 16
    difficulty_range: tuple[float, float] = (0.0, 1.0)
    ability_mean: float = 2.0
    ability_std: float = 1.0
    noise_scale: float = 0.5
    # The first n_low_ability workers get ability_mean - low_ability_shift.
    n_low_ability: int = 0
    low_ability_shift: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_items, self.n_workers, self.labels_per_item, self.feature_dim) < 1:
            raise ValueError("item, worker, label and feature counts must be positive")
        if self.labels_per_item > self.n_workers:
            raise ValueError(
                f"labels_per_item ({self.labels_per_item}) exceeds n_workers ({self.n_workers})"
            )
        if not 0 <= self.n_low_ability <= self.n_workers:
            raise ValueError("n_low_ability must be between 0 and n_workers")
        lo, hi = self.difficulty_range
        if not 0.0 <= lo <= hi:
            raise ValueError("difficulty_range must satisfy 0 <= low <= high")
        if self.ability_std < 0 or self.noise_scale < 0:
            raise ValueError("ability_std and noise_scale must be non-negative")


@dataclass(frozen=True, eq=False)
class SimTruth:
    item_ids: tuple[str, ...]
    worker_ids: tuple[str, ...]
    labels: np.ndarray  # true class index, or true real score for ordinal
    difficulty: np.ndarray
    ability: np.ndarray
    assignments: np.ndarray  # (n_items, labels_per_item) worker indices

    def to_dict(self) -> dict:
        return {
            "item_ids": list(self.item_ids),
            "worker_ids": list(self.worker_ids),
            "labels": self.labels.tolist(),
            "difficulty": self.difficulty.tolist(),
            "ability": self.ability.tolist(),
            "assignments": self.assignments.tolist(),
        }


def _ids(prefix: str, n: int) -> tuple[str, ...]:
    width = len(str(max(n - 1, 0)))
    return tuple(f"{prefix}{k:0{width}d}" for k in range(n))


def _common(cfg: SimConfig, rng: np.random.Generator):
    lo, hi = cfg.difficulty_range
    difficulty = rng.uniform(lo, hi, size=cfg.n_items)
    ability = rng.normal(cfg.ability_mean, cfg.ability_std, size=cfg.n_workers)
    ability[: cfg.n_low_ability] -= cfg.low_ability_shift
    assignments = np.stack(
        [rng.choice(cfg.n_workers, size=cfg.labels_per_item, replace=False) for _ in range(cfg.n_items)]
    )
    return difficulty, ability, assignments


def _class_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """``n`` unit vectors in R^dim, mutually orthogonal when ``n <= dim``."""
    g = rng.standard_normal((dim, max(n, 1)))
    if n <= dim:
        q, _ = np.linalg.qr(g)
        return q[:, :n].T.copy()
    return (g / np.linalg.norm(g, axis=0)).T.copy()


def simulate_categorical(cfg: SimConfig) -> tuple[AnnotationSet, FeatureMatrix, SimTruth]:
    if not cfg.label_space.is_categorical:
        raise ValueError("simulate_categorical needs a categorical label space")
    K = cfg.label_space.n_classes
    rng = np.random.default_rng(cfg.seed)
    difficulty, ability, assignments = _common(cfg, rng)
    truth = rng.integers(0, K, size=cfg.n_items)
    item_ids, worker_ids = _ids("i", cfg.n_items), _ids("w", cfg.n_workers)

    records = []
    for i in range(cfg.n_items):
        for j in assignments[i]:
            p_correct = expit(ability[j] - DIFFICULTY_SLOPE * difficulty[i])
            if K == 1 or rng.random() < p_correct:
                label = truth[i]
            else:
                label = rng.integers(0, K - 1)
                label += label >= truth[i]
            records.append((item_ids[i], worker_ids[j], float(label)))

    means = _class_directions(rng, K, cfg.feature_dim)
    scale = cfg.noise_scale * (0.5 + difficulty)
    rows = means[truth] + rng.standard_normal((cfg.n_items, cfg.feature_dim)) * scale[:, None]
    return (
        AnnotationSet(cfg.label_space, tuple(records)),
        FeatureMatrix(item_ids, rows),
        SimTruth(item_ids, worker_ids, truth, difficulty, ability, assignments),
    )


def simulate_ordinal(cfg: SimConfig) -> tuple[AnnotationSet, FeatureMatrix, SimTruth]:
    """Real true scores on ``[1, L]``; workers report rounded noisy scores."""
    if cfg.label_space.is_categorical:
        raise ValueError("simulate_ordinal needs an ordinal label space")
    L = cfg.label_space.num_levels
    rng = np.random.default_rng(cfg.seed)
    difficulty, ability, assignments = _common(cfg, rng)
    value = rng.uniform(1.0, L, size=cfg.n_items)
    item_ids, worker_ids = _ids("i", cfg.n_items), _ids("w", cfg.n_workers)

    records = []
    for i in range(cfg.n_items):
        for j in assignments[i]:
            std = cfg.noise_scale * (0.5 + difficulty[i]) / expit(ability[j])
            score = np.rint(np.clip(value[i] + rng.normal(0.0, 1.0) * std, 1, L))
            records.append((item_ids[i], worker_ids[j], float(score)))

    (direction,) = _class_directions(rng, 1, cfg.feature_dim)
    scale = cfg.noise_scale * (0.5 + difficulty)
    rows = value[:, None] * direction + rng.standard_normal((cfg.n_items, cfg.feature_dim)) * scale[:, None]
    return (
        AnnotationSet(cfg.label_space, tuple(records)),
        FeatureMatrix(item_ids, rows),
        SimTruth(item_ids, worker_ids, value, difficulty, ability, assignments),
    )


def simulate(cfg: SimConfig):
    if cfg.label_space.is_categorical:
        return simulate_categorical(cfg)
    return simulate_ordinal(cfg)


def write_truth(truth: SimTruth, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh)
        fh.write("\n")


PRESETS: dict[str, dict] = {
    "categorical-small": dict(
        n_items=200, n_workers=10, label_space=LabelSpace.categorical(list("ABCDE")), feature_dim=16
    ),
    "ordinal-small": dict(
        n_items=200, n_workers=10, label_space=LabelSpace.ordinal(7), feature_dim=16
    ),
    "categorical-acceptance": dict(
        n_items=3000,
        n_workers=20,
        label_space=LabelSpace.categorical(list("ABCDE")),
        feature_dim=64,
    ),
}
