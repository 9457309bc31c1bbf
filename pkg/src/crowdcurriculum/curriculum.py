"""Easy-to-hard training schedules.

The training set is cut into difficulty bins. Stage ``b`` trains for a
fixed number of epochs on the union of bins ``1..b`` with a stage-specific
learning rate. Rates are chosen greedily on the development set, one
stage at a time, keeping earlier choices frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .data import DatasetSplit, FeatureMatrix
from .difficulty import DifficultyScore
from .metrics import ccc, macro_f1
from .neuralnet import NetworkConfig, NetworkState, forward, init_network, train_epochs

__all__ = [
    "DEFAULT_LR_GRID",
    "CurriculumSchedule",
    "TaskData",
    "TrialResult",
    "make_bins",
    "make_random_bins",
    "bin_sizes",
    "greedy_lr_search",
    "plan_schedule",
    "train_curriculum",
    "train_plain",
    "evaluate",
    "load_schedule",
    "write_schedule",
    "CurriculumLearner",
]

log = logging.getLogger(__name__)

DEFAULT_LR_GRID: tuple[float, ...] = (
    0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001, 0.000005, 0.000001,
)


def check_lr_grid(grid: Sequence[float]) -> tuple[float, ...]:
    grid = tuple(float(r) for r in grid)
    if not grid:
        raise ValueError("learning-rate grid is empty")
    if any(r <= 0 for r in grid):
        raise ValueError("learning rates must be positive")
    if any(a <= b for a, b in zip(grid, grid[1:])):
        raise ValueError("learning-rate grid must be strictly decreasing")
    return grid


@dataclass(frozen=True)
class CurriculumSchedule:
    bins: tuple[tuple[str, ...], ...]
    rates: tuple[float, ...]
    epochs_per_stage: int = 50

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(tuple(b) for b in self.bins))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if not self.bins or any(not b for b in self.bins):
            raise ValueError("schedule needs at least one non-empty bin")
        if len(self.rates) != len(self.bins):
            raise ValueError(f"{len(self.rates)} rates for {len(self.bins)} bins")
        flat = [i for b in self.bins for i in b]
        if len(set(flat)) != len(flat):
            raise ValueError("bins overlap")
        if self.epochs_per_stage < 0:
            raise ValueError("epochs_per_stage must be non-negative")

    @property
    def n_stages(self) -> int:
        return len(self.bins)

    def pool(self, stage: int) -> list[str]:
        """Item ids trained on at 1-based ``stage``."""
        return [i for b in self.bins[:stage] for i in b]

    def to_dict(self) -> dict:
        return {
            "bins": [list(b) for b in self.bins],
            "rates": list(self.rates),
            "epochs_per_stage": self.epochs_per_stage,
        }


def write_schedule(schedule: CurriculumSchedule, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schedule.to_dict(), fh, indent=1)
        fh.write("\n")


def load_schedule(path: str | Path) -> CurriculumSchedule:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return CurriculumSchedule(d["bins"], d["rates"], d["epochs_per_stage"])


def bin_sizes(n: int, n_bins: int) -> list[int]:
    if not 1 <= n_bins <= n:
        raise ValueError(f"need 1 <= n_bins <= {n}, got {n_bins}")
    base, extra = divmod(n, n_bins)
    return [base + (1 if b < extra else 0) for b in range(n_bins)]


def _cut(ids: Sequence[str], n_bins: int) -> list[tuple[str, ...]]:
    out, start = [], 0
    for size in bin_sizes(len(ids), n_bins):
        out.append(tuple(ids[start : start + size]))
        start += size
    return out


def make_bins(scores: DifficultyScore, train_ids: Sequence[str], n_bins: int = 5) -> list[tuple[str, ...]]:
    """Contiguous difficulty quantiles, easiest first.

    Items are ordered by ``(score, item_id)``; the first ``N mod n_bins``
    bins receive one extra item.
    """
    missing = [i for i in train_ids if i not in scores.scores]
    if missing:
        raise KeyError(f"no difficulty score for {len(missing)} items, e.g. {missing[:3]}")
    return _cut(scores.ranked(list(train_ids)), n_bins)


def make_random_bins(train_ids: Sequence[str], n_bins: int, seed: int) -> list[tuple[str, ...]]:
    ids = sorted(train_ids)
    perm = np.random.default_rng(seed).permutation(len(ids))
    return _cut([ids[k] for k in perm], n_bins)


@dataclass(frozen=True, eq=False)
class TaskData:
    """Features, per-item targets and the split for one learning task.

    ``n_classes == 0`` marks regression (metric: CCC); otherwise targets are
    class indices ``0..n_classes-1`` and the metric is macro F-score.
    """

    features: FeatureMatrix
    targets: Mapping[str, float]
    split: DatasetSplit
    n_classes: int = 0

    def __post_init__(self):
        ids = set(self.split.train_ids) | set(self.split.dev_ids) | set(self.split.test_ids)
        missing = [i for i in ids if i not in self.targets]
        if missing:
            raise ValueError(f"{len(missing)} split items have no target, e.g. {sorted(missing)[:3]}")
        known = set(self.features.item_ids)
        missing = [i for i in ids if i not in known]
        if missing:
            raise ValueError(f"{len(missing)} split items have no features, e.g. {sorted(missing)[:3]}")

    @property
    def is_regression(self) -> bool:
        return self.n_classes == 0

    @property
    def metric_kind(self) -> str:
        return "ccc" if self.is_regression else "f_score"

    def arrays(self, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        X = self.features.take(ids)
        y = np.array([self.targets[i] for i in ids], dtype=np.float64)
        if not self.is_regression:
            y = y.astype(np.intp)
        return X, y

    def network_config(self, hidden_sizes: Sequence[int], seed: int) -> NetworkConfig:
        if self.is_regression:
            return NetworkConfig(self.features.dim, tuple(hidden_sizes), "identity", 1, seed=seed)
        return NetworkConfig(self.features.dim, tuple(hidden_sizes), "softmax", self.n_classes, seed=seed)


def evaluate(state: NetworkState, data: TaskData, ids: Sequence[str]) -> float:
    X, y = data.arrays(ids)
    out = forward(state, X)
    if data.is_regression:
        return ccc(out[:, 0], y)
    return macro_f1(out.argmax(axis=1), y, range(data.n_classes))


def _safe_evaluate(state: NetworkState, data: TaskData, ids: Sequence[str]) -> float:
    # A collapsed model (constant output) leaves CCC undefined; score it as worst.
    try:
        return evaluate(state, data, ids)
    except ValueError:
        return float("-inf")


def stage_seed(seed: int, stage: int) -> int:
    """Shuffle seed for one training stage of one trial."""
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def _train_stage(state, data: TaskData, pool: Sequence[str], lr: float, epochs: int, seed: int, stage: int, batch_size: int):
    X, y = data.arrays(pool)
    return train_epochs(state, X, y, stage_seed(seed, stage), epochs, lr, batch_size, item_ids=list(pool))


def greedy_lr_search(
    bins: Sequence[Sequence[str]],
    grid: Sequence[float],
    train_fn: Callable[[object, list[str], float, int], object],
    dev_metric_fn: Callable[[object], float],
    initial_state,
) -> tuple[list[float], list[float]]:
    """Pick one learning rate per stage, greedily and in stage order.

    ``train_fn(state, pool_ids, lr, stage)`` returns the state after one
    stage of training from ``state``; ``dev_metric_fn(state)`` scores it
    (higher is better). Every candidate of stage ``b`` branches from the
    same snapshot, the state reached with the rates already frozen for
    stages ``1..b-1``. Ties go to the earlier grid entry.

    Returns ``(rates, best_dev_scores)``.
    """
    grid = check_lr_grid(grid)
    if not bins:
        raise ValueError("need at least one bin")
    state = initial_state
    rates, scores = [], []
    pool: list[str] = []
    for stage, b in enumerate(bins, start=1):
        pool = pool + list(b)
        best = None
        for lr in grid:
            cand = train_fn(state, pool, lr, stage)
            score = dev_metric_fn(cand)
            log.debug("stage %d lr %g dev %.4f", stage, lr, score)
            if best is None or score > best[0]:
                best = (score, lr, cand)
        score, lr, state = best
        rates.append(lr)
        scores.append(score)
        log.info("stage %d: pool %d, lr %g, dev %.4f", stage, len(pool), lr, score)
    return rates, scores


def plan_schedule(
    data: TaskData,
    bins: Sequence[Sequence[str]],
    hidden_sizes: Sequence[int],
    grid: Sequence[float] = DEFAULT_LR_GRID,
    epochs_per_stage: int = 50,
    search_seed: int = 0,
    batch_size: int = 128,
) -> CurriculumSchedule:
    """Greedy dev-set rate search for ``bins`` with a single search seed."""
    state0 = init_network(data.network_config(hidden_sizes, search_seed))

    def train_fn(state, pool, lr, stage):
        out, _ = _train_stage(state, data, pool, lr, epochs_per_stage, search_seed, stage, batch_size)
        return out

    rates, _ = greedy_lr_search(
        bins, grid, train_fn, lambda s: _safe_evaluate(s, data, data.split.dev_ids), state0
    )
    return CurriculumSchedule(tuple(bins), tuple(rates), epochs_per_stage)


@dataclass(eq=False)
class TrialResult:
    seed: int
    pool_sizes: list[int] = field(default_factory=list)
    dev_metrics: list[float] = field(default_factory=list)
    test_metrics: list[float] = field(default_factory=list)
    state: NetworkState | None = None

    @property
    def final_dev(self) -> float:
        return self.dev_metrics[-1]

    @property
    def final_test(self) -> float:
        return self.test_metrics[-1]


def _run_trial(schedule: CurriculumSchedule, data: TaskData, hidden_sizes, seed: int, batch_size: int) -> TrialResult:
    state = init_network(data.network_config(hidden_sizes, seed))
    result = TrialResult(seed)
    for stage in range(1, schedule.n_stages + 1):
        pool = schedule.pool(stage)
        state, _ = _train_stage(
            state, data, pool, schedule.rates[stage - 1], schedule.epochs_per_stage, seed, stage, batch_size
        )
        result.pool_sizes.append(len(pool))
        result.dev_metrics.append(_safe_evaluate(state, data, data.split.dev_ids))
        result.test_metrics.append(_safe_evaluate(state, data, data.split.test_ids))
    result.state = state
    return result


def train_curriculum(
    schedule: CurriculumSchedule,
    data: TaskData,
    hidden_sizes: Sequence[int],
    seeds: Sequence[int],
    batch_size: int = 128,
    jobs: int = 1,
) -> list[TrialResult]:
    """One fresh network per seed, trained stage by stage.

    Dev and test metrics are recorded after every stage. Trials are
    independent; ``jobs > 1`` runs them in worker processes and returns
    them in seed order.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    train = set(data.split.train_ids)
    outside = [i for b in schedule.bins for i in b if i not in train]
    if outside:
        raise ValueError(f"{len(outside)} scheduled items are not in the training split")
    if jobs > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_trial, schedule, data, tuple(hidden_sizes), s, batch_size) for s in seeds
            ]
            return [f.result() for f in futures]
    return [_run_trial(schedule, data, hidden_sizes, s, batch_size) for s in seeds]


def train_plain(
    data: TaskData,
    hidden_sizes: Sequence[int],
    seeds: Sequence[int],
    epochs: int = 100,
    lr: float = 0.0005,
    batch_size: int = 128,
    jobs: int = 1,
) -> list[TrialResult]:
    """No-curriculum baseline: a single stage over the whole training set."""
    schedule = CurriculumSchedule((tuple(data.split.train_ids),), (lr,), epochs)
    return train_curriculum(schedule, data, hidden_sizes, seeds, batch_size, jobs)


class CurriculumLearner(BaseEstimator):
    """Estimator front end: ``fit`` plans and trains a curriculum on one seed.

    ``fit(data, difficulty)`` bins the training split by ``difficulty``
    (random bins when ``difficulty`` is None), searches per-stage rates on
    the dev split unless ``rates`` is given, and trains with
    ``random_state``. ``predict`` maps raw feature rows to outputs.
    """

    def __init__(
        self,
        n_bins: int = 5,
        epochs_per_stage: int = 50,
        hidden_sizes: Sequence[int] = (1024, 1024),
        lr_grid: Sequence[float] = DEFAULT_LR_GRID,
        rates: Sequence[float] | None = None,
        batch_size: int = 128,
        random_state: int = 0,
    ):
        self.n_bins = n_bins
        self.epochs_per_stage = epochs_per_stage
        self.hidden_sizes = hidden_sizes
        self.lr_grid = lr_grid
        self.rates = rates
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, data: TaskData, difficulty: DifficultyScore | None = None):
        train_ids = data.split.train_ids
        if difficulty is None:
            bins = make_random_bins(train_ids, self.n_bins, self.random_state)
        else:
            bins = make_bins(difficulty, train_ids, self.n_bins)
        if self.rates is None:
            self.schedule_ = plan_schedule(
                data, bins, self.hidden_sizes, self.lr_grid, self.epochs_per_stage,
                self.random_state, self.batch_size,
            )
        else:
            self.schedule_ = CurriculumSchedule(tuple(bins), tuple(self.rates), self.epochs_per_stage)
        (self.trial_,) = train_curriculum(
            self.schedule_, data, self.hidden_sizes, [self.random_state], self.batch_size
        )
        self.state_ = self.trial_.state
        self.is_regression_ = data.is_regression
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.is_regression_:
            raise AttributeError("predict_proba is only available for classification")
        return forward(self.state_, X)

    def predict(self, X) -> np.ndarray:
        out = forward(self.state_, X)
        return out[:, 0] if self.is_regression_ else out.argmax(axis=1)

    def score(self, data: TaskData, ids: Sequence[str] | None = None) -> float:
        return evaluate(self.state_, data, data.split.test_ids if ids is None else ids)
