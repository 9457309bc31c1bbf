import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdcurriculum.curriculum import (
    DEFAULT_LR_GRID,
    CurriculumLearner,
    CurriculumSchedule,
    TaskData,
    bin_sizes,
    check_lr_grid,
    greedy_lr_search,
    load_schedule,
    make_bins,
    make_random_bins,
    plan_schedule,
    train_curriculum,
    train_plain,
    write_schedule,
)
from crowdcurriculum.data import DatasetSplit, FeatureMatrix
from crowdcurriculum.difficulty import DifficultyScore
from crowdcurriculum.metrics import ccc


def scores(mapping):
    return DifficultyScore("c2_disagreement", "multiclass", mapping)


def ids(n, prefix="i"):
    return [f"{prefix}{k:03d}" for k in range(n)]


def linear_task(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = X @ rng.normal(size=5)
    names = ids(n)
    split = DatasetSplit(names[: n // 2], names[n // 2 : 3 * n // 4], names[3 * n // 4 :])
    return TaskData(FeatureMatrix(names, X), dict(zip(names, y)), split), X, y


def blob_task(n=120, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, n)
    X = np.eye(3)[y] * 2 + rng.normal(0, 0.7, (n, 3))
    names = ids(n)
    split = DatasetSplit(names[: n // 2], names[n // 2 : 3 * n // 4], names[3 * n // 4 :])
    return TaskData(FeatureMatrix(names, X), dict(zip(names, y.tolist())), split, n_classes=3)


class TestBins:
    def test_quantile_split(self):
        names = ids(10)
        bins = make_bins(scores({i: float(10 - k) for k, i in enumerate(names)}), names, 5)
        assert [len(b) for b in bins] == [2] * 5
        assert bins[0] == (names[9], names[8])

    def test_ties_by_id(self):
        names = ids(7)
        bins = make_bins(scores({i: 0.0 for i in reversed(names)}), names[::-1], 3)
        assert [list(b) for b in bins] == [names[:3], names[3:5], names[5:]]

    def test_single_bin(self):
        names = ids(6)
        bins = make_bins(scores({i: 1.0 for i in names}), names, 1)
        assert bins == [tuple(names)]

    def test_missing_scores(self):
        with pytest.raises(KeyError):
            make_bins(scores({"a": 1.0}), ["a", "b"], 1)

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            bin_sizes(3, 4)
        with pytest.raises(ValueError):
            bin_sizes(3, 0)

    def test_random_bins(self):
        names = ids(23)
        a = make_random_bins(names, 5, seed=3)
        assert a == make_random_bins(list(reversed(names)), 5, seed=3)
        assert [len(b) for b in a] == bin_sizes(23, 5)
        assert sorted(i for b in a for i in b) == names
        assert a != make_random_bins(names, 5, seed=4)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 8))
    def test_partition_and_monotone(self, values, n_bins):
        n_bins = min(n_bins, len(values))
        names = ids(len(values))
        s = scores(dict(zip(names, values)))
        bins = make_bins(s, names, n_bins)
        flat = [i for b in bins for i in b]
        assert sorted(flat) == names
        sizes = [len(b) for b in bins]
        assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)
        for lo, hi in zip(bins, bins[1:]):
            assert max(s.scores[i] for i in lo) <= min(s.scores[i] for i in hi)
        sched = CurriculumSchedule(tuple(bins), (0.001,) * n_bins)
        for stage in range(1, n_bins):
            assert set(sched.pool(stage)) < set(sched.pool(stage + 1))


class TestGrid:
    def test_default_grid(self):
        assert DEFAULT_LR_GRID == (0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 5e-5, 1e-5, 5e-6, 1e-6)
        assert check_lr_grid(DEFAULT_LR_GRID) == DEFAULT_LR_GRID

    @pytest.mark.parametrize("grid", [[], [0.1, 0.1], [0.01, 0.1], [0.1, -0.1]])
    def test_invalid(self, grid):
        with pytest.raises(ValueError):
            check_lr_grid(grid)


class TestGreedySearch:
    def test_single_bin_is_grid_search(self):
        best = 0.005
        rates, dev = greedy_lr_search(
            [["a"]], DEFAULT_LR_GRID, lambda s, p, lr, b: lr, lambda lr: -abs(np.log(lr / best)), None
        )
        assert rates == [best] and dev[0] == 0.0

    def test_candidates_branch_from_frozen_snapshot(self):
        seen = []

        def train_fn(state, pool, lr, stage):
            seen.append((stage, state, len(pool)))
            return state + (lr,)

        def dev(state):
            # prefers 0.01 at stage 1 and 0.001 at stage 2
            target = (0.01, 0.001)[len(state) - 1]
            return -abs(state[-1] - target)

        rates, _ = greedy_lr_search([["a"], ["b", "c"]], [0.1, 0.01, 0.001], train_fn, dev, ())
        assert rates == [0.01, 0.001]
        assert {s for st_, s, _ in seen if st_ == 1} == {()}
        assert {s for st_, s, _ in seen if st_ == 2} == {(0.01,)}
        assert {n for st_, _, n in seen if st_ == 2} == {3}

    def test_ties_prefer_earlier_rate(self):
        rates, _ = greedy_lr_search([["a"]], [0.1, 0.01], lambda s, p, lr, b: lr, lambda s: 1.0, None)
        assert rates == [0.1]

    def test_rates_from_grid(self):
        data = blob_task()
        bins = make_random_bins(data.split.train_ids, 3, 0)
        grid = [0.05, 0.005, 0.0005]
        sched = plan_schedule(data, bins, (8,), grid, epochs_per_stage=3)
        assert len(sched.rates) == 3 and set(sched.rates) <= set(grid)


class TestTraining:
    def test_one_bin_equals_plain(self):
        data, _, _ = linear_task(120)
        sched = CurriculumSchedule((tuple(data.split.train_ids),), (0.001,), 20)
        a = train_curriculum(sched, data, (8,), [0, 1])
        b = train_plain(data, (8,), [0, 1], epochs=20, lr=0.001)
        assert [t.test_metrics for t in a] == [t.test_metrics for t in b]
        assert all(x.state.equals(y.state) for x, y in zip(a, b))

    def test_stage_trace_length_and_pools(self):
        data = blob_task()
        bins = make_random_bins(data.split.train_ids, 4, 0)
        sched = CurriculumSchedule(tuple(bins), (0.01, 0.005, 0.001, 0.001), 2)
        (trial,) = train_curriculum(sched, data, (8,), [5])
        assert len(trial.dev_metrics) == len(trial.test_metrics) == 4
        assert trial.pool_sizes == np.cumsum([len(b) for b in bins]).tolist()

    def test_deterministic_and_parallel_merge(self):
        data = blob_task()
        sched = CurriculumSchedule(tuple(make_random_bins(data.split.train_ids, 2, 0)), (0.01, 0.001), 2)
        a = train_curriculum(sched, data, (8,), [0, 1, 2])
        b = train_curriculum(sched, data, (8,), [0, 1, 2], jobs=2)
        assert [t.test_metrics for t in a] == [t.test_metrics for t in b]
        assert [t.seed for t in b] == [0, 1, 2]

    def test_plain_reaches_linear_target(self):
        data, X, y = linear_task()
        # least-squares oracle: a linear map fits the targets exactly
        coef, *_ = np.linalg.lstsq(X[:200], y[:200], rcond=None)
        assert ccc(X[200:300] @ coef, y[200:300]) > 0.999
        trials = train_plain(data, (64, 64), [0, 1])
        assert all(t.final_dev > 0.9 for t in trials)

    def test_items_outside_train_rejected(self):
        data = blob_task()
        sched = CurriculumSchedule(((data.split.dev_ids[0],),), (0.01,), 1)
        with pytest.raises(ValueError):
            train_curriculum(sched, data, (4,), [0])
        with pytest.raises(ValueError):
            train_curriculum(CurriculumSchedule((("i000",),), (0.01,), 1), data, (4,), [])

    def test_task_data_checks(self):
        data = blob_task()
        with pytest.raises(ValueError):
            TaskData(data.features, {}, data.split, 3)


class TestSchedule:
    def test_round_trip(self, tmp_path):
        s = CurriculumSchedule((("a", "b"), ("c",)), (0.01, 0.001), 7)
        write_schedule(s, tmp_path / "s.json")
        assert load_schedule(tmp_path / "s.json") == s

    def test_invariants(self):
        with pytest.raises(ValueError):
            CurriculumSchedule((("a",), ("b",)), (0.01,))
        with pytest.raises(ValueError):
            CurriculumSchedule((("a",), ("a",)), (0.01, 0.01))
        with pytest.raises(ValueError):
            CurriculumSchedule(((),), (0.01,))


class TestLearner:
    def test_fit_predict(self):
        data = blob_task()
        train = data.split.train_ids
        difficulty = scores({i: float(k % 7) for k, i in enumerate(train)})
        est = CurriculumLearner(n_bins=2, epochs_per_stage=5, hidden_sizes=(8,), rates=(0.01, 0.005))
        est.fit(data, difficulty)
        X, y = data.arrays(data.split.test_ids)
        assert est.predict(X).shape == y.shape
        assert np.allclose(est.predict_proba(X).sum(axis=1), 1)
        assert est.score(data) > 0.5
        assert est.schedule_.rates == (0.01, 0.005)

    def test_search_when_no_rates(self):
        data, X, _ = linear_task(80)
        est = CurriculumLearner(n_bins=2, epochs_per_stage=2, hidden_sizes=(4,), lr_grid=(0.01, 0.001))
        est.fit(data)
        assert set(est.schedule_.rates) <= {0.01, 0.001}
        assert est.predict(X).shape == (80,)
        with pytest.raises(AttributeError):
            est.predict_proba(X)
