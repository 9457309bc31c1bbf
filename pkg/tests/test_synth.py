import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from crowdcurriculum.data import AnnotationSet, LabelSpace
from crowdcurriculum.difficulty import criterion2_categorical, criterion2_regression
from crowdcurriculum.synth import PRESETS, SimConfig, simulate, simulate_categorical, simulate_ordinal, write_truth

from oracles import spearman

FIVE = LabelSpace.categorical("ABCDE")


def agreement(ann, truth):
    true = truth.labels[ann.item_index]
    return np.mean(ann.labels == true)


class TestCategorical:
    def test_saturated_ability(self):
        cfg = SimConfig(100, 8, FIVE, ability_mean=1e3, ability_std=0.0, seed=1)
        ann, _, truth = simulate_categorical(cfg)
        assert agreement(ann, truth) == 1.0
        assert set(criterion2_categorical(ann).scores.values()) == {0.0}

    def test_easy_items_agree_at_logistic_ability(self):
        # 2000 items x 5 labels = 10^4 draws; the oracle is the mean logistic(a_j) over assigned workers
        cfg = SimConfig(2000, 10, FIVE, difficulty_range=(0.0, 0.0), ability_mean=1.0, ability_std=0.5, seed=2)
        ann, _, truth = simulate_categorical(cfg)
        expected = np.mean(expit(truth.ability[truth.assignments]))
        assert agreement(ann, truth) == pytest.approx(expected, abs=0.02)

    def test_errors_are_other_classes(self):
        cfg = SimConfig(300, 5, FIVE, ability_mean=-2.0, seed=3)
        ann, _, truth = simulate_categorical(cfg)
        wrong = ann.labels[ann.labels != truth.labels[ann.item_index]]
        # uniform over the four other classes, so every class shows up among errors
        assert set(wrong.astype(int)) == set(range(5))

    def test_deterministic(self):
        cfg = SimConfig(50, 6, FIVE, seed=7)
        a, fa, ta = simulate(cfg)
        b, fb, tb = simulate(cfg)
        assert a == b and fa == fb
        assert json.dumps(ta.to_dict()) == json.dumps(tb.to_dict())

    def test_assignments_distinct(self):
        cfg = SimConfig(50, 6, FIVE, labels_per_item=6, seed=0)
        _, _, truth = simulate(cfg)
        assert all(len(set(row)) == 6 for row in truth.assignments)

    def test_feature_noise_grows_with_difficulty(self):
        cfg = SimConfig(2000, 10, FIVE, feature_dim=8, seed=4)
        _, fm, truth = simulate_categorical(cfg)
        # distance from the class centroid, estimated per class
        resid = np.zeros(len(fm))
        for c in range(5):
            mask = truth.labels == c
            resid[mask] = np.linalg.norm(fm.rows[mask] - fm.rows[mask].mean(axis=0), axis=1)
        assert spearman(truth.difficulty, resid) > 0.5

    def test_difficulty_recoverable(self):
        cfg = SimConfig(600, 20, FIVE, seed=0)
        ann, _, truth = simulate_categorical(cfg)
        d = criterion2_categorical(ann)
        assert spearman(truth.difficulty, [d.scores[i] for i in truth.item_ids]) > 0


class TestOrdinal:
    def test_noiseless(self):
        cfg = SimConfig(100, 6, LabelSpace.ordinal(7), noise_scale=0.0, seed=0)
        ann, _, truth = simulate_ordinal(cfg)
        assert np.array_equal(ann.labels, np.rint(truth.labels[ann.item_index]))
        assert set(criterion2_regression(ann).scores.values()) == {0.0}

    def test_variance_grows_with_difficulty(self):
        def mean_var(delta):
            cfg = SimConfig(10_000, 10, LabelSpace.ordinal(7), difficulty_range=(delta, delta), seed=5)
            ann, _, _ = simulate_ordinal(cfg)
            return np.mean(list(criterion2_regression(ann).scores.values()))

        assert mean_var(0.9) > mean_var(0.1)

    def test_scores_in_range(self):
        ann, _, truth = simulate_ordinal(SimConfig(200, 6, LabelSpace.ordinal(5), noise_scale=3.0, seed=1))
        assert ann.labels.min() >= 1 and ann.labels.max() <= 5
        assert truth.labels.min() >= 1 and truth.labels.max() <= 5


class TestConfig:
    def test_too_many_labels_per_item(self):
        with pytest.raises(ValueError):
            SimConfig(10, 5, FIVE, labels_per_item=6)

    def test_counts_positive(self):
        with pytest.raises(ValueError):
            SimConfig(0, 5, FIVE)

    def test_wrong_space(self):
        with pytest.raises(ValueError):
            simulate_ordinal(SimConfig(10, 5, FIVE))
        with pytest.raises(ValueError):
            simulate_categorical(SimConfig(10, 5, LabelSpace.ordinal(7)))

    def test_presets_build(self):
        for name, params in PRESETS.items():
            SimConfig(**params)

    def test_truth_file(self, tmp_path):
        _, _, truth = simulate(SimConfig(5, 5, FIVE))
        write_truth(truth, tmp_path / "t.json")
        d = json.loads((tmp_path / "t.json").read_text())
        assert len(d["difficulty"]) == 5 and len(d["ability"]) == 5


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 30),
    st.integers(1, 8),
    st.data(),
    st.booleans(),
    st.integers(0, 2**31 - 1),
)
def test_output_validates(n_items, n_workers, data, ordinal, seed):
    per_item = data.draw(st.integers(1, n_workers))
    space = LabelSpace.ordinal(7) if ordinal else LabelSpace.categorical("AB")
    cfg = SimConfig(n_items, n_workers, space, labels_per_item=per_item, feature_dim=3, seed=seed)
    ann, fm, truth = simulate(cfg)
    # rebuilding runs every AnnotationSet invariant again
    assert AnnotationSet(space, ann.records) == ann
    assert np.all(ann.counts == per_item)
    assert fm.item_ids == ann.item_ids == truth.item_ids
