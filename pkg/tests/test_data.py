import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdcurriculum.data import (
    AnnotationSet,
    DatasetSplit,
    DuplicateAnnotationError,
    FeatureMatrix,
    LabelDomainError,
    LabelSpace,
    ParseError,
    load_annotations,
    load_features,
    load_split,
    random_split,
    write_annotations,
    write_features,
    write_split,
)

ABC = LabelSpace.categorical("ABC")


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLabelSpace:
    def test_categorical_needs_unique_names(self):
        with pytest.raises(ValueError):
            LabelSpace.categorical([])
        with pytest.raises(ValueError):
            LabelSpace.categorical(["a", "a"])

    def test_ordinal_needs_two_levels(self):
        with pytest.raises(ValueError):
            LabelSpace.ordinal(1)

    def test_validate(self):
        seven = LabelSpace.ordinal(7)
        seven.validate(1)
        seven.validate(7)
        for bad in (0, 8, 3.5, float("nan")):
            with pytest.raises(LabelDomainError):
                seven.validate(bad)
        LabelSpace.ordinal(7, fractional=True).validate(3.5)
        with pytest.raises(LabelDomainError):
            ABC.validate(3)
        with pytest.raises(LabelDomainError):
            ABC.validate(0.5)

    def test_dict_round_trip(self):
        for space in (ABC, LabelSpace.ordinal(7), LabelSpace.ordinal(5, fractional=True)):
            assert LabelSpace.from_dict(json.loads(json.dumps(space.to_dict()))) == space


class TestLoadAnnotations:
    def test_counts(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item_id,worker_id,label\na,w1,0\na,w2,1\nb,w1,2\n")
        ann = load_annotations(p, ABC)
        assert ann.item_ids == ("a", "b")
        assert ann.worker_ids == ("w1", "w2")
        assert ann.count("a") == 2 and ann.count("b") == 1
        assert ann.counts.tolist() == [2, 1]

    def test_label_out_of_range(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item_id,worker_id,label\na,w1,3\na,w2,9\n")
        with pytest.raises(LabelDomainError, match="line 3"):
            load_annotations(p, LabelSpace.ordinal(7))

    def test_duplicate_pair(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item_id,worker_id,label\na,w1,0\na,w1,1\n")
        with pytest.raises(DuplicateAnnotationError):
            load_annotations(p, ABC)

    def test_malformed_row_reports_line(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item_id,worker_id,label\na,w1,0\nb,w2\n")
        with pytest.raises(ParseError) as info:
            load_annotations(p, ABC)
        assert info.value.line == 3

    def test_non_numeric_label(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item_id,worker_id,label\na,w1,x\n")
        with pytest.raises(ParseError):
            load_annotations(p, ABC)

    def test_bad_header(self, tmp_path):
        p = _write(tmp_path / "a.csv", "item,worker,label\na,w1,0\n")
        with pytest.raises(ParseError):
            load_annotations(p, ABC)


def test_class_codes_for_ordinal():
    ann = AnnotationSet.from_records(LabelSpace.ordinal(7), [("a", "w", 1), ("b", "w", 7)])
    assert ann.class_codes().tolist() == [0, 6]
    assert ann.vote_counts().shape == (2, 7)


records_strategy = st.lists(
    st.tuples(st.sampled_from(["i1", "i2", "i3", "i,4"]), st.sampled_from(["w1", "w2", "w3"]), st.integers(0, 2)),
    min_size=1,
    max_size=12,
    unique_by=lambda r: (r[0], r[1]),
)


@settings(max_examples=50, deadline=None)
@given(records_strategy)
def test_annotation_round_trip(tmp_path_factory, records):
    ann = AnnotationSet.from_records(ABC, records)
    path = tmp_path_factory.mktemp("rt") / "a.csv"
    write_annotations(ann, path)
    assert load_annotations(path, ABC) == ann


@settings(max_examples=50, deadline=None)
@given(records_strategy)
def test_counts_match_multiplicity(records):
    ann = AnnotationSet.from_records(ABC, records)
    for item in ann.item_ids:
        assert ann.count(item) == sum(1 for r in records if r[0] == item)
    assert ann.counts.min() >= 1


class TestFeatures:
    def test_csv_round_trip(self, tmp_path):
        fm = FeatureMatrix(("x", "y"), np.array([[1.0, 2.5], [-0.1, 1e-300]]))
        write_features(fm, tmp_path / "f.csv")
        assert load_features(tmp_path / "f.csv") == fm

    def test_binary_layout(self, tmp_path):
        rows = np.arange(6, dtype=np.float64).reshape(3, 2) / 7
        write_features(FeatureMatrix(("a", "b", "c"), rows), tmp_path / "f.bin", binary=True)
        raw = (tmp_path / "f.bin").read_bytes()
        assert raw[:4] == b"CFM1"
        assert struct.unpack_from("<II", raw, 4) == (3, 2)
        assert len(raw) == 12 + 8 * 6
        loaded = load_features(tmp_path / "f.bin")
        assert loaded.item_ids == ("0", "1", "2")
        assert np.array_equal(loaded.rows, rows)

    def test_binary_truncated(self, tmp_path):
        (tmp_path / "f.bin").write_bytes(b"CFM1" + struct.pack("<II", 2, 2) + b"\0" * 8)
        with pytest.raises(ParseError):
            load_features(tmp_path / "f.bin")

    def test_invariants(self):
        with pytest.raises(ValueError):
            FeatureMatrix(("a", "a"), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            FeatureMatrix(("a",), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            FeatureMatrix(("a",), np.array([[np.inf]]))

    def test_take(self):
        fm = FeatureMatrix(("a", "b"), np.array([[1.0], [2.0]]))
        assert fm.take(["b", "a"]).ravel().tolist() == [2.0, 1.0]
        with pytest.raises(KeyError):
            fm.take(["z"])


class TestSplits:
    def test_sizes(self):
        ids = [f"i{k}" for k in range(10)]
        s = random_split(ids, (0.6, 0.2, 0.2), seed=1)
        assert (len(s.train_ids), len(s.dev_ids), len(s.test_ids)) == (6, 2, 2)

    def test_deterministic(self):
        ids = [f"i{k}" for k in range(10)]
        assert random_split(ids, (0.6, 0.2, 0.2), 1) == random_split(ids, (0.6, 0.2, 0.2), 1)

    def test_empty_partition(self):
        with pytest.raises(ValueError):
            random_split([f"i{k}" for k in range(10)], (0.5, 0.5, 0.0), 1)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            random_split(["a", "b", "c"], (0.5, 0.2, 0.2), 0)

    def test_disjoint(self):
        with pytest.raises(ValueError):
            DatasetSplit(("a",), ("a",), ("b",))

    def test_json_round_trip(self, tmp_path):
        s = DatasetSplit(("a", "b"), ("c",), ("d",))
        write_split(s, tmp_path / "s.json")
        assert load_split(tmp_path / "s.json") == s

    @settings(max_examples=50, deadline=None)
    @given(st.integers(5, 60), st.integers(0, 2**31 - 1))
    def test_partition_property(self, n, seed):
        ids = [f"i{k}" for k in range(n)]
        s = random_split(ids, (0.6, 0.2, 0.2), seed)
        parts = [set(s.train_ids), set(s.dev_ids), set(s.test_ids)]
        assert parts[0] | parts[1] | parts[2] == set(ids)
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert len(s.dev_ids) == int(0.2 * n + 1e-9)
