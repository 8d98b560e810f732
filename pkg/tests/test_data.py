import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colddiag.data import (
    Question,
    load_corpus,
    make_target_split,
    q_mask,
    write_corpus,
)
from colddiag.errors import DataValidationError

from conftest import make_domain


def test_corpus_round_trip(two_domain_corpus, tmp_path):
    write_corpus(two_domain_corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert [d.domain_id for d in loaded] == ["alg", "geo"]
    assert [len(d.logs) for d in loaded] == [5, 4]
    assert [len(d.questions) for d in loaded] == [3, 3]
    assert loaded[0].students == frozenset({"s1", "s2", "s3"})

    # canonical rewrite is byte-identical
    out2 = tmp_path / "again"
    write_corpus(loaded, out2)
    for name in sorted(p.name for p in out2.iterdir()):
        assert (out2 / name).read_bytes() == (tmp_path / name).read_bytes()


def test_load_corpus_reports_bad_score_with_location(two_domain_corpus, tmp_path):
    write_corpus(two_domain_corpus, tmp_path)
    logs_file = tmp_path / "logs_alg.csv"
    text = logs_file.read_text().replace("s1,a_q2,0", "s1,a_q2,2")
    logs_file.write_text(text)
    with pytest.raises(DataValidationError, match=r"logs_alg\.csv:3.*score"):
        load_corpus(tmp_path)


def test_load_corpus_rejects_duplicate_first_attempt(two_domain_corpus, tmp_path):
    write_corpus(two_domain_corpus, tmp_path)
    logs_file = tmp_path / "logs_alg.csv"
    logs_file.write_text(logs_file.read_text() + "s1,a_q1,0\n")
    with pytest.raises(DataValidationError, match="duplicate first-attempt"):
        load_corpus(tmp_path)


def test_load_corpus_rejects_dangling_question(two_domain_corpus, tmp_path):
    write_corpus(two_domain_corpus, tmp_path)
    logs_file = tmp_path / "logs_geo.csv"
    logs_file.write_text(logs_file.read_text() + "s1,g_q9,1\n")
    with pytest.raises(DataValidationError, match="unknown question"):
        load_corpus(tmp_path)


def test_load_corpus_missing_manifest(tmp_path):
    with pytest.raises(DataValidationError, match="manifest"):
        load_corpus(tmp_path)


def test_target_split_fraction_examples(two_domain_corpus):
    target = two_domain_corpus[1]
    split = make_target_split(target, 1.0, seed=0)
    assert split.early_bird_ids == target.students
    assert split.unseen_ids == frozenset()
    assert len(split.early_bird_logs) == len(target.logs)

    # ceil(0.01 * 100) = 1 early bird
    big = make_domain(
        "big", "target",
        [("b_q1", ["b_c1"], "text one")],
        [(f"s{i}", "b_q1", i % 2) for i in range(100)],
    )
    split = make_target_split(big, 0.01, seed=3)
    assert len(split.early_bird_ids) == 1
    assert len(split.unseen_ids) == 99


def test_target_split_deterministic(two_domain_corpus):
    target = two_domain_corpus[1]
    a = make_target_split(target, 0.5, seed=11)
    b = make_target_split(target, 0.5, seed=11)
    assert a.early_bird_ids == b.early_bird_ids
    assert a.early_bird_logs == b.early_bird_logs


def test_target_split_requires_target_role(two_domain_corpus):
    with pytest.raises(DataValidationError, match="target"):
        make_target_split(two_domain_corpus[0], 0.5, seed=0)


def test_target_split_rejects_bad_fraction(two_domain_corpus):
    target = two_domain_corpus[1]
    for frac in (0.0, -0.1, 1.5):
        with pytest.raises(DataValidationError):
            make_target_split(target, frac, seed=0)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    frac=st.floats(min_value=0.01, max_value=1.0),
    n_students=st.integers(min_value=1, max_value=25),
)
def test_split_partitions_student_set(seed, frac, n_students):
    ds = make_domain(
        "t", "target",
        [("t_q1", ["t_c1"], "prop text")],
        [(f"s{i:02d}", "t_q1", 1) for i in range(n_students)],
    )
    split = make_target_split(ds, frac, seed)
    assert split.early_bird_ids | split.unseen_ids == ds.students
    assert not split.early_bird_ids & split.unseen_ids
    assert len(split.early_bird_ids) >= 1


def test_q_mask_examples():
    index = {"c0": 0, "c1": 1, "c2": 2, "c3": 3}
    q_single = Question("q", "d", ("c2",), "t")
    assert q_mask(q_single, index).tolist() == [0.0, 0.0, 1.0, 0.0]

    q_two = Question("q", "d", ("c0", "c3"), "t")
    assert q_mask(q_two, index).tolist() == [1.0, 0.0, 0.0, 1.0]


def test_q_mask_errors():
    index = {"c0": 0}
    with pytest.raises(DataValidationError, match="no concepts"):
        q_mask(Question("q", "d", (), "t"), index)
    with pytest.raises(DataValidationError, match="unknown concept"):
        q_mask(Question("q", "d", ("missing",), "t"), index)


@settings(max_examples=40, deadline=None)
@given(n_concepts=st.integers(min_value=1, max_value=10), data=st.data())
def test_q_mask_ones_count(n_concepts, data):
    chosen = data.draw(
        st.sets(st.integers(min_value=0, max_value=n_concepts - 1), min_size=1)
    )
    index = {f"c{i}": i for i in range(n_concepts)}
    q = Question("q", "d", tuple(f"c{i}" for i in sorted(chosen)), "t")
    mask = q_mask(q, index)
    assert int(mask.sum()) == len(chosen)
    assert set(np.flatnonzero(mask)) == chosen
