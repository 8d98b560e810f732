import numpy as np
import pytest

from colddiag.data import DomainDataset, PracticeLog, Question


def make_domain(domain_id, role, question_specs, log_rows):
    """Small hand-built domain.

    question_specs: list of (question_id, [concept_ids], text)
    log_rows: list of (student_id, question_id, score)
    """
    questions = [
        Question(question_id=qid, domain_id=domain_id, concept_ids=tuple(concepts), text=text)
        for qid, concepts, text in question_specs
    ]
    logs = [PracticeLog(sid, qid, score, domain_id) for sid, qid, score in log_rows]
    concepts = set()
    for q in questions:
        concepts.update(q.concept_ids)
    ds = DomainDataset(
        domain_id=domain_id,
        students=frozenset(l.student_id for l in logs),
        questions=questions,
        concepts=frozenset(concepts),
        logs=logs,
        role=role,
    )
    ds.validate()
    return ds


@pytest.fixture
def two_domain_corpus():
    a = make_domain(
        "alg", "source",
        [("a_q1", ["alg_c1"], "solve linear equation basics"),
         ("a_q2", ["alg_c2"], "factor quadratic expression"),
         ("a_q3", ["alg_c1", "alg_c2"], "mixed equation factoring drill")],
        [("s1", "a_q1", 1), ("s1", "a_q2", 0), ("s2", "a_q1", 0),
         ("s2", "a_q3", 1), ("s3", "a_q2", 1)],
    )
    b = make_domain(
        "geo", "target",
        [("g_q1", ["geo_c1"], "area of a triangle"),
         ("g_q2", ["geo_c1"], "perimeter of a rectangle"),
         ("g_q3", ["geo_c2"], "volume of a prism")],
        [("s1", "g_q1", 1), ("s2", "g_q2", 0), ("s3", "g_q3", 1), ("s3", "g_q1", 0)],
    )
    return [a, b]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
