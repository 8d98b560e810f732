"""Embedding layer: hashed question-text vectors, pooled concept vectors, seeded
student matrices.

Question vectors are produced by sign feature hashing so that cold-start
questions get content-based representations without any fitted vocabulary:
tokens are hashed with a fixed 64-bit FNV-1a, bucketed modulo the embedding
width, signed by the hash's top bit, and the accumulated vector is
L2-normalized. The map is a pure function of the text, identical across
processes and platforms. Concept vectors are the mean of the vectors of the
questions that carry the concept.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .data import DomainDataset, q_mask
from .errors import DataValidationError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """Fixed 64-bit FNV-1a hash (no process salt, no locale dependence)."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def encode_question_text(text: str, dim: int) -> np.ndarray:
    """Hash lowercase alphanumeric tokens into a signed, L2-normalized vector.

    Empty or token-free text maps to the zero vector.
    """
    if dim < 1:
        raise DataValidationError(f"embedding dim must be >= 1, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        h = fnv1a64(token.encode("utf-8"))
        sign = -1.0 if (h >> 63) & 1 else 1.0
        vec[h % dim] += sign
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec /= norm
    return vec


def build_concept_vecs(
    questions: list, question_vecs: np.ndarray, concept_index: dict[str, int]
) -> np.ndarray:
    """Concept row c = mean of the question rows whose question carries concept c."""
    n_concepts = len(concept_index)
    sums = np.zeros((n_concepts, question_vecs.shape[1]), dtype=np.float64)
    counts = np.zeros(n_concepts, dtype=np.int64)
    for row, question in enumerate(questions):
        for cid in question.concept_ids:
            idx = concept_index[cid]
            sums[idx] += question_vecs[row]
            counts[idx] += 1
    orphans = [cid for cid, idx in sorted(concept_index.items()) if counts[idx] == 0]
    if orphans:
        raise DataValidationError(f"concepts with no associated question: {orphans}")
    return sums / counts[:, None]


def init_student_vecs(n: int, dim: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. uniform init on [-a, a] with a = sqrt(6 / dim)."""
    if n < 1:
        raise DataValidationError(f"need at least one student row, got n={n}")
    bound = np.sqrt(6.0 / dim)
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=(n, dim))


@dataclass
class EmbeddingTable:
    """Per-domain embedding matrices plus the id-to-row maps that index them."""

    domain_id: str
    dim: int
    student_index: dict[str, int]
    question_index: dict[str, int]
    concept_index: dict[str, int]
    student_vecs: np.ndarray  # |U| x F, learnable
    question_vecs: np.ndarray  # |V| x F, text-derived, frozen
    concept_vecs: np.ndarray  # |C| x F, pooled from question_vecs
    masks: np.ndarray  # |V| x |C| binary concept-relevance rows

    @property
    def n_concepts(self) -> int:
        return len(self.concept_index)

    def concept_mean(self) -> np.ndarray:
        return self.concept_vecs.mean(axis=0)

    def validate(self, atol: float = 1e-9) -> None:
        rows = sorted(self.question_index.values())
        if rows != list(range(len(rows))):
            raise DataValidationError(f"table {self.domain_id!r}: question rows not contiguous")
        norms = np.linalg.norm(self.question_vecs, axis=1)
        nonzero = norms > 0
        if not np.allclose(norms[nonzero], 1.0, atol=atol):
            raise DataValidationError(
                f"table {self.domain_id!r}: question rows are not unit-normalized"
            )


def build_table(dataset: DomainDataset, dim: int, seed: int) -> EmbeddingTable:
    """Construct the full embedding table for one domain.

    Row order is sorted-by-id for students, questions, and concepts so that the
    layout is reproducible from the dataset alone.
    """
    students = dataset.sorted_students()
    questions = sorted(dataset.questions, key=lambda q: q.question_id)
    concepts = dataset.sorted_concepts()
    student_index = {sid: i for i, sid in enumerate(students)}
    question_index = {q.question_id: i for i, q in enumerate(questions)}
    concept_index = {cid: i for i, cid in enumerate(concepts)}

    question_vecs = np.stack([encode_question_text(q.text, dim) for q in questions])
    concept_vecs = build_concept_vecs(questions, question_vecs, concept_index)
    masks = np.stack([q_mask(q, concept_index) for q in questions])
    student_seed = np.random.SeedSequence([seed, fnv1a64(dataset.domain_id.encode("utf-8"))])
    rng = np.random.default_rng(student_seed)
    bound = np.sqrt(6.0 / dim)
    student_vecs = rng.uniform(-bound, bound, size=(len(students), dim))

    return EmbeddingTable(
        domain_id=dataset.domain_id,
        dim=dim,
        student_index=student_index,
        question_index=question_index,
        concept_index=concept_index,
        student_vecs=student_vecs,
        question_vecs=question_vecs,
        concept_vecs=concept_vecs,
        masks=masks,
    )
