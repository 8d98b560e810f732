"""Core entity types, the multi-domain dataset container, and corpus file I/O.

A corpus directory holds one manifest plus a pair of files per domain:

    manifest.json            {"domains": [{"id", "role", "logs", "questions"}, ...]}
    logs_<domain>.csv        header ``student_id,question_id,score``; score is 0 or 1
    questions_<domain>.json  [{"id": ..., "concepts": [...], "text": ...}, ...]

All files are UTF-8 with LF line endings. Log rows keep file order; a
(student, question) pair may appear at most once per domain (first-attempt
semantics). Student ids are global across domains, while question and concept
ids are namespaced per domain.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataValidationError

ROLES = ("source", "target")


@dataclass(frozen=True)
class PracticeLog:
    """One first-attempt response: 1 means the student answered correctly."""

    student_id: str
    question_id: str
    score: int
    domain_id: str


@dataclass(frozen=True)
class Question:
    question_id: str
    domain_id: str
    concept_ids: tuple[str, ...]
    text: str


@dataclass
class DomainDataset:
    """One topical domain: students, questions, concepts, and practice logs."""

    domain_id: str
    students: frozenset[str]
    questions: list[Question]
    concepts: frozenset[str]
    logs: list[PracticeLog]
    role: str

    def sorted_students(self) -> list[str]:
        return sorted(self.students)

    def sorted_concepts(self) -> list[str]:
        return sorted(self.concepts)

    def question_by_id(self) -> dict[str, Question]:
        return {q.question_id: q for q in self.questions}

    def validate(self) -> None:
        if self.role not in ROLES:
            raise DataValidationError(
                f"domain {self.domain_id!r}: role must be one of {ROLES}, got {self.role!r}"
            )
        qids = [q.question_id for q in self.questions]
        if len(qids) != len(set(qids)):
            raise DataValidationError(f"domain {self.domain_id!r}: duplicate question ids")
        for q in self.questions:
            if not q.concept_ids:
                raise DataValidationError(
                    f"domain {self.domain_id!r}: question {q.question_id!r} has no concepts"
                )
        derived = set()
        for q in self.questions:
            derived.update(q.concept_ids)
        if derived != set(self.concepts):
            raise DataValidationError(
                f"domain {self.domain_id!r}: concept set does not match the union of "
                f"question concepts"
            )
        known_q = set(qids)
        seen: set[tuple[str, str]] = set()
        for log in self.logs:
            if log.score not in (0, 1):
                raise DataValidationError(
                    f"domain {self.domain_id!r}: log ({log.student_id},{log.question_id}) "
                    f"has score {log.score!r}, expected 0 or 1"
                )
            if log.question_id not in known_q:
                raise DataValidationError(
                    f"domain {self.domain_id!r}: log references unknown question "
                    f"{log.question_id!r}"
                )
            if log.student_id not in self.students:
                raise DataValidationError(
                    f"domain {self.domain_id!r}: log references unregistered student "
                    f"{log.student_id!r}"
                )
            key = (log.student_id, log.question_id)
            if key in seen:
                raise DataValidationError(
                    f"domain {self.domain_id!r}: duplicate first-attempt log for {key}"
                )
            seen.add(key)


@dataclass
class TargetSplit:
    """Partition of target students into early birds (with logs) and unseen students."""

    early_bird_ids: frozenset[str]
    unseen_ids: frozenset[str]
    early_bird_logs: list[PracticeLog] = field(default_factory=list)

    def validate(self, dataset: DomainDataset) -> None:
        if self.early_bird_ids & self.unseen_ids:
            raise DataValidationError("early-bird and unseen student sets overlap")
        if self.early_bird_ids | self.unseen_ids != dataset.students:
            raise DataValidationError("split does not partition the target student set")
        for log in self.early_bird_logs:
            if log.student_id not in self.early_bird_ids:
                raise DataValidationError(
                    f"early-bird log belongs to non-early-bird student {log.student_id!r}"
                )


def _read_manifest(path: Path) -> dict:
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise DataValidationError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "domains" not in manifest:
        raise DataValidationError(f"{manifest_path}: expected an object with a 'domains' list")
    return manifest


def read_corpus_digest(path: str | Path) -> str | None:
    """Return the generation digest recorded in the corpus manifest, if any."""
    manifest = _read_manifest(Path(path))
    digest = manifest.get("digest")
    return str(digest) if digest is not None else None


def _load_logs(csv_path: Path, domain_id: str) -> list[PracticeLog]:
    if not csv_path.is_file():
        raise DataValidationError(f"missing log file: {csv_path}")
    logs: list[PracticeLog] = []
    with csv_path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["student_id", "question_id", "score"]:
            raise DataValidationError(
                f"{csv_path}:1: expected header 'student_id,question_id,score', got {header}"
            )
        for row in reader:
            line = reader.line_num
            if len(row) != 3:
                raise DataValidationError(f"{csv_path}:{line}: expected 3 fields, got {len(row)}")
            student_id, question_id, raw_score = row
            if raw_score not in ("0", "1"):
                raise DataValidationError(
                    f"{csv_path}:{line}: score must be 0 or 1, got {raw_score!r}"
                )
            if not student_id or not question_id:
                raise DataValidationError(f"{csv_path}:{line}: empty student or question id")
            logs.append(PracticeLog(student_id, question_id, int(raw_score), domain_id))
    return logs


def _load_questions(json_path: Path, domain_id: str) -> list[Question]:
    if not json_path.is_file():
        raise DataValidationError(f"missing question file: {json_path}")
    try:
        records = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{json_path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise DataValidationError(f"{json_path}: expected a JSON list of question records")
    questions = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or not {"id", "concepts", "text"} <= set(rec):
            raise DataValidationError(
                f"{json_path}: record {i}: expected keys 'id', 'concepts', 'text'"
            )
        concepts = rec["concepts"]
        if not isinstance(concepts, list) or not concepts:
            raise DataValidationError(
                f"{json_path}: record {i} (id={rec['id']!r}): 'concepts' must be a non-empty list"
            )
        questions.append(
            Question(
                question_id=str(rec["id"]),
                domain_id=domain_id,
                concept_ids=tuple(str(c) for c in concepts),
                text=str(rec["text"]),
            )
        )
    return questions


def load_corpus(path: str | Path) -> list[DomainDataset]:
    """Load and validate every domain listed in ``<path>/manifest.json``.

    Returns datasets ordered by domain id. Raises DataValidationError with the
    offending file (and line, for CSV rows) on any malformed or inconsistent
    input.
    """
    root = Path(path)
    manifest = _read_manifest(root)
    entries = manifest["domains"]
    if not isinstance(entries, list) or not entries:
        raise DataValidationError(f"{root / 'manifest.json'}: 'domains' must be a non-empty list")

    datasets = []
    seen_ids: set[str] = set()
    for entry in entries:
        for key in ("id", "role", "logs", "questions"):
            if key not in entry:
                raise DataValidationError(
                    f"{root / 'manifest.json'}: domain entry missing key {key!r}"
                )
        domain_id = str(entry["id"])
        if domain_id in seen_ids:
            raise DataValidationError(f"{root / 'manifest.json'}: duplicate domain {domain_id!r}")
        seen_ids.add(domain_id)
        role = str(entry["role"])
        if role not in ROLES:
            raise DataValidationError(
                f"{root / 'manifest.json'}: domain {domain_id!r} has role {role!r}"
            )
        questions = _load_questions(root / entry["questions"], domain_id)
        logs = _load_logs(root / entry["logs"], domain_id)
        concepts: set[str] = set()
        for q in questions:
            concepts.update(q.concept_ids)
        dataset = DomainDataset(
            domain_id=domain_id,
            students=frozenset(log.student_id for log in logs),
            questions=questions,
            concepts=frozenset(concepts),
            logs=logs,
            role=role,
        )
        dataset.validate()
        datasets.append(dataset)
    datasets.sort(key=lambda d: d.domain_id)
    return datasets


def write_corpus(datasets: list[DomainDataset], path: str | Path, digest: str | None = None) -> None:
    """Write datasets in the canonical on-disk layout (stable bytes per input)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for ds in sorted(datasets, key=lambda d: d.domain_id):
        logs_name = f"logs_{ds.domain_id}.csv"
        questions_name = f"questions_{ds.domain_id}.json"
        with (root / logs_name).open("w", encoding="utf-8", newline="\n") as handle:
            handle.write("student_id,question_id,score\n")
            for log in ds.logs:
                handle.write(f"{log.student_id},{log.question_id},{log.score}\n")
        records = [
            {"id": q.question_id, "concepts": list(q.concept_ids), "text": q.text}
            for q in ds.questions
        ]
        (root / questions_name).write_text(
            json.dumps(records, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        entries.append(
            {"id": ds.domain_id, "role": ds.role, "logs": logs_name, "questions": questions_name}
        )
    manifest: dict = {"domains": entries}
    if digest is not None:
        manifest["digest"] = digest
    (root / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def make_target_split(dataset: DomainDataset, early_bird_fraction: float, seed: int) -> TargetSplit:
    """Sample early-bird students uniformly without replacement, seeded.

    The early-bird cohort has ceil(fraction * |students|) members; their logs
    become the only target-domain logs visible to adaptation.
    """
    if dataset.role != "target":
        raise DataValidationError(
            f"target split requires a target-role dataset, got role {dataset.role!r}"
        )
    if not (0.0 < early_bird_fraction <= 1.0):
        raise DataValidationError(
            f"early_bird_fraction must be in (0, 1], got {early_bird_fraction}"
        )
    students = dataset.sorted_students()
    if not students or not dataset.logs:
        raise DataValidationError("target dataset needs at least one student with one log")
    n_early = math.ceil(early_bird_fraction * len(students))
    if n_early < 1:
        raise DataValidationError("early-bird fraction yields zero early birds")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(students), size=n_early, replace=False)
    early = frozenset(students[i] for i in chosen)
    unseen = frozenset(dataset.students - early)
    early_logs = [log for log in dataset.logs if log.student_id in early]
    split = TargetSplit(early_bird_ids=early, unseen_ids=unseen, early_bird_logs=early_logs)
    split.validate(dataset)
    return split


def q_mask(question: Question, concept_index: dict[str, int]) -> np.ndarray:
    """Binary concept-relevance vector for one question (1 at associated concepts)."""
    if not question.concept_ids:
        raise DataValidationError(f"question {question.question_id!r} has no concepts")
    mask = np.zeros(len(concept_index), dtype=np.float64)
    for cid in question.concept_ids:
        if cid not in concept_index:
            raise DataValidationError(
                f"question {question.question_id!r} references unknown concept {cid!r}"
            )
        mask[concept_index[cid]] = 1.0
    return mask
