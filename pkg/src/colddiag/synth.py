"""Seeded generator of multi-domain populations with known ground truth.

Every student carries a shared ability vector plus one specific ability vector
per domain, all componentwise in [0, 1]. Each question belongs to one concept
of its domain and has a scalar difficulty in [0, 1]. A response is sampled as

    Bernoulli(sigmoid(k * (mix * <shared, c> + (1 - mix) * <specific, c> - difficulty)))

where c is the question's concept weight vector in ability space (nonnegative,
summing to one, drawn once per domain from a seeded map) and k is a fixed
steepness. Raising any ability component that c touches therefore never lowers
the success probability. Question texts are synthesized token strings carrying
the concept name and a coarse difficulty level so that content-based encoders
see both signals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DomainDataset, PracticeLog, Question
from .errors import DataValidationError
from .models import sigmoid

TARGET_DOMAIN_ID = "target"


@dataclass
class SynthConfig:
    n_source_domains: int = 3
    n_students: int = 500
    n_questions: int = 100
    n_concepts: int = 8
    logs_per_student: int = 20
    ability_dim: int = 8
    mix_shared: float = 0.7
    # How much of a student's per-domain specific ability comes from one
    # persistent personal factor (vs. fresh per-domain noise). Nonzero makes
    # "similar students stay similar in a new domain" actually true, which is
    # what peer-based log simulation banks on.
    specific_base_weight: float = 0.5
    steepness: float = 6.0

    def validate(self) -> None:
        for name in ("n_source_domains", "n_students", "n_questions", "n_concepts",
                     "logs_per_student", "ability_dim"):
            if getattr(self, name) < 1:
                raise DataValidationError(f"synth config: {name} must be >= 1")
        if not 0.0 <= self.mix_shared <= 1.0:
            raise DataValidationError("synth config: mix_shared must lie in [0, 1]")
        if not 0.0 <= self.specific_base_weight <= 1.0:
            raise DataValidationError("synth config: specific_base_weight must lie in [0, 1]")
        if self.n_questions < self.n_concepts:
            raise DataValidationError("synth config: need at least one question per concept")
        if self.logs_per_student > self.n_questions:
            raise DataValidationError(
                "synth config: logs_per_student cannot exceed n_questions"
            )


@dataclass
class GroundTruth:
    """Latent abilities and difficulties behind a generated corpus."""

    shared_ability: dict[str, np.ndarray]
    specific_ability: dict[str, dict[str, np.ndarray]]  # student -> domain -> vector
    difficulty: dict[str, dict[str, float]]  # domain -> question -> difficulty
    concept_weights: dict[str, np.ndarray]  # domain -> (n_concepts, ability_dim)
    concept_order: dict[str, list[str]] = field(default_factory=dict)
    mix_shared: float = 0.7
    steepness: float = 6.0


def domain_ids(config: SynthConfig) -> list[str]:
    return [f"src{i}" for i in range(config.n_source_domains)] + [TARGET_DOMAIN_ID]


def true_prob(truth: GroundTruth, student_id: str, domain_id: str, question: Question,
              difficulty: float | None = None) -> float:
    """Analytic success probability for one (student, question) pair."""
    weights = truth.concept_weights[domain_id]
    order = truth.concept_order[domain_id]
    c = np.zeros(weights.shape[1])
    for cid in question.concept_ids:
        c += weights[order.index(cid)]
    c /= len(question.concept_ids)
    shared = truth.shared_ability[student_id]
    specific = truth.specific_ability[student_id][domain_id]
    diff = truth.difficulty[domain_id][question.question_id] if difficulty is None else difficulty
    signal = truth.mix_shared * float(shared @ c) + (1.0 - truth.mix_shared) * float(specific @ c)
    return float(sigmoid(truth.steepness * (signal - diff)))


def _question_text(domain_id: str, index: int, concept_name: str, difficulty: float) -> str:
    level = int(round(difficulty * 10.0))
    return f"question {domain_id}item{index} covers {concept_name} at level {level}"


def generate(config: SynthConfig, seed: int) -> tuple[list[DomainDataset], GroundTruth]:
    """Build the full corpus (sources plus one target) and its ground truth.

    Pure function of (config, seed): two calls return identical structures.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    g = config.ability_dim
    students = [f"s{i:04d}" for i in range(config.n_students)]
    shared = {sid: rng.uniform(0.0, 1.0, size=g) for sid in students}
    specific_base = {sid: rng.uniform(0.0, 1.0, size=g) for sid in students}

    truth = GroundTruth(
        shared_ability=shared,
        specific_ability={sid: {} for sid in students},
        difficulty={},
        concept_weights={},
        concept_order={},
        mix_shared=config.mix_shared,
        steepness=config.steepness,
    )

    datasets: list[DomainDataset] = []
    w_base = config.specific_base_weight
    for domain_id in domain_ids(config):
        for sid in students:
            fresh = rng.uniform(0.0, 1.0, size=g)
            truth.specific_ability[sid][domain_id] = (
                w_base * specific_base[sid] + (1.0 - w_base) * fresh
            )
        # Nonnegative concept-to-ability map with rows summing to one keeps the
        # response monotone in every touched ability component.
        raw = rng.uniform(0.05, 1.0, size=(config.n_concepts, g))
        weights = raw / raw.sum(axis=1, keepdims=True)
        concept_names = [f"{domain_id}topic{j}" for j in range(config.n_concepts)]
        truth.concept_weights[domain_id] = weights
        truth.concept_order[domain_id] = concept_names

        questions = []
        truth.difficulty[domain_id] = {}
        for qi in range(config.n_questions):
            concept = concept_names[qi % config.n_concepts]
            difficulty = float(rng.uniform(0.0, 1.0))
            qid = f"{domain_id}_q{qi:03d}"
            truth.difficulty[domain_id][qid] = difficulty
            questions.append(
                Question(
                    question_id=qid,
                    domain_id=domain_id,
                    concept_ids=(concept,),
                    text=_question_text(domain_id, qi, concept, difficulty),
                )
            )

        logs = []
        for sid in students:
            picked = rng.choice(config.n_questions, size=config.logs_per_student, replace=False)
            for qi in sorted(int(i) for i in picked):
                q = questions[qi]
                p = true_prob(truth, sid, domain_id, q)
                score = int(rng.random() < p)
                logs.append(PracticeLog(sid, q.question_id, score, domain_id))

        role = "target" if domain_id == TARGET_DOMAIN_ID else "source"
        dataset = DomainDataset(
            domain_id=domain_id,
            students=frozenset(students),
            questions=questions,
            concepts=frozenset(concept_names),
            logs=logs,
            role=role,
        )
        dataset.validate()
        datasets.append(dataset)
    datasets.sort(key=lambda d: d.domain_id)
    return datasets, truth


def export_truth(truth: GroundTruth, path: str | Path) -> None:
    """Write the ground truth as canonical JSON (for correlation checks)."""
    payload = {
        "mix_shared": truth.mix_shared,
        "steepness": truth.steepness,
        "shared_ability": {sid: vec.tolist() for sid, vec in truth.shared_ability.items()},
        "specific_ability": {
            sid: {dom: vec.tolist() for dom, vec in by_dom.items()}
            for sid, by_dom in truth.specific_ability.items()
        },
        "difficulty": truth.difficulty,
        "concept_weights": {dom: w.tolist() for dom, w in truth.concept_weights.items()},
        "concept_order": truth.concept_order,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, ensure_ascii=False, sort_keys=True, indent=2)
        handle.write("\n")


def load_truth(path: str | Path) -> GroundTruth:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return GroundTruth(
        shared_ability={s: np.asarray(v) for s, v in payload["shared_ability"].items()},
        specific_ability={
            s: {d: np.asarray(v) for d, v in by_dom.items()}
            for s, by_dom in payload["specific_ability"].items()
        },
        difficulty=payload["difficulty"],
        concept_weights={d: np.asarray(w) for d, w in payload["concept_weights"].items()},
        concept_order=payload["concept_order"],
        mix_shared=payload["mix_shared"],
        steepness=payload["steepness"],
    )
