"""Stage 2: zero-shot adaptation to the cold-start target domain.

Execution order is fixed: (1) initialize every target student's state as the
mean of their shared states over the source domains where they appear, (2)
refine early-bird rows on their real target logs with the model frozen, (3)
simulate practice logs for unseen students by copying each early bird's target
logs onto their most similar unseen peers (similarity taken in the early
bird's reference source domain, using specific states), and (4) fine-tune the
unseen rows on the simulated logs. Unseen students never selected into any
peer set keep their step-1 initialization.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import DomainDataset, TargetSplit
from .embed import EmbeddingTable
from .errors import DataValidationError
from .models import sigmoid
from .pretrain import PretrainedBundle
from .training import fit_student_rows

log = logging.getLogger(__name__)


@dataclass
class TargetStates:
    """Per-student cognitive states in the target domain."""

    domain_id: str
    student_order: list[str]
    vectors: np.ndarray  # (n_students, F)
    refined: dict[str, bool] = field(default_factory=dict)

    def index(self, student_id: str) -> int:
        try:
            return self.student_order.index(student_id)
        except ValueError:
            raise DataValidationError(f"unknown target student {student_id!r}")

    def vector(self, student_id: str) -> np.ndarray:
        return self.vectors[self.index(student_id)]

    def copy(self) -> "TargetStates":
        return TargetStates(
            domain_id=self.domain_id,
            student_order=list(self.student_order),
            vectors=self.vectors.copy(),
            refined=dict(self.refined),
        )


@dataclass(frozen=True)
class SimulatedLog:
    student_id: str
    question_id: str
    score: int
    donor_id: str
    similarity: float


@dataclass
class SimulatedLogSet:
    """Synthesized responses for unseen students, with donor provenance."""

    logs: list[SimulatedLog]
    reference_domains: dict[str, str]  # early bird -> source domain

    def covered_students(self) -> set[str]:
        return {l.student_id for l in self.logs}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["student_id", "question_id", "score", "donor_id", "similarity"])
            for l in self.logs:
                writer.writerow([l.student_id, l.question_id, l.score, l.donor_id,
                                 repr(l.similarity)])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is all zero."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def init_target_states(bundle: PretrainedBundle, target_students) -> TargetStates:
    """State = mean of the student's shared states over their source domains."""
    order = sorted(target_students)
    if not order:
        raise DataValidationError("no target students to initialize")
    dim = bundle.heads.dim
    vectors = np.zeros((len(order), dim))
    missing = []
    for i, sid in enumerate(order):
        by_domain = bundle.shared_states.get(sid, {})
        if not by_domain:
            missing.append(sid)
            continue
        vectors[i] = np.mean([by_domain[d] for d in sorted(by_domain)], axis=0)
    if missing:
        raise DataValidationError(
            f"students with no shared state in any source domain: {missing[:10]}"
            + ("..." if len(missing) > 10 else "")
        )
    target_id = next(
        (d for d, entry in bundle.meta["registry"].items() if entry["role"] == "target"),
        "target",
    )
    return TargetStates(
        domain_id=target_id,
        student_order=order,
        vectors=vectors,
        refined={sid: False for sid in order},
    )


def finetune_early_birds(
    bundle: PretrainedBundle,
    states: TargetStates,
    split: TargetSplit,
    table: EmbeddingTable,
    config: RunConfig,
) -> TargetStates:
    """Refine early-bird rows on their real target logs; everything else frozen."""
    if not split.early_bird_logs:
        raise DataValidationError("no early-bird logs to refine on")
    out = states.copy()
    if config.epochs_early_bird <= 0:
        return out
    sid_to_row = {sid: i for i, sid in enumerate(out.student_order)}
    u_rows = np.array([sid_to_row[l.student_id] for l in split.early_bird_logs], dtype=np.int64)
    q_rows = np.array(
        [table.question_index[l.question_id] for l in split.early_bird_logs], dtype=np.int64
    )
    y = np.array([float(l.score) for l in split.early_bird_logs])
    trainable = np.array(sorted(sid_to_row[s] for s in split.early_bird_ids), dtype=np.int64)
    new_vecs, _ = fit_student_rows(
        bundle.model, table, out.vectors, u_rows, q_rows, y, trainable,
        lr=config.lr, batch_size=config.batch_size, epochs=config.epochs_early_bird,
        seed=config.seed, val_fraction=0.1, patience=config.patience,
    )
    out.vectors = new_vecs
    for sid in split.early_bird_ids:
        out.refined[sid] = True
    return out


def pick_reference_domain(
    bundle: PretrainedBundle, u_target: np.ndarray, early_bird_id: str
) -> str:
    """Source domain whose specific state best aligns (cosine) with the refined
    target state; ties go to the lexicographically smallest domain id."""
    by_domain = bundle.specific_states.get(early_bird_id, {})
    if not by_domain:
        raise DataValidationError(
            f"early bird {early_bird_id!r} has no specific state in any source domain"
        )
    best_domain = None
    best_score = -np.inf
    for domain in sorted(by_domain):
        score = cosine(np.asarray(u_target), by_domain[domain])
        if score > best_score:
            best_score = score
            best_domain = domain
    return best_domain


def peer_set(
    bundle: PretrainedBundle,
    early_bird_id: str,
    reference_domain: str,
    unseen_ids,
    p: int,
) -> list[tuple[str, float]]:
    """Top-p unseen students by cosine similarity of specific states in the
    reference domain; descending score, ties by ascending student id. Unseen
    students with no state in the reference domain are skipped."""
    if p < 1:
        raise DataValidationError(f"peer count must be >= 1, got {p}")
    anchor = bundle.specific_states.get(early_bird_id, {}).get(reference_domain)
    if anchor is None:
        raise DataValidationError(
            f"early bird {early_bird_id!r} has no specific state in {reference_domain!r}"
        )
    scored = []
    for sid in sorted(unseen_ids):
        vec = bundle.specific_states.get(sid, {}).get(reference_domain)
        if vec is None:
            continue
        scored.append((sid, cosine(anchor, vec)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:p]


def simulate_logs(
    split: TargetSplit,
    peer_sets: dict[str, list[tuple[str, float]]],
    reference_domains: dict[str, str],
) -> SimulatedLogSet:
    """Copy each early bird's target logs onto every student in its peer set.

    When several donors produce the same (student, question) pair, the copy
    from the most similar donor wins; exact ties go to the smaller donor id.
    """
    logs_by_donor: dict[str, list] = {}
    for logrec in split.early_bird_logs:
        logs_by_donor.setdefault(logrec.student_id, []).append(logrec)

    best: dict[tuple[str, str], SimulatedLog] = {}
    for donor in sorted(peer_sets):
        if donor not in split.early_bird_ids:
            raise DataValidationError(f"peer-set donor {donor!r} is not an early bird")
        for peer, score in peer_sets[donor]:
            for logrec in logs_by_donor.get(donor, []):
                key = (peer, logrec.question_id)
                candidate = SimulatedLog(
                    student_id=peer,
                    question_id=logrec.question_id,
                    score=logrec.score,
                    donor_id=donor,
                    similarity=float(score),
                )
                incumbent = best.get(key)
                if (
                    incumbent is None
                    or candidate.similarity > incumbent.similarity
                    or (
                        candidate.similarity == incumbent.similarity
                        and candidate.donor_id < incumbent.donor_id
                    )
                ):
                    best[key] = candidate
    ordered = [best[key] for key in sorted(best)]
    return SimulatedLogSet(logs=ordered, reference_domains=dict(sorted(reference_domains.items())))


def finetune_cold_start(
    bundle: PretrainedBundle,
    states: TargetStates,
    simulated: SimulatedLogSet,
    table: EmbeddingTable,
    config: RunConfig,
) -> TargetStates:
    """Fine-tune unseen-student rows on the simulated logs; no-op when empty."""
    out = states.copy()
    if not simulated.logs:
        log.warning("no simulated logs; cold-start states keep their initialization")
        return out
    if config.epochs_cold_start <= 0:
        return out
    sid_to_row = {sid: i for i, sid in enumerate(out.student_order)}
    u_rows = np.array([sid_to_row[l.student_id] for l in simulated.logs], dtype=np.int64)
    q_rows = np.array(
        [table.question_index[l.question_id] for l in simulated.logs], dtype=np.int64
    )
    y = np.array([float(l.score) for l in simulated.logs])
    trainable = np.unique(u_rows)
    # Early-stop on held-out simulated logs: cross-donor generalization is the
    # only stop signal available for students with no real target data.
    new_vecs, _ = fit_student_rows(
        bundle.model, table, out.vectors, u_rows, q_rows, y, trainable,
        lr=config.lr, batch_size=config.batch_size, epochs=config.epochs_cold_start,
        seed=config.seed, val_fraction=0.1, patience=config.patience,
    )
    out.vectors = new_vecs
    for sid in simulated.covered_students():
        out.refined[sid] = True
    return out


def diagnose(
    bundle: PretrainedBundle,
    states: TargetStates,
    student_id: str,
    table: EmbeddingTable,
) -> np.ndarray:
    """Per-concept mastery in (0,1): the concept-fused student trait.

    irt reports its single scalar trait; mirt and neuralcd report one value per
    target-domain concept.
    """
    u = states.vector(student_id)
    model = bundle.model
    cbar = table.concept_mean()
    uu = np.concatenate([u, u * cbar])
    fu = model.params["fuse_u_w"] @ uu + model.params["fuse_u_b"]
    if model.kind == "irt":
        theta = float(fu @ model.params["theta_w"] + model.params["theta_b"])
        return np.array([sigmoid(theta)])
    return sigmoid(fu)[: table.n_concepts]


@dataclass
class AdaptResult:
    """Everything produced by the four-step adaptation sequence."""

    split: TargetSplit
    init_states: TargetStates
    states: TargetStates
    simulated: SimulatedLogSet
    reference_domains: dict[str, str]


def run_adaptation(
    bundle: PretrainedBundle,
    target: DomainDataset,
    split: TargetSplit,
    config: RunConfig,
) -> AdaptResult:
    """Execute steps (1) initialize, (2) refine early birds, (3) simulate,
    (4) cold-start fine-tune, in that order."""
    table = bundle.embeddings.get(target.domain_id)
    if table is None:
        raise DataValidationError(
            f"target domain {target.domain_id!r} missing from the pre-trained bundle"
        )
    if table.n_concepts > bundle.model.n_concepts:
        raise DataValidationError(
            f"target domain has {table.n_concepts} concepts but the model is sized "
            f"for {bundle.model.n_concepts}"
        )
    init_states = init_target_states(bundle, target.students)
    states = finetune_early_birds(bundle, init_states, split, table, config)

    reference_domains: dict[str, str] = {}
    peer_sets: dict[str, list[tuple[str, float]]] = {}
    for sid in sorted(split.early_bird_ids):
        ref = pick_reference_domain(bundle, states.vector(sid), sid)
        reference_domains[sid] = ref
        peer_sets[sid] = peer_set(bundle, sid, ref, split.unseen_ids, config.peer_count)

    simulated = simulate_logs(split, peer_sets, reference_domains)
    final_states = finetune_cold_start(bundle, states, simulated, table, config)
    return AdaptResult(
        split=split,
        init_states=init_states,
        states=final_states,
        simulated=simulated,
        reference_domains=reference_domains,
    )
