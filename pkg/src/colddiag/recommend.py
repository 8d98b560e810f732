"""Question recommendation for cold-start students from a refined model.

Every target question is scored for the student; the bank splits into a
positive bucket (predicted correct, probability >= 0.5) and a negative bucket.
Half the list is drawn uniformly from each bucket, seeded; when one bucket is
too small the deficit is filled from the other and the list is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapt import TargetStates, diagnose
from .embed import EmbeddingTable
from .errors import DataValidationError
from .pretrain import PretrainedBundle
from .training import pad_masks, predict_rows


@dataclass
class Recommendation:
    question_id: str
    predicted_prob: float
    mastery_pct: float  # mastery over the question's concepts, x100
    difficulty_pct: float  # question difficulty over its concepts, x100
    bucket: str  # "positive" | "negative"


@dataclass
class RecommendationList:
    student_id: str
    items: list[Recommendation]
    deficit_filled: bool

    def to_rows(self) -> list[dict]:
        return [
            {
                "question_id": r.question_id,
                "predicted_prob": r.predicted_prob,
                "mastery_pct": r.mastery_pct,
                "difficulty_pct": r.difficulty_pct,
                "bucket": r.bucket,
            }
            for r in self.items
        ]


def recommend(
    bundle: PretrainedBundle,
    states: TargetStates,
    student_id: str,
    table: EmbeddingTable,
    x: int,
    seed: int,
    frontier: bool = False,
) -> RecommendationList:
    """Draw x recommended questions (x even), x/2 per predicted-outcome bucket.

    With ``frontier`` the buckets are instead ranked by |prob - 0.5| ascending
    and the closest-to-frontier questions are taken deterministically.
    """
    if x < 2 or x % 2:
        raise DataValidationError(f"recommendation size must be an even count >= 2, got {x}")
    n_questions = len(table.question_index)
    if n_questions < x:
        raise DataValidationError(
            f"question bank has {n_questions} questions, fewer than the requested {x}"
        )
    row = states.index(student_id)
    question_ids = sorted(table.question_index, key=table.question_index.get)
    q_rows = np.arange(n_questions, dtype=np.int64)
    u_rows = np.full(n_questions, row, dtype=np.int64)
    probs = predict_rows(bundle.model, table, states.vectors, u_rows, q_rows)

    mastery = diagnose(bundle, states, student_id, table)
    difficulty_vec = _difficulty_per_concept(bundle, table)

    positive = [i for i in range(n_questions) if probs[i] >= 0.5]
    negative = [i for i in range(n_questions) if probs[i] < 0.5]

    half = x // 2
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4EC0]))
    deficit = len(positive) < half or len(negative) < half

    def draw(pool: list[int], count: int) -> list[int]:
        if count <= 0 or not pool:
            return []
        count = min(count, len(pool))
        if frontier:
            return sorted(pool, key=lambda i: (abs(probs[i] - 0.5), question_ids[i]))[:count]
        picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[j] for j in sorted(int(t) for t in picked)]

    take_pos = draw(positive, half)
    take_neg = draw(negative, half)
    short = x - len(take_pos) - len(take_neg)
    if short > 0:
        if len(take_pos) < half:
            extra_pool = [i for i in negative if i not in take_neg]
        else:
            extra_pool = [i for i in positive if i not in take_pos]
        extra = draw(extra_pool, short)
        if len(extra) < short:
            raise DataValidationError("question bank cannot fill the requested list")
        if len(take_pos) < half:
            take_neg += extra
        else:
            take_pos += extra

    items = []
    for i in take_pos + take_neg:
        qid = question_ids[i]
        concept_rows = np.flatnonzero(table.masks[i])
        if bundle.model.kind == "irt":
            m_pct = float(mastery[0]) * 100.0
            d_pct = float(difficulty_vec[i]) * 100.0
        elif bundle.model.kind == "mirt":
            m_pct = float(mastery[concept_rows].mean()) * 100.0
            d_pct = float(difficulty_vec[i]) * 100.0
        else:
            m_pct = float(mastery[concept_rows].mean()) * 100.0
            d_pct = float(difficulty_vec[i, concept_rows].mean()) * 100.0
        items.append(
            Recommendation(
                question_id=qid,
                predicted_prob=float(probs[i]),
                mastery_pct=m_pct,
                difficulty_pct=d_pct,
                bucket="positive" if probs[i] >= 0.5 else "negative",
            )
        )
    items.sort(key=lambda r: (-r.predicted_prob, r.question_id))
    return RecommendationList(student_id=student_id, items=items, deficit_filled=deficit)


def _difficulty_per_concept(bundle: PretrainedBundle, table: EmbeddingTable) -> np.ndarray:
    """Reported question difficulty per kind.

    neuralcd: (|V|, K) per-concept difficulty matrix from the fused question
    vectors. irt / mirt: a (|V|,) vector of sigmoid-mapped scalar difficulties.
    """
    from .models import sigmoid

    model = bundle.model
    cbar = table.concept_mean()
    v = table.question_vecs
    vv = np.concatenate([v, v * cbar], axis=1)
    fv = vv @ model.params["fuse_v_w"].T + model.params["fuse_v_b"]
    if model.kind == "neuralcd":
        return sigmoid(fv)
    if model.kind == "irt":
        beta = fv @ model.params["beta_w"] + model.params["beta_b"]
        return sigmoid(beta)
    b = fv @ model.params["bscal_w"] + model.params["bscal_b"]
    return sigmoid(b)


def format_recommendation_table(rec: RecommendationList) -> str:
    """Aligned table: question id, predicted probability, mastery %, difficulty %."""
    headers = ["question_id", "bucket", "pred_prob", "mastery_pct", "difficulty_pct"]
    body = [
        [r.question_id, r.bucket, f"{r.predicted_prob:.4f}", f"{r.mastery_pct:.2f}",
         f"{r.difficulty_pct:.2f}"]
        for r in rec.items
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(b[i].ljust(widths[i]) for i in range(len(headers))))
    if rec.deficit_filled:
        lines.append("note: one outcome bucket was smaller than x/2; deficit filled "
                     "from the other bucket")
    return "\n".join(lines) + "\n"
