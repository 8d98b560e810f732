"""Scoring: ACC / AUC / RMSE, the Random lower reference, and the Oracle upper
reference trained directly on target logs.

AUC is the Mann-Whitney pair statistic (ties credited 0.5), computed through
average ranks, which agrees exactly with brute-force pair counting because all
intermediate sums are half-integers representable in float64.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import RunConfig
from .data import DomainDataset, PracticeLog
from .embed import build_table
from .errors import DataValidationError
from .models import init_model, project_monotone
from .training import fit_student_rows, predict_rows


@dataclass
class EvalReport:
    acc: float
    auc: float
    rmse: float
    n_logs: int
    cohort: str = "all"
    config_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _check_pairs(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise DataValidationError(f"preds/labels shape mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise DataValidationError("empty prediction list")
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise DataValidationError("labels must be 0 or 1")
    return p, y


def acc(preds, labels) -> float:
    """Fraction of correct hard calls under the (pred >= 0.5 -> 1) convention."""
    p, y = _check_pairs(preds, labels)
    return float(np.mean((p >= 0.5).astype(np.float64) == y))


def auc(preds, labels) -> float:
    """Mann-Whitney concordance: (concordant + 0.5 * tied) / (pos * neg)."""
    p, y = _check_pairs(preds, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataValidationError("AUC undefined: needs at least one positive and one negative")
    order = np.argsort(p, kind="mergesort")
    sorted_p = p[order]
    ranks = np.empty(y.size, dtype=np.float64)
    i = 0
    while i < y.size:
        j = i + 1
        while j < y.size and sorted_p[j] == sorted_p[i]:
            j += 1
        ranks[order[i:j]] = (i + 1 + j) / 2.0  # average rank over the tie group
        i = j
    rank_sum_pos = float(ranks[y == 1.0].sum())
    u_stat = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def auc_bruteforce(preds, labels) -> float:
    """O(n^2) pair-counting oracle for the rank-based implementation."""
    p, y = _check_pairs(preds, labels)
    pos = p[y == 1.0]
    neg = p[y == 0.0]
    if pos.size == 0 or neg.size == 0:
        raise DataValidationError("AUC undefined: needs at least one positive and one negative")
    wins = 0.0
    for a in pos:
        wins += float(np.sum(a > neg)) + 0.5 * float(np.sum(a == neg))
    return wins / (pos.size * neg.size)


def rmse(preds, labels) -> float:
    p, y = _check_pairs(preds, labels)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def score_all(preds, labels, n_logs: int | None = None, cohort: str = "all",
              config_digest: str = "") -> EvalReport:
    p, y = _check_pairs(preds, labels)
    return EvalReport(
        acc=acc(p, y),
        auc=auc(p, y),
        rmse=rmse(p, y),
        n_logs=int(p.size) if n_logs is None else n_logs,
        cohort=cohort,
        config_digest=config_digest,
    )


def random_baseline(logs: list[PracticeLog], seed: int, cohort: str = "all",
                    config_digest: str = "") -> EvalReport:
    """Score seeded Uniform(0,1) predictions against the logs' labels."""
    if not logs:
        raise DataValidationError("random baseline needs at least one log")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0A4D]))
    preds = rng.uniform(0.0, 1.0, size=len(logs))
    labels = np.array([float(l.score) for l in logs])
    return score_all(preds, labels, cohort=cohort, config_digest=config_digest)


def oracle_mode(
    target: DomainDataset,
    cdm_kind: str,
    split_fractions: tuple[float, float, float],
    seed: int,
    config: RunConfig | None = None,
) -> EvalReport:
    """Upper reference: train a plain (non-decoupled) model on real target logs.

    Target logs are split into train/validation/test by the given fractions
    (which must sum to 1); the report carries test-set metrics.
    """
    if abs(sum(split_fractions) - 1.0) > 1e-9:
        raise DataValidationError(f"split fractions must sum to 1, got {split_fractions}")
    if min(split_fractions) < 0:
        raise DataValidationError("split fractions must be nonnegative")
    cfg = config or RunConfig(cdm=cdm_kind, seed=seed)
    n = len(target.logs)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    if n_train < 1 or n - n_train - n_val < 1:
        raise DataValidationError("target log set too small for the requested split")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x04AC1E]))
    order = rng.permutation(n)
    train_idx = order[:n_train]
    val_idx = order[n_train : n_train + n_val]
    test_idx = order[n_train + n_val :]

    table = build_table(target, cfg.dim, seed)
    model = init_model(cdm_kind, cfg.dim, table.n_concepts, cfg.hidden, seed)
    project_monotone(model)

    sid_rows = np.array(
        [table.student_index[l.student_id] for l in target.logs], dtype=np.int64
    )
    q_rows = np.array([table.question_index[l.question_id] for l in target.logs], dtype=np.int64)
    y = np.array([float(l.score) for l in target.logs])

    fit_idx = np.concatenate([train_idx, val_idx])
    val_fraction = val_idx.size / fit_idx.size if fit_idx.size else 0.0
    u_matrix, fitted = fit_student_rows(
        model, table, table.student_vecs,
        sid_rows[fit_idx], q_rows[fit_idx], y[fit_idx],
        trainable_rows=np.arange(table.student_vecs.shape[0]),
        lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs_pretrain,
        seed=seed, val_fraction=val_fraction, patience=cfg.patience, train_model=True,
    )
    preds = predict_rows(fitted, table, u_matrix, sid_rows[test_idx], q_rows[test_idx])
    return score_all(preds, y[test_idx], cohort="all", config_digest=cfg.digest())


def format_report_table(rows: dict[str, EvalReport]) -> str:
    """Aligned plain-text table, one row per named report."""
    headers = ["method", "cohort", "n_logs", "acc", "auc", "rmse"]
    lines = []
    body = []
    for name in rows:
        r = rows[name]
        body.append([
            name, r.cohort, str(r.n_logs), f"{r.acc:.4f}", f"{r.auc:.4f}", f"{r.rmse:.4f}",
        ])
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)))
    lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    for b in body:
        lines.append("  ".join(b[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines) + "\n"
