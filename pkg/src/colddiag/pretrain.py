"""Stage 1: pre-train the diagnostic model over all source domains while
decoupling each student state into a shared and a specific part.

Two head layers (shared across domains, same input and output width) split a
raw per-domain student embedding u into

    shared(u)   = tanh(Ws u + bs)      transferable across domains
    specific(u) = tanh(Wp u + bp)      deliberately not transferable

and the pre-training objective is the sum of two regularizers evaluated on
mini-batches:

    loss_shared    per source domain k: mean squared residual of predictions
                   that use the domain-k shared state on a broad cross-domain
                   sample, MINUS lambda_adv times the same error restricted to
                   domain k itself.
    loss_specific  per source domain k: mean over domain-k logs of the squared
                   residual using the domain-k specific state, MINUS lambda_adv
                   times the mean residual obtained by swapping in the
                   student's specific states from the other domains.

Both terms use means rather than raw sums so that lambda_adv stays comparable
across corpus sizes, and the negated terms are weighted by lambda_adv so the
bounded residuals cannot drive the objective to -inf.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .data import DomainDataset, PracticeLog
from .embed import EmbeddingTable, build_table, fnv1a64
from .errors import DataValidationError, NumericError
from .models import DiagnosticModel, backward_batch, forward_batch, init_model, project_monotone
from .optim import Adam

log = logging.getLogger(__name__)

# Per source domain: (broad cross-domain sample, within-domain sample).
DecoupleBatch = Mapping[str, tuple[Sequence[PracticeLog], Sequence[PracticeLog]]]

PredictFn = Callable[[str, PracticeLog], float]
HasStateFn = Callable[[str, str], bool]


@dataclass
class DecoupleHeads:
    """The two dense F -> F heads, shared across every domain."""

    dim: int
    params: dict[str, np.ndarray]

    def copy(self) -> "DecoupleHeads":
        return DecoupleHeads(self.dim, {k: v.copy() for k, v in self.params.items()})


def init_heads(dim: int, seed: int) -> DecoupleHeads:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEC0]))
    a = np.sqrt(6.0 / (2 * dim))
    return DecoupleHeads(
        dim=dim,
        params={
            "shared_w": rng.uniform(-a, a, size=(dim, dim)),
            "shared_b": np.zeros(dim),
            "specific_w": rng.uniform(-a, a, size=(dim, dim)),
            "specific_b": np.zeros(dim),
        },
    )


def decouple(heads: DecoupleHeads, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a raw student vector into (shared, specific) states."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (heads.dim,):
        raise DataValidationError(f"expected a vector of dim {heads.dim}, got shape {u.shape}")
    p = heads.params
    shared = np.tanh(p["shared_w"] @ u + p["shared_b"])
    specific = np.tanh(p["specific_w"] @ u + p["specific_b"])
    return shared, specific


def decouple_rows(heads: DecoupleHeads, rows: np.ndarray, kind: str) -> np.ndarray:
    p = heads.params
    w, b = (p["shared_w"], p["shared_b"]) if kind == "shared" else (p["specific_w"], p["specific_b"])
    return np.tanh(rows @ w.T + b)


def loss_shared(
    batch: DecoupleBatch,
    predict_fn: PredictFn,
    has_state: HasStateFn,
    lambda_adv: float,
) -> float:
    """Shared-state regularizer on one sampled batch.

    predict_fn(state_domain, log) must return the probability predicted for the
    log's (question, concepts) using the log's student's *shared* state from
    ``state_domain``. Logs whose student has no state in ``state_domain`` are
    skipped from that domain's means.
    """
    if not batch:
        raise DataValidationError("empty decouple batch")
    total = 0.0
    for k, (broad, within) in sorted(batch.items()):
        broad_sq = [
            (log.score - predict_fn(k, log)) ** 2
            for log in broad
            if has_state(k, log.student_id)
        ]
        within_sq = [
            (log.score - predict_fn(k, log)) ** 2
            for log in within
            if has_state(k, log.student_id)
        ]
        if not broad_sq or not within_sq:
            raise DataValidationError(f"domain {k!r}: empty sample in decouple batch")
        total += float(np.mean(broad_sq)) - lambda_adv * float(np.mean(within_sq))
    return total


def loss_specific(
    batch: DecoupleBatch,
    predict_fn: PredictFn,
    has_state: HasStateFn,
    lambda_adv: float,
) -> float:
    """Specific-state regularizer on one sampled batch.

    Uses each domain's within-domain sample. For every log, the adversarial
    part averages the squared residual obtained by swapping in the student's
    specific states from the other source domains (skipped entirely when the
    student exists nowhere else, and in the single-domain case).
    """
    if not batch:
        raise DataValidationError("empty decouple batch")
    domains = sorted(batch)
    total = 0.0
    for k in domains:
        within = batch[k][1]
        if not within:
            raise DataValidationError(f"domain {k!r}: empty within-domain sample")
        term = 0.0
        for logrec in within:
            own = (logrec.score - predict_fn(k, logrec)) ** 2
            other_sq = [
                (logrec.score - predict_fn(i, logrec)) ** 2
                for i in domains
                if i != k and has_state(i, logrec.student_id)
            ]
            adv = lambda_adv * float(np.mean(other_sq)) if other_sq else 0.0
            term += own - adv
        total += term / len(within)
    return total


@dataclass
class PretrainedBundle:
    """Frozen output of stage 1: model, heads, embeddings, decoupled states."""

    model: DiagnosticModel
    heads: DecoupleHeads
    embeddings: dict[str, EmbeddingTable]
    shared_states: dict[str, dict[str, np.ndarray]]  # student -> domain -> vector
    specific_states: dict[str, dict[str, np.ndarray]]
    meta: dict

    def source_domains(self) -> list[str]:
        return sorted(d for d, entry in self.meta["registry"].items() if entry["role"] == "source")

    def predictor(self, kind: str) -> tuple[PredictFn, HasStateFn]:
        """Real (predict_fn, has_state) closures over the stored states."""
        states = self.shared_states if kind == "shared" else self.specific_states

        def predict_fn(state_domain: str, logrec: PracticeLog) -> float:
            u = states[logrec.student_id][state_domain]
            table = self.embeddings[logrec.domain_id]
            v = table.question_vecs[table.question_index[logrec.question_id]]
            mask = table.masks[table.question_index[logrec.question_id]]
            padded = np.zeros(self.model.n_concepts)
            padded[: mask.shape[0]] = mask
            yhat, _ = forward_batch(
                self.model, u[None, :], v[None, :], table.concept_mean(), padded[None, :]
            )
            return float(yhat[0])

        def has_state(state_domain: str, student_id: str) -> bool:
            return state_domain in states.get(student_id, {})

        return predict_fn, has_state

    def loss_shared(self, batch: DecoupleBatch, lambda_adv: float | None = None) -> float:
        lam = self.meta["lambda_adv"] if lambda_adv is None else lambda_adv
        return loss_shared(batch, *self.predictor("shared"), lam)

    def loss_specific(self, batch: DecoupleBatch, lambda_adv: float | None = None) -> float:
        lam = self.meta["lambda_adv"] if lambda_adv is None else lambda_adv
        return loss_specific(batch, *self.predictor("specific"), lam)


# ---------------------------------------------------------------------------
# Trainer internals
# ---------------------------------------------------------------------------


@dataclass
class _DomainLogs:
    """Column view of one domain's logs plus per-state-domain row lookups."""

    domain_id: str
    q_rows: np.ndarray  # (N,) rows into the domain's question_vecs
    y: np.ndarray  # (N,) responses as float
    student_ids: list[str]
    # state domain -> (defined bool mask (N,), student rows in that domain (N,))
    rows_in: dict[str, tuple[np.ndarray, np.ndarray]]
    n_other: np.ndarray  # (N,) count of OTHER source domains holding the student


def _index_logs(
    logs: Sequence[PracticeLog],
    table: EmbeddingTable,
    tables: dict[str, EmbeddingTable],
    source_ids: list[str],
) -> _DomainLogs:
    q_rows = np.array([table.question_index[l.question_id] for l in logs], dtype=np.int64)
    y = np.array([float(l.score) for l in logs])
    student_ids = [l.student_id for l in logs]
    rows_in = {}
    for k in source_ids:
        idx = tables[k].student_index
        defined = np.array([sid in idx for sid in student_ids], dtype=bool)
        rows = np.array([idx.get(sid, 0) for sid in student_ids], dtype=np.int64)
        rows_in[k] = (defined, rows)
    n_other = np.zeros(len(logs), dtype=np.int64)
    for k in source_ids:
        if k != table.domain_id:
            n_other += rows_in[k][0]
    return _DomainLogs(
        domain_id=table.domain_id,
        q_rows=q_rows,
        y=y,
        student_ids=student_ids,
        rows_in=rows_in,
        n_other=n_other,
    )


class _Trainer:
    """Single-owner mutable training state for stage 1."""

    def __init__(self, sources: list[DomainDataset], tables: dict[str, EmbeddingTable],
                 model: DiagnosticModel, heads: DecoupleHeads, config: RunConfig):
        self.source_ids = sorted(d.domain_id for d in sources)
        self.tables = tables
        self.model = model
        self.heads = heads
        self.lam = config.lambda_adv
        self.padded_masks = {
            d: self._pad(tables[d].masks, model.n_concepts) for d in tables
        }
        self.cbars = {d: tables[d].concept_mean() for d in tables}
        self.params: dict[str, np.ndarray] = {}
        for name, arr in model.params.items():
            self.params[f"model.{name}"] = arr
        for name, arr in heads.params.items():
            self.params[f"heads.{name}"] = arr
        for d in self.source_ids:
            self.params[f"emb.{d}.students"] = tables[d].student_vecs

    @staticmethod
    def _pad(masks: np.ndarray, width: int) -> np.ndarray:
        if masks.shape[1] == width:
            return masks
        out = np.zeros((masks.shape[0], width))
        out[:, : masks.shape[1]] = masks
        return out

    def _zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    def _accumulate_group(
        self,
        grads: dict[str, np.ndarray] | None,
        state_domain: str,
        state_kind: str,
        log_domain: str,
        u_rows: np.ndarray,
        q_rows: np.ndarray,
        y: np.ndarray,
        weights: np.ndarray,
    ) -> float:
        """Forward (and backward, when grads is given) one (state domain,
        log domain) group; returns its weighted loss contribution."""
        table_state = self.tables[state_domain]
        table_log = self.tables[log_domain]
        raw = table_state.student_vecs[u_rows]
        states = decouple_rows(self.heads, raw, state_kind)
        v = table_log.question_vecs[q_rows]
        masks = self.padded_masks[log_domain][q_rows]
        yhat, cache = forward_batch(self.model, states, v, self.cbars[log_domain], masks)
        value = float(np.sum(weights * (y - yhat) ** 2))
        if grads is None:
            return value
        pgrads, du = backward_batch(self.model, cache, y, weights)
        for name, g in pgrads.items():
            grads[f"model.{name}"] += g
        pre = du * (1.0 - states * states)
        w_name, b_name = (
            ("heads.shared_w", "heads.shared_b")
            if state_kind == "shared"
            else ("heads.specific_w", "heads.specific_b")
        )
        grads[w_name] += pre.T @ raw
        grads[b_name] += pre.sum(axis=0)
        head_w = self.params[w_name]
        np.add.at(grads[f"emb.{state_domain}.students"], u_rows, pre @ head_w)
        return value

    def step_grads(
        self,
        batch_by_domain: dict[str, tuple[np.ndarray, _DomainLogs]],
        compute_grads: bool = True,
    ) -> tuple[dict[str, np.ndarray] | None, float]:
        """Gradients of loss_shared + loss_specific over one sampled batch.

        batch_by_domain maps log domain -> (local indices, full _DomainLogs).
        The broad sample for every state domain is the whole batch; the within
        sample is the batch's domain-k slice, mirroring the loss functions.
        """
        grads = self._zero_grads() if compute_grads else None
        total = 0.0

        # loss_shared: one group per (state domain k, log domain i)
        for k in self.source_ids:
            n_broad = sum(
                int(dl.rows_in[k][0][idx].sum()) for idx, dl in batch_by_domain.values()
            )
            within = batch_by_domain.get(k)
            n_within = len(within[0]) if within is not None else 0
            if n_broad == 0 or n_within == 0:
                continue
            for i, (idx, dl) in sorted(batch_by_domain.items()):
                defined, rows = dl.rows_in[k]
                sel = idx[defined[idx]]
                if sel.size == 0:
                    continue
                w = np.full(sel.size, 1.0 / n_broad)
                if i == k:
                    w -= self.lam / n_within
                total += self._accumulate_group(
                    grads, k, "shared", i, rows[sel], dl.q_rows[sel], dl.y[sel], w
                )

        # loss_specific: one group per (log domain k, state domain i)
        for k, (idx, dl) in sorted(batch_by_domain.items()):
            n_k = idx.size
            if n_k == 0:
                continue
            for i in self.source_ids:
                defined, rows = dl.rows_in[i]
                if i == k:
                    sel = idx
                    w = np.full(sel.size, 1.0 / n_k)
                else:
                    ok = defined[idx] & (dl.n_other[idx] > 0)
                    sel = idx[ok]
                    if sel.size == 0:
                        continue
                    w = -self.lam / (n_k * dl.n_other[sel].astype(np.float64))
                total += self._accumulate_group(
                    grads, i, "specific", k, rows[sel], dl.q_rows[sel], dl.y[sel], w
                )
        return grads, total


def _leave_two_split(
    dataset: DomainDataset, rng: np.random.Generator
) -> tuple[list[PracticeLog], list[PracticeLog]]:
    """Hold out two seeded-random logs per student (students with >= 3 logs)."""
    by_student: dict[str, list[int]] = {}
    for i, logrec in enumerate(dataset.logs):
        by_student.setdefault(logrec.student_id, []).append(i)
    held = set()
    for sid in sorted(by_student):
        idxs = by_student[sid]
        if len(idxs) >= 3:
            held.update(rng.choice(idxs, size=2, replace=False).tolist())
    train = [l for i, l in enumerate(dataset.logs) if i not in held]
    val = [l for i, l in enumerate(dataset.logs) if i in held]
    return train, val


def pretrain(
    corpus: list[DomainDataset],
    config: RunConfig,
    corpus_digest: str | None = None,
) -> PretrainedBundle:
    """Run the decoupled pre-training stage and freeze the result.

    The corpus may include the target dataset: its questions size the shared
    concept width and its embedding table rides along in the bundle, but only
    source-domain logs are trained on. Fully deterministic per (config, seed).
    """
    config.validate()
    sources = [d for d in corpus if d.role == "source"]
    if not sources:
        raise DataValidationError("pretraining needs at least one source domain")
    for d in sources:
        if not d.logs:
            raise DataValidationError(f"source domain {d.domain_id!r} has no logs")

    tables = {d.domain_id: build_table(d, config.dim, config.seed) for d in corpus}
    k_max = max(t.n_concepts for t in tables.values())
    model = init_model(config.cdm, config.dim, k_max, config.hidden, config.seed)
    project_monotone(model)
    heads = init_heads(config.dim, config.seed)
    trainer = _Trainer(sources, tables, model, heads, config)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7274]))
    train_logs: dict[str, list[PracticeLog]] = {}
    val_logs: dict[str, list[PracticeLog]] = {}
    for d in sorted(sources, key=lambda s: s.domain_id):
        train_logs[d.domain_id], val_logs[d.domain_id] = _leave_two_split(d, rng)

    indexed = {
        d: _index_logs(train_logs[d], tables[d], tables, trainer.source_ids)
        for d in trainer.source_ids
    }
    pool = [(d, i) for d in trainer.source_ids for i in range(len(train_logs[d]))]

    adam = Adam(lr=config.lr)
    best_val = np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    bad_epochs = 0

    val_indexed = {
        d: _index_logs(val_logs[d], tables[d], tables, trainer.source_ids)
        for d in trainer.source_ids
        if val_logs[d]
    }
    val_batch = {
        d: (np.arange(len(val_logs[d]), dtype=np.int64), dl) for d, dl in val_indexed.items()
    }

    def validation_loss() -> float:
        if not val_batch:
            return np.nan
        _, value = trainer.step_grads(val_batch, compute_grads=False)
        return value

    for epoch in range(config.epochs_pretrain):
        order = rng.permutation(len(pool))
        for start in range(0, len(order), config.batch_size):
            chosen = order[start : start + config.batch_size]
            by_domain: dict[str, list[int]] = {}
            for j in chosen:
                d, i = pool[j]
                by_domain.setdefault(d, []).append(i)
            batch = {
                d: (np.array(sorted(ix), dtype=np.int64), indexed[d])
                for d, ix in by_domain.items()
            }
            grads, value = trainer.step_grads(batch)
            if not np.isfinite(value):
                raise NumericError(
                    f"pretraining diverged at epoch {epoch}: non-finite batch loss "
                    f"(lr={config.lr}, lambda_adv={config.lambda_adv})"
                )
            adam.step(trainer.params, grads)
            project_monotone(model)

        val = validation_loss()
        log.info("pretrain epoch %d: validation decoupling loss %.6f", epoch, val)
        if np.isnan(val):
            continue
        if val < best_val - 1e-9:
            best_val = val
            best_snapshot = {k: v.copy() for k, v in trainer.params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                log.info("pretrain early stop after epoch %d", epoch)
                break

    if best_snapshot is not None:
        for name, arr in trainer.params.items():
            arr[...] = best_snapshot[name]

    shared_states: dict[str, dict[str, np.ndarray]] = {}
    specific_states: dict[str, dict[str, np.ndarray]] = {}
    for d in trainer.source_ids:
        table = tables[d]
        for sid in sorted(table.student_index):
            sh, sp = decouple(heads, table.student_vecs[table.student_index[sid]])
            shared_states.setdefault(sid, {})[d] = sh
            specific_states.setdefault(sid, {})[d] = sp

    registry = {}
    for d in corpus:
        table = tables[d.domain_id]
        registry[d.domain_id] = {
            "role": d.role,
            "students": sorted(table.student_index, key=table.student_index.get),
            "questions": sorted(table.question_index, key=table.question_index.get),
            "concepts": sorted(table.concept_index, key=table.concept_index.get),
            "masks": table.masks.astype(int).tolist(),
        }
    meta = {
        "seed": config.seed,
        "dim": config.dim,
        "cdm": config.cdm,
        "hidden": list(config.hidden),
        "lambda_adv": config.lambda_adv,
        "lr": config.lr,
        "batch_size": config.batch_size,
        "epochs_pretrain": config.epochs_pretrain,
        "patience": config.patience,
        "n_concepts": k_max,
        "registry": registry,
        "corpus_digest": corpus_digest,
        "config_digest": config.digest(),
    }
    return PretrainedBundle(
        model=model,
        heads=heads,
        embeddings=tables,
        shared_states=shared_states,
        specific_states=specific_states,
        meta=meta,
    )


def _live_predictor(trainer: _Trainer, kind: str) -> tuple[PredictFn, HasStateFn]:
    """Predictor closures over the trainer's current (non-frozen) parameters."""

    def predict_fn(state_domain: str, logrec: PracticeLog) -> float:
        table_state = trainer.tables[state_domain]
        row = table_state.student_index[logrec.student_id]
        u = decouple_rows(trainer.heads, table_state.student_vecs[row][None, :], kind)
        table_log = trainer.tables[logrec.domain_id]
        q_row = table_log.question_index[logrec.question_id]
        v = table_log.question_vecs[q_row][None, :]
        masks = trainer.padded_masks[logrec.domain_id][q_row][None, :]
        yhat, _ = forward_batch(trainer.model, u, v, trainer.cbars[logrec.domain_id], masks)
        return float(yhat[0])

    def has_state(state_domain: str, student_id: str) -> bool:
        return student_id in trainer.tables[state_domain].student_index

    return predict_fn, has_state
