"""Generic squared-residual fitting over (student-row, question, response)
triples against a fixed embedding table.

Used by the stage-2 fine-tunes (which train only selected student rows while
the model stays frozen) and by the oracle reference mode (which trains both
the rows and the model). Deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from .embed import EmbeddingTable
from .errors import NumericError
from .models import DiagnosticModel, backward_batch, forward_batch, project_monotone
from .optim import Adam


def pad_masks(masks: np.ndarray, width: int) -> np.ndarray:
    if masks.shape[1] == width:
        return masks
    out = np.zeros((masks.shape[0], width))
    out[:, : masks.shape[1]] = masks
    return out


def predict_rows(
    model: DiagnosticModel,
    table: EmbeddingTable,
    u_matrix: np.ndarray,
    u_rows: np.ndarray,
    q_rows: np.ndarray,
) -> np.ndarray:
    """Batched probabilities for (student row, question row) pairs in one domain."""
    masks = pad_masks(table.masks, model.n_concepts)
    yhat, _ = forward_batch(
        model,
        u_matrix[u_rows],
        table.question_vecs[q_rows],
        table.concept_mean(),
        masks[q_rows],
    )
    return yhat


def fit_student_rows(
    model: DiagnosticModel,
    table: EmbeddingTable,
    u_matrix: np.ndarray,
    u_rows: np.ndarray,
    q_rows: np.ndarray,
    y: np.ndarray,
    trainable_rows: np.ndarray,
    *,
    lr: float,
    batch_size: int,
    epochs: int,
    seed: int,
    val_fraction: float = 0.0,
    patience: int = 5,
    train_model: bool = False,
) -> tuple[np.ndarray, DiagnosticModel]:
    """Minimize the mean squared residual over the given triples.

    Only rows listed in ``trainable_rows`` of ``u_matrix`` are updated; all
    other rows are returned bit-identical. With ``train_model`` the model
    parameters train too (oracle mode) and the monotone projection runs after
    every step. Returns (new u_matrix, new model); inputs are not mutated.
    """
    u_matrix = u_matrix.copy()
    model = model.copy()
    if epochs <= 0 or u_rows.size == 0:
        return u_matrix, model

    trainable_rows = np.asarray(sorted(set(int(r) for r in trainable_rows)), dtype=np.int64)
    row_pos = {int(r): i for i, r in enumerate(trainable_rows)}
    sub = u_matrix[trainable_rows].copy()

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF17]))
    n = u_rows.size
    order = rng.permutation(n)
    n_val = int(round(val_fraction * n)) if val_fraction > 0 else 0
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    if train_idx.size == 0:
        return u_matrix, model

    params: dict[str, np.ndarray] = {"rows": sub}
    if train_model:
        for name, arr in model.params.items():
            params[f"model.{name}"] = arr
    adam = Adam(lr=lr)

    masks_all = pad_masks(table.masks, model.n_concepts)
    cbar = table.concept_mean()
    v_all = table.question_vecs

    # Map each sample to its slot in the trainable sub-matrix (-1 = frozen row).
    slot = np.array([row_pos.get(int(r), -1) for r in u_rows], dtype=np.int64)

    def eval_loss(idx: np.ndarray) -> float:
        u_matrix[trainable_rows] = sub
        yhat, _ = forward_batch(
            model, u_matrix[u_rows[idx]], v_all[q_rows[idx]], cbar, masks_all[q_rows[idx]]
        )
        return float(np.mean((y[idx] - yhat) ** 2))

    best_val = np.inf
    best_state: dict[str, np.ndarray] | None = None
    bad = 0

    for epoch in range(epochs):
        perm = rng.permutation(train_idx.size)
        for start in range(0, perm.size, batch_size):
            sel = train_idx[perm[start : start + batch_size]]
            u_matrix[trainable_rows] = sub
            yhat, cache = forward_batch(
                model, u_matrix[u_rows[sel]], v_all[q_rows[sel]], cbar, masks_all[q_rows[sel]]
            )
            weights = np.full(sel.size, 1.0 / sel.size)
            value = float(np.sum(weights * (y[sel] - yhat) ** 2))
            if not np.isfinite(value):
                raise NumericError(f"fine-tune diverged at epoch {epoch} (lr={lr})")
            pgrads, du = backward_batch(model, cache, y[sel], weights)
            grads: dict[str, np.ndarray] = {"rows": np.zeros_like(sub)}
            sample_slots = slot[sel]
            live = sample_slots >= 0
            np.add.at(grads["rows"], sample_slots[live], du[live])
            if train_model:
                for name, g in pgrads.items():
                    grads[f"model.{name}"] = g
            adam.step(params, grads)
            if train_model:
                project_monotone(model)

        if n_val > 0:
            val = eval_loss(val_idx)
            if val < best_val - 1e-12:
                best_val = val
                best_state = {k: v.copy() for k, v in params.items()}
                bad = 0
            else:
                bad += 1
                if bad >= patience:
                    break

    if best_state is not None:
        for name, arr in params.items():
            arr[...] = best_state[name]
    u_matrix[trainable_rows] = sub
    return u_matrix, model
