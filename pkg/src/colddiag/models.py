"""Diagnostic functions: forward prediction, analytic gradients, monotonicity.

All three kinds share one front end. A pair of fusion layers projects the
student and question vectors, each concatenated with its concept-mean
modulation, onto a concept-space of width K:

    fu = Wu @ [u ; cbar * u] + bu        fv = Wv @ [v ; cbar * v] + bv

with cbar the mean row of the active domain's concept matrix. The head then
differs per kind:

    irt        yhat = sigmoid(theta - beta)            theta, beta scalar projections of fu, fv
    mirt       yhat = sigmoid(<th, a> - b)             th = sigmoid(fu), a = softplus(fv), b scalar
    neuralcd   yhat = sigmoid(w3 . tanh(W2 tanh(W1 x0)))  x0 = mask * (sigmoid(fu) - sigmoid(fv))

K is a fixed width shared by every domain (the maximum concept count in the
registry); domains with fewer concepts enter through zero-padded masks. The
neuralcd interaction weights are clamped elementwise nonnegative after every
optimizer step, which together with the odd hidden activations makes the
predicted probability non-decreasing in every mastery component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError

KINDS = ("irt", "mirt", "neuralcd")

# Names of the interaction-net weight matrices clamped by project_monotone.
_MONOTONE_PARAMS = ("inter_w1", "inter_w2", "inter_w3")


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out[0])
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class Prediction:
    probability: float
    mastery: np.ndarray | None = None
    difficulty: np.ndarray | None = None


@dataclass
class DiagnosticModel:
    """Parameter container for one diagnostic function."""

    kind: str
    dim: int  # F, embedding width
    n_concepts: int  # K, shared concept-space width
    hidden: tuple[int, int]
    params: dict[str, np.ndarray]

    def copy(self) -> "DiagnosticModel":
        return DiagnosticModel(
            kind=self.kind,
            dim=self.dim,
            n_concepts=self.n_concepts,
            hidden=self.hidden,
            params={k: v.copy() for k, v in self.params.items()},
        )


def init_model(
    kind: str,
    dim: int,
    n_concepts: int,
    hidden: tuple[int, int] = (512, 256),
    seed: int = 0,
) -> DiagnosticModel:
    """Seeded parameter init: symmetric Glorot for fusion and heads, nonnegative
    Glorot for the monotone interaction weights."""
    if kind not in KINDS:
        raise DataValidationError(f"unknown diagnostic kind {kind!r}, expected one of {KINDS}")
    if dim < 1 or n_concepts < 1:
        raise DataValidationError(f"dim and n_concepts must be positive, got {dim}, {n_concepts}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, KINDS.index(kind)]))

    def glorot(n_out: int, n_in: int) -> np.ndarray:
        a = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-a, a, size=(n_out, n_in))

    def glorot_nonneg(n_out: int, n_in: int) -> np.ndarray:
        a = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(0.0, a, size=(n_out, n_in))

    k, f = n_concepts, dim
    params: dict[str, np.ndarray] = {
        "fuse_u_w": glorot(k, 2 * f),
        "fuse_u_b": np.zeros(k),
        "fuse_v_w": glorot(k, 2 * f),
        "fuse_v_b": np.zeros(k),
    }
    if kind == "irt":
        params["theta_w"] = glorot(1, k)[0]
        params["theta_b"] = np.zeros(())
        params["beta_w"] = glorot(1, k)[0]
        params["beta_b"] = np.zeros(())
    elif kind == "mirt":
        params["bscal_w"] = glorot(1, k)[0]
        params["bscal_b"] = np.zeros(())
    else:
        h1, h2 = hidden
        params["inter_w1"] = glorot_nonneg(h1, k)
        params["inter_b1"] = np.zeros(h1)
        params["inter_w2"] = glorot_nonneg(h2, h1)
        params["inter_b2"] = np.zeros(h2)
        params["inter_w3"] = glorot_nonneg(1, h2)[0]
        params["inter_b3"] = np.zeros(())
    return DiagnosticModel(kind=kind, dim=dim, n_concepts=n_concepts, hidden=hidden, params=params)


def _check_inputs(model: DiagnosticModel, u: np.ndarray, v: np.ndarray, concepts: np.ndarray,
                  mask: np.ndarray) -> None:
    if u.shape != (model.dim,) or v.shape != (model.dim,):
        raise DataValidationError(
            f"student/question vectors must have shape ({model.dim},), "
            f"got {u.shape} and {v.shape}"
        )
    if concepts.ndim != 2 or concepts.shape[1] != model.dim:
        raise DataValidationError(
            f"concept matrix must be (K, {model.dim}), got {concepts.shape}"
        )
    if mask.shape != (concepts.shape[0],):
        raise DataValidationError(
            f"mask length {mask.shape} does not match concept count {concepts.shape[0]}"
        )
    if concepts.shape[0] > model.n_concepts:
        raise DataValidationError(
            f"domain has {concepts.shape[0]} concepts but the model is sized for "
            f"{model.n_concepts}"
        )
    for name, arr in (("u", u), ("v", v), ("concepts", concepts), ("mask", mask)):
        if not np.all(np.isfinite(arr)):
            raise DataValidationError(f"non-finite values in input {name!r}")


def _pad_mask(mask: np.ndarray, width: int) -> np.ndarray:
    if mask.shape[0] == width:
        return np.asarray(mask, dtype=np.float64)
    out = np.zeros(width, dtype=np.float64)
    out[: mask.shape[0]] = mask
    return out


def forward_batch(
    model: DiagnosticModel,
    u_rows: np.ndarray,
    v_rows: np.ndarray,
    cbar: np.ndarray,
    masks: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Vectorized forward pass over a batch sharing one concept mean.

    u_rows, v_rows: (B, F); masks: (B, K) already padded to model width.
    Returns (yhat, cache) where cache feeds backward_batch.
    """
    p = model.params
    uu = np.concatenate([u_rows, u_rows * cbar], axis=1)
    vv = np.concatenate([v_rows, v_rows * cbar], axis=1)
    fu = uu @ p["fuse_u_w"].T + p["fuse_u_b"]
    fv = vv @ p["fuse_v_w"].T + p["fuse_v_b"]
    cache: dict = {"uu": uu, "vv": vv, "fu": fu, "fv": fv, "cbar": cbar, "masks": masks}

    if model.kind == "irt":
        theta = fu @ p["theta_w"] + p["theta_b"]
        beta = fv @ p["beta_w"] + p["beta_b"]
        z = theta - beta
    elif model.kind == "mirt":
        th = sigmoid(fu)
        a = softplus(fv)
        b = fv @ p["bscal_w"] + p["bscal_b"]
        z = np.einsum("bk,bk->b", th, a) - b
        cache.update(th=th, a=a)
    else:
        pu = sigmoid(fu)
        dv = sigmoid(fv)
        x0 = masks * (pu - dv)
        t1 = np.tanh(x0 @ p["inter_w1"].T + p["inter_b1"])
        t2 = np.tanh(t1 @ p["inter_w2"].T + p["inter_b2"])
        z = t2 @ p["inter_w3"] + p["inter_b3"]
        cache.update(pu=pu, dv=dv, x0=x0, t1=t1, t2=t2)

    yhat = sigmoid(z)
    cache["yhat"] = yhat
    return yhat, cache


def backward_batch(
    model: DiagnosticModel,
    cache: dict,
    y: np.ndarray,
    weights: np.ndarray,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of sum_i weights_i * (y_i - yhat_i)^2.

    Returns (param_grads, du_rows) where du_rows is (B, F), the per-sample
    gradient with respect to the student vector. Question and concept inputs
    are frozen by contract, so no gradients flow to them.
    """
    p = model.params
    yhat = cache["yhat"]
    dz = weights * 2.0 * (yhat - y) * yhat * (1.0 - yhat)

    grads: dict[str, np.ndarray] = {}
    if model.kind == "irt":
        fu, fv = cache["fu"], cache["fv"]
        grads["theta_w"] = fu.T @ dz
        grads["theta_b"] = np.asarray(dz.sum())
        grads["beta_w"] = fv.T @ (-dz)
        grads["beta_b"] = np.asarray(-dz.sum())
        dfu = np.outer(dz, p["theta_w"])
        dfv = np.outer(-dz, p["beta_w"])
    elif model.kind == "mirt":
        fu, fv = cache["fu"], cache["fv"]
        th, a = cache["th"], cache["a"]
        dth = dz[:, None] * a
        da = dz[:, None] * th
        db = -dz
        grads["bscal_w"] = fv.T @ db
        grads["bscal_b"] = np.asarray(db.sum())
        dfu = dth * th * (1.0 - th)
        dfv = da * sigmoid(fv) + db[:, None] * p["bscal_w"]
    else:
        t1, t2, x0 = cache["t1"], cache["t2"], cache["x0"]
        pu, dv = cache["pu"], cache["dv"]
        grads["inter_w3"] = t2.T @ dz
        grads["inter_b3"] = np.asarray(dz.sum())
        dt2 = np.outer(dz, p["inter_w3"]) * (1.0 - t2 * t2)
        grads["inter_w2"] = dt2.T @ t1
        grads["inter_b2"] = dt2.sum(axis=0)
        dt1 = (dt2 @ p["inter_w2"]) * (1.0 - t1 * t1)
        grads["inter_w1"] = dt1.T @ x0
        grads["inter_b1"] = dt1.sum(axis=0)
        dx0 = dt1 @ p["inter_w1"]
        dfu = dx0 * cache["masks"] * pu * (1.0 - pu)
        dfv = -dx0 * cache["masks"] * dv * (1.0 - dv)

    uu, vv, cbar = cache["uu"], cache["vv"], cache["cbar"]
    grads["fuse_u_w"] = dfu.T @ uu
    grads["fuse_u_b"] = dfu.sum(axis=0)
    grads["fuse_v_w"] = dfv.T @ vv
    grads["fuse_v_b"] = dfv.sum(axis=0)

    f = model.dim
    wu = p["fuse_u_w"]
    du_rows = dfu @ wu[:, :f] + (dfu @ wu[:, f:]) * cbar
    return grads, du_rows


def predict(
    model: DiagnosticModel,
    u: np.ndarray,
    v: np.ndarray,
    concepts: np.ndarray,
    mask: np.ndarray,
) -> Prediction:
    """Predict the correctness probability for one (student, question) pair.

    ``concepts`` is the active domain's concept matrix; ``mask`` its
    concept-relevance row for the question (length = domain concept count).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    concepts = np.asarray(concepts, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_inputs(model, u, v, concepts, mask)
    k_local = concepts.shape[0]
    cbar = concepts.mean(axis=0)
    masks = _pad_mask(mask, model.n_concepts)[None, :]
    yhat, cache = forward_batch(model, u[None, :], v[None, :], cbar, masks)

    if model.kind == "irt":
        theta = float(cache["fu"][0] @ model.params["theta_w"] + model.params["theta_b"])
        beta = float(cache["fv"][0] @ model.params["beta_w"] + model.params["beta_b"])
        mastery = np.array([sigmoid(theta)])
        difficulty = np.array([sigmoid(beta)])
    elif model.kind == "mirt":
        mastery = cache["th"][0, :k_local]
        b = float(cache["fv"][0] @ model.params["bscal_w"] + model.params["bscal_b"])
        difficulty = np.array([sigmoid(b)])
    else:
        mastery = cache["pu"][0, :k_local]
        difficulty = cache["dv"][0, :k_local]
    return Prediction(probability=float(yhat[0]), mastery=mastery, difficulty=difficulty)


def loss(
    model: DiagnosticModel,
    u: np.ndarray,
    v: np.ndarray,
    concepts: np.ndarray,
    mask: np.ndarray,
    y: float,
) -> float:
    """Squared residual (y - yhat)^2, bounded in [0, 1]."""
    if not 0.0 <= float(y) <= 1.0:
        raise DataValidationError(f"response must lie in [0, 1], got {y}")
    pred = predict(model, u, v, concepts, mask)
    return float((float(y) - pred.probability) ** 2)


def grad(
    model: DiagnosticModel,
    u: np.ndarray,
    v: np.ndarray,
    concepts: np.ndarray,
    mask: np.ndarray,
    y: float,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Analytic gradients of the squared residual w.r.t. (u, model parameters)."""
    if not 0.0 <= float(y) <= 1.0:
        raise DataValidationError(f"response must lie in [0, 1], got {y}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    concepts = np.asarray(concepts, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    _check_inputs(model, u, v, concepts, mask)
    cbar = concepts.mean(axis=0)
    masks = _pad_mask(mask, model.n_concepts)[None, :]
    _, cache = forward_batch(model, u[None, :], v[None, :], cbar, masks)
    grads, du_rows = backward_batch(model, cache, np.array([float(y)]), np.ones(1))
    return du_rows[0], grads


def predict_from_mastery(
    model: DiagnosticModel,
    mastery: np.ndarray | float,
    v: np.ndarray,
    concepts: np.ndarray,
    mask: np.ndarray,
) -> float:
    """Probability as a function of an explicit mastery level.

    For irt, ``mastery`` is the scalar trait theta; for mirt and neuralcd it is
    the full K-wide mastery vector. Used by the monotonicity checks, which
    perturb mastery directly.
    """
    v = np.asarray(v, dtype=np.float64)
    concepts = np.asarray(concepts, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    p = model.params
    cbar = concepts.mean(axis=0)
    vv = np.concatenate([v, v * cbar])
    fv = p["fuse_v_w"] @ vv + p["fuse_v_b"]
    if model.kind == "irt":
        beta = float(fv @ p["beta_w"] + p["beta_b"])
        return float(sigmoid(float(mastery) - beta))
    mastery = np.asarray(mastery, dtype=np.float64)
    if mastery.shape != (model.n_concepts,):
        raise DataValidationError(
            f"mastery must have shape ({model.n_concepts},), got {mastery.shape}"
        )
    if model.kind == "mirt":
        a = softplus(fv)
        b = float(fv @ p["bscal_w"] + p["bscal_b"])
        return float(sigmoid(float(mastery @ a) - b))
    dv = sigmoid(fv)
    x0 = _pad_mask(mask, model.n_concepts) * (mastery - dv)
    t1 = np.tanh(p["inter_w1"] @ x0 + p["inter_b1"])
    t2 = np.tanh(p["inter_w2"] @ t1 + p["inter_b2"])
    return float(sigmoid(float(p["inter_w3"] @ t2 + p["inter_b3"])))


def project_monotone(model: DiagnosticModel) -> DiagnosticModel:
    """Clamp interaction-net weights elementwise to >= 0 (idempotent).

    irt and mirt are structurally monotone in their traits, so this is a no-op
    for them.
    """
    if model.kind == "neuralcd":
        for name in _MONOTONE_PARAMS:
            np.maximum(model.params[name], 0.0, out=model.params[name])
    return model
