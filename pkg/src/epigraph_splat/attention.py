"""Multi-head self-attention over each anchor's neighbor tokens.

For anchor ``i`` the k rows of the aggregated feature tensor are the tokens.
They are projected to the model width with ``W_in``, split into H heads,
and attended with scores

    q_j . k_j' / sqrt(D / H)  +  w_theta[h] . gamma(theta_ij') + b_theta[h]

so the angular encoding of the *key* token biases every query's logit for
that key.  Head outputs are concatenated, projected by ``W_o`` and averaged
over the k tokens.  Row-vector convention throughout: ``y = x @ W``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, NonFiniteInputError
from .graph import AggregatedFeatures, EncodedAngles

PARAM_NAMES = ("W_in", "W_q", "W_k", "W_v", "W_o", "w_theta", "b_theta")


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    model_dim: int
    input_dim: int
    encoding_dim: int
    seed: int = 0

    def __post_init__(self):
        for name in ("heads", "model_dim", "input_dim", "encoding_dim"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass(frozen=True, eq=False)
class AttentionParams:
    W_in: np.ndarray  # (2F, D)
    W_q: np.ndarray  # (H, D/H, D/H)
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray  # (D, D)
    w_theta: np.ndarray  # (H, 2L)
    b_theta: np.ndarray  # (H,)

    @property
    def heads(self) -> int:
        return self.W_q.shape[0]

    @property
    def model_dim(self) -> int:
        return self.W_o.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> AttentionParams:
        return AttentionParams(**{**self.arrays(), **changes})


@dataclass(frozen=True, eq=False)
class AttentionGradients:
    W_in: np.ndarray
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    w_theta: np.ndarray
    b_theta: np.ndarray
    agg: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class RefinedFeatures:
    values: np.ndarray  # (M, D)


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: AttentionConfig) -> AttentionParams:
    rng = np.random.default_rng(config.seed)
    D, H, dh = config.model_dim, config.heads, config.head_dim
    return AttentionParams(
        W_in=_glorot(rng, (config.input_dim, D), config.input_dim, D),
        W_q=_glorot(rng, (H, dh, dh), dh, dh),
        W_k=_glorot(rng, (H, dh, dh), dh, dh),
        W_v=_glorot(rng, (H, dh, dh), dh, dh),
        W_o=_glorot(rng, (D, D), D, D),
        w_theta=np.zeros((H, config.encoding_dim)),
        b_theta=np.zeros(H),
    )


def _values(x):
    return x.values if isinstance(x, (AggregatedFeatures, EncodedAngles)) else np.asarray(x, dtype=np.float64)


def _check_finite(name, a):
    bad = ~np.isfinite(a)
    if bad.any():
        raise NonFiniteInputError(name, np.argwhere(bad)[0])


def _validate(X, E, params: AttentionParams):
    if X.ndim != 3 or E.ndim != 3 or X.shape[:2] != E.shape[:2]:
        raise ContractError(f"agg {X.shape} and enc {E.shape} must be (M, k, *) with equal M, k")
    H, D = params.heads, params.model_dim
    dh = D // H
    expected = {
        "W_in": (X.shape[2], D),
        "W_q": (H, dh, dh),
        "W_k": (H, dh, dh),
        "W_v": (H, dh, dh),
        "W_o": (D, D),
        "w_theta": (H, E.shape[2]),
        "b_theta": (H,),
    }
    for name, shape in expected.items():
        got = getattr(params, name).shape
        if got != shape:
            raise ContractError(f"{name} has shape {got}, expected {shape}")
    _check_finite("agg", X)
    _check_finite("enc", E)
    for name, arr in params.arrays().items():
        _check_finite(name, arr)


def _forward(X, E, p: AttentionParams):
    M, k, _ = X.shape
    H, D = p.heads, p.model_dim
    dh = D // H
    scale = 1.0 / np.sqrt(dh)
    T = X @ p.W_in  # (M, k, D)
    Th = T.reshape(M, k, H, dh).transpose(0, 2, 1, 3)  # (M, H, k, dh)
    Q = np.einsum("mhkd,hde->mhke", Th, p.W_q)
    K = np.einsum("mhkd,hde->mhke", Th, p.W_k)
    V = np.einsum("mhkd,hde->mhke", Th, p.W_v)
    bias = np.einsum("mlc,hc->mhl", E, p.w_theta) + p.b_theta[None, :, None]
    S = np.einsum("mhjd,mhld->mhjl", Q, K) * scale + bias[:, :, None, :]
    S = S - S.max(axis=-1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=-1, keepdims=True)
    Oh = np.einsum("mhjl,mhld->mhjd", A, V)
    O = Oh.transpose(0, 2, 1, 3).reshape(M, k, D)
    Y = O @ p.W_o
    cache = dict(X=X, E=E, Th=Th, Q=Q, K=K, V=V, A=A, O=O, scale=scale)
    return Y.mean(axis=1), cache


def attention_weights(agg, enc, params: AttentionParams) -> np.ndarray:
    """Row-softmax attention weights, shape (M, H, k, k)."""
    X, E = _values(agg), _values(enc)
    _validate(X, E, params)
    return _forward(X, E, params)[1]["A"]


def attention_forward(agg, enc, params: AttentionParams) -> RefinedFeatures:
    X, E = _values(agg), _values(enc)
    _validate(X, E, params)
    return RefinedFeatures(_forward(X, E, params)[0])


def attention_backward(agg, enc, params: AttentionParams, upstream) -> AttentionGradients:
    """Gradients of ``sum(upstream * f_g)`` for every parameter and for ``agg``."""
    X, E = _values(agg), _values(enc)
    _validate(X, E, params)
    G = np.asarray(upstream, dtype=np.float64)
    M, k, _ = X.shape
    H, D = params.heads, params.model_dim
    dh = D // H
    if G.shape != (M, D):
        raise ContractError(f"upstream must have shape {(M, D)}, got {G.shape}")
    _, c = _forward(X, E, params)
    Th, Q, K, V, A, O, scale = (c[n] for n in ("Th", "Q", "K", "V", "A", "O", "scale"))

    dY = np.broadcast_to(G[:, None, :] / k, (M, k, D))
    dW_o = np.einsum("mkd,mke->de", O, dY)
    dOh = (dY @ params.W_o.T).reshape(M, k, H, dh).transpose(0, 2, 1, 3)
    dA = np.einsum("mhjd,mhld->mhjl", dOh, V)
    dV = np.einsum("mhjl,mhjd->mhld", A, dOh)
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True))
    dbias = dS.sum(axis=2)  # (M, H, k): summed over queries
    dw_theta = np.einsum("mhl,mlc->hc", dbias, E)
    db_theta = dbias.sum(axis=(0, 2))
    dQ = np.einsum("mhjl,mhld->mhjd", dS, K) * scale
    dK = np.einsum("mhjl,mhjd->mhld", dS, Q) * scale
    dW_q = np.einsum("mhkd,mhke->hde", Th, dQ)
    dW_k = np.einsum("mhkd,mhke->hde", Th, dK)
    dW_v = np.einsum("mhkd,mhke->hde", Th, dV)
    dTh = (
        np.einsum("mhke,hde->mhkd", dQ, params.W_q)
        + np.einsum("mhke,hde->mhkd", dK, params.W_k)
        + np.einsum("mhke,hde->mhkd", dV, params.W_v)
    )
    dT = dTh.transpose(0, 2, 1, 3).reshape(M, k, D)
    dW_in = np.einsum("mki,mkd->id", X, dT)
    dX = dT @ params.W_in.T
    return AttentionGradients(dW_in, dW_q, dW_k, dW_v, dW_o, dw_theta, db_theta, dX)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps structurally-zero gradients (for instance ``b_theta``,
    which shifts every logit of a row equally and cancels in the softmax)
    from turning rounding noise into a large relative error.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_difference_gradients(agg, enc, params: AttentionParams, upstream, step: float = 1e-5):
    """Central-difference gradients of ``sum(upstream * f_g)``; same keys as AttentionGradients."""
    X, E = _values(agg), _values(enc)
    G = np.asarray(upstream, dtype=np.float64)

    def objective(Xv, p):
        return float(np.sum(G * _forward(Xv, E, p)[0]))

    out = {}
    base = params.arrays()
    for name, arr in base.items():
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus = arr.copy()
            minus = arr.copy()
            plus[idx] += step
            minus[idx] -= step
            grad[idx] = (
                objective(X, params.replace(**{name: plus}))
                - objective(X, params.replace(**{name: minus}))
            ) / (2 * step)
        out[name] = grad
    # f_g[m] depends only on anchor m's tokens, so one entry (j, c) can be
    # perturbed in every anchor at once and read back per anchor
    def per_anchor(Xv):
        return np.sum(G * _forward(Xv, E, params)[0], axis=1)

    gX = np.zeros_like(X)
    for j, col in np.ndindex(X.shape[1:]):
        plus = X.copy()
        minus = X.copy()
        plus[:, j, col] += step
        minus[:, j, col] -= step
        gX[:, j, col] = (per_anchor(plus) - per_anchor(minus)) / (2 * step)
    out["agg"] = gX
    return out


def gradient_check(agg, enc, params: AttentionParams, upstream, step: float = 1e-5) -> dict[str, float]:
    """Max relative error of the analytic backward pass per tensor, plus ``"max"``."""
    analytic = attention_backward(agg, enc, params, upstream).arrays()
    numeric = finite_difference_gradients(agg, enc, params, upstream, step)
    report = {name: float(np.max(relative_error(analytic[name], numeric[name]), initial=0.0)) for name in analytic}
    report["max"] = max(report.values())
    return report
