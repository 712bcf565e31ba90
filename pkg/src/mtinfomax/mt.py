"""Model MT layer: sigmoid responses, squared divisive normalization, input Jacobian.

All functions accept a single V1 response vector of shape (M,) or a batch of
shape (B, M); outputs gain the same leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True, eq=False)
class MTParams:
    weights: np.ndarray     # (K, M)
    thresholds: np.ndarray  # (K,)
    gain_A: float = 1.0
    norm_eps: float = 0.1

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.thresholds, dtype=float)
        if w.ndim != 2:
            raise ValueError("weights must be a (K, M) matrix")
        if b.shape != (w.shape[0],):
            raise ValueError("need one threshold per MT cell")
        if not self.gain_A > 0 or not self.norm_eps > 0:
            raise ValueError("gain_A and norm_eps must be positive")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "thresholds", b)

    @property
    def k_cells(self) -> int:
        return self.weights.shape[0]

    @property
    def m_inputs(self) -> int:
        return self.weights.shape[1]

    def replace(self, **changes) -> "MTParams":
        fields = dict(weights=self.weights, thresholds=self.thresholds,
                      gain_A=self.gain_A, norm_eps=self.norm_eps)
        fields.update(changes)
        return MTParams(**fields)

    def permuted(self, order) -> "MTParams":
        order = np.asarray(order)
        return self.replace(weights=self.weights[order], thresholds=self.thresholds[order])

    def __eq__(self, other):
        if not isinstance(other, MTParams):
            return NotImplemented
        return (self.gain_A == other.gain_A and self.norm_eps == other.norm_eps
                and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.thresholds, other.thresholds))


def init_mt_params(k_cells: int, m_inputs: int, rng: np.random.Generator,
                   gain_A=1.0, norm_eps=0.1) -> MTParams:
    """Gaussian weights with std ``1/sqrt(M)``, zero thresholds."""
    w = rng.standard_normal((k_cells, m_inputs)) / np.sqrt(m_inputs)
    return MTParams(w, np.zeros(k_cells), gain_A, norm_eps)


@dataclass(frozen=True)
class MTActivations:
    raw: np.ndarray
    normalized: np.ndarray
    jacobian: np.ndarray | None = None


def _check_input(params, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.m_inputs:
        raise ValueError(f"V1 response has length {x.shape[-1]}, MT weights expect {params.m_inputs}")
    return x


def mt_raw(params: MTParams, x) -> np.ndarray:
    """``f_k = A / (1 + exp(-w_k.x + b_k))``."""
    x = _check_input(params, x)
    return params.gain_A * expit(x @ params.weights.T - params.thresholds)


def mt_normalized(params: MTParams, f) -> np.ndarray:
    """``f_k**2 / (sum_k' f_k'**2 + eps)``."""
    f = np.asarray(f, dtype=float)
    sq = f * f
    return sq / (sq.sum(axis=-1, keepdims=True) + params.norm_eps)


def _jacobian_from_raw(params, f):
    A = params.gain_A
    d = f * (1.0 - f / A)                       # df_k/du_k
    c = (f * f).sum(axis=-1, keepdims=True) + params.norm_eps
    fh = f * f / c
    # dfh_k/dx = (2/c) * (f_k d_k w_k - fh_k * sum_j f_j d_j w_j)
    v = (f * d) @ params.weights                # (..., M)
    return (2.0 / c)[..., None] * (
        (f * d)[..., :, None] * params.weights - fh[..., :, None] * v[..., None, :])


def mt_jacobian(params: MTParams, x) -> np.ndarray:
    """``d fhat / d x``, shape (K, M) or (B, K, M)."""
    x = _check_input(params, x)
    return _jacobian_from_raw(params, mt_raw(params, x))


def mt_activations(params: MTParams, x, with_jacobian=False) -> MTActivations:
    f = mt_raw(params, x)
    jac = _jacobian_from_raw(params, f) if with_jacobian else None
    return MTActivations(f, mt_normalized(params, f), jac)
