"""Energy-penalized infomax objective and its minimization.

The objective averaged over stimuli is

    Q = < -0.5 * ln det G(x) + lambda * sum_k rho_k fhat_k(x) >_x

It is convex in the density ``rho`` for fixed tuning, so training alternates
stochastic Adam steps on weights/thresholds with an exact projected-Newton
solve for ``rho`` every ``density_update_period`` iterations.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .infotheory import (InfoConfig, NotPositiveDefiniteError, evaluation_set, fisher_basis,
                         score_vectors)
from .model import DensityVector, MotionModel, as_density
from .mt import MTParams
from .snapshot import ModelSnapshot

log = logging.getLogger(__name__)


class DensityConvergenceError(RuntimeError):
    def __init__(self, density, residual, iterations):
        self.density = density
        self.residual = residual
        super().__init__(f"density optimization stopped after {iterations} iterations "
                         f"with KKT residual {residual:.3g}")


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, trace):
        self.trace = trace
        super().__init__(message)


@dataclass(frozen=True)
class TrainConfig:
    lambda_energy: float = 10.0
    minibatch_size: int = 64
    max_iters: int = 20_000
    step_size: float = 0.01
    step_decay_iters: float = 5_000.0
    seed: int = 0
    density_update_period: int = 200
    convergence_tol: float = 0.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lambda_energy >= 0:
            raise ValueError("lambda_energy must be >= 0")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.step_size > 0 or not self.step_decay_iters > 0:
            raise ValueError("step_size and step_decay_iters must be positive")
        if self.density_update_period < 1:
            raise ValueError("density_update_period must be >= 1")
        if not self.convergence_tol >= 0:
            raise ValueError("convergence_tol must be >= 0")

    def step_at(self, iteration: int) -> float:
        """Inverse-time decay of the base step size."""
        return self.step_size / (1.0 + iteration / self.step_decay_iters)


@dataclass
class Gradients:
    weights: np.ndarray
    thresholds: np.ndarray
    rho: np.ndarray


@dataclass
class TrainTrace:
    iteration: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    logdet_part: list = field(default_factory=list)
    energy_part: list = field(default_factory=list)
    step: list = field(default_factory=list)
    density_sums: list = field(default_factory=list)
    density_mins: list = field(default_factory=list)

    def record(self, it, q, logdet, energy, step, rho):
        self.iteration.append(it)
        self.Q.append(q)
        self.logdet_part.append(logdet)
        self.energy_part.append(energy)
        self.step.append(step)
        self.density_sums.append(float(rho.sum()))
        self.density_mins.append(float(rho.min()))

    def __len__(self):
        return len(self.iteration)

    def smoothed_Q(self, window=50) -> np.ndarray:
        q = np.asarray(self.Q)
        if len(q) < window:
            return q.copy()
        return np.convolve(q, np.ones(window) / window, mode="valid")

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["iter", "Q", "logdet_part", "energy_part", "step"])
        for row in zip(self.iteration, self.Q, self.logdet_part, self.energy_part, self.step):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return out.getvalue()


# ---------------------------------------------------------------------------
# objective and gradients

def _weights(counts):
    counts = np.asarray(counts, dtype=float)
    return counts / counts.sum()


def _objective_terms(mt: MTParams, rho, X, wts, info: InfoConfig, lam, need_grad, basis=None):
    """Weighted objective on V1 responses X (B, M); optionally its gradients.

    Reverse-mode differentiation written out by hand through
    ``h_k = (2/sqrt(c)) (d_k w_k - (f_k/c) v)``, ``v = W^T (f*d)``, followed
    by the optional change of coordinates ``h_k @ basis``.
    """
    W, b, A = mt.weights, mt.thresholds, mt.gain_A
    N, gamma = info.n_population, info.gamma_reg
    u = X @ W.T - b
    f = A * expit(u)
    d = f * (1.0 - f / A)
    c = (f * f).sum(axis=1, keepdims=True) + mt.norm_eps
    fh = f * f / c
    fd = f * d
    v = fd @ W
    alpha = 2.0 / np.sqrt(c)
    beta = f / c
    core = d[:, :, None] * W[None] - beta[:, :, None] * v[:, None, :]
    H0 = alpha[:, :, None] * core
    mask = (fh >= info.rate_floor).astype(float)
    H = H0 * mask[:, :, None]
    if basis is not None:
        H = H @ basis
    G = N * np.einsum("bkm,k,bkn->bmn", H, rho, H) + gamma * np.eye(H.shape[2])
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        for i, Gi in enumerate(G):
            try:
                np.linalg.cholesky(Gi)
            except np.linalg.LinAlgError:
                raise NotPositiveDefiniteError(i) from None
        raise
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    logdet_part = float(wts @ (-0.5 * logdet))
    energy_part = float(lam * (wts @ (fh @ rho)))
    Q = logdet_part + energy_part
    if not need_grad:
        return Q, logdet_part, energy_part, None

    # P h_k for every type, via the Cholesky factor
    PH = np.linalg.solve(G, np.swapaxes(H, 1, 2))   # (B, M, K)
    PH = np.swapaxes(PH, 1, 2)                        # (B, K, M)
    quad = np.einsum("bkm,bkm->bk", H, PH)
    g_rho = wts @ (-0.5 * N * quad + lam * fh)

    wb = wts[:, None]
    Hbar = (-N * rho)[None, :, None] * PH * (mask * wb)[:, :, None]
    H0bar = Hbar if basis is None else Hbar @ basis.T
    fhbar = lam * rho[None, :] * wb

    gW = np.einsum("bk,bkm->km", alpha * d, H0bar)
    dbar = alpha * np.einsum("bkm,km->bk", H0bar, W)
    vbar = -alpha * np.einsum("bk,bkm->bm", beta, H0bar)
    betabar = -alpha * np.einsum("bkm,bm->bk", H0bar, v)
    alphabar = np.einsum("bkm,bkm->b", H0bar, core)[:, None]
    gW += fd.T @ vbar
    t = vbar @ W.T
    fbar = d * t + betabar / c + fhbar * 2.0 * f / c
    dbar += f * t
    cbar = (-(betabar * f).sum(axis=1, keepdims=True) / c**2
            - alphabar * alpha / (2.0 * c)
            - (fhbar * f * f).sum(axis=1, keepdims=True) / c**2)
    fbar += 2.0 * f * cbar
    fbar += dbar * (1.0 - 2.0 * f / A)
    ubar = fbar * d
    gW += ubar.T @ X
    gb = -ubar.sum(axis=0)
    return Q, logdet_part, energy_part, Gradients(gW, gb, g_rho)


def objective_Q(model: MotionModel, density, info: InfoConfig, batch, lambda_energy=10.0):
    """``(Q, logdet_part, energy_part)`` averaged over ``batch``."""
    density = as_density(density)
    X, counts = evaluation_set(model, batch)
    Q, ld, en, _ = _objective_terms(model.mt, density.rho, X, _weights(counts), info,
                                    lambda_energy, False, fisher_basis(model, info))
    return Q, ld, en


def grad_Q(model: MotionModel, density, info: InfoConfig, batch, lambda_energy=10.0) -> Gradients:
    """Analytic gradient of :func:`objective_Q` w.r.t. weights, thresholds and rho.

    ``rho`` is differentiated as an unconstrained vector; the simplex
    constraint is handled by the density solver.
    """
    density = as_density(density)
    X, counts = evaluation_set(model, batch)
    return _objective_terms(model.mt, density.rho, X, _weights(counts), info,
                            lambda_energy, True, fisher_basis(model, info))[3]


# ---------------------------------------------------------------------------
# density problem

def project_simplex(v) -> DensityVector:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("projection needs a nonempty finite vector")
    return DensityVector(_project(v))


def _project(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    r = np.nonzero(u - css / ks > 0)[0][-1]
    p = np.maximum(v - css[r] / (r + 1), 0.0)
    # remove the last ulp-level drift in the sum without breaking nonnegativity
    s = p.sum()
    if s != 1.0:
        j = int(np.argmax(p))
        p[j] = max(p[j] + (1.0 - s), 0.0)
    return p


class _DensityProblem:
    """Q as a function of rho alone, with tuning (hence score vectors) frozen."""

    def __init__(self, mt, X, wts, info, lam, basis=None):
        _, fh, H, _ = score_vectors(mt, X, info.rate_floor, basis)
        self.H = H
        self.wts = wts
        self.fh_mean = wts @ fh
        self.N = info.n_population
        self.gamma = info.gamma_reg
        self.lam = lam
        self.K = mt.k_cells
        self.eye = np.eye(H.shape[-1])

    def evaluate(self, rho, order=0):
        G = self.N * np.einsum("bkm,k,bkn->bmn", self.H, rho, self.H) + self.gamma * self.eye
        L = np.linalg.cholesky(G)
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        q = float(self.wts @ (-0.5 * logdet) + self.lam * rho @ self.fh_mean)
        if order == 0:
            return q
        PH = np.linalg.solve(G, np.swapaxes(self.H, 1, 2))
        C = self.H @ PH                                   # (B, K, K): h_k^T P h_l
        grad = -0.5 * self.N * (self.wts @ np.diagonal(C, axis1=1, axis2=2)) + self.lam * self.fh_mean
        if order == 1:
            return q, grad
        hess = 0.5 * self.N**2 * np.einsum("b,bkl->kl", self.wts, C * C)
        return q, grad, 0.5 * (hess + hess.T)

    def logdet_mean(self, rho):
        G = self.N * np.einsum("bkm,k,bkn->bmn", self.H, rho, self.H) + self.gamma * self.eye
        return float(self.wts @ np.linalg.slogdet(G)[1])


def _kkt(rho, grad):
    mu = float(rho @ grad)
    slack = np.maximum(mu - grad, 0.0)
    return float(max(np.max(rho * np.abs(grad - mu)), np.max(slack)))


def _solve_qp_simplex(grad, hess, rho, iters=5000):
    """min_z grad.(z - rho) + 0.5 (z - rho)^T hess (z - rho) over the simplex (FISTA)."""
    L = float(np.linalg.eigvalsh(hess)[-1])
    if not L > 0:
        return _project(rho - grad)
    z = rho.copy()
    y = z.copy()
    t = 1.0
    for _ in range(iters):
        z_new = _project(y - (grad + hess @ (y - rho)) / L)
        if np.max(np.abs(z_new - z)) < 1e-15:
            z = z_new
            break
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t = z_new, t_new
    return z


def _minimize_density(problem: _DensityProblem, rho, tol=1e-6, max_iter=100):
    """Projected Newton with Armijo backtracking. Returns (rho, Q, kkt, iters)."""
    rho = _project(np.asarray(rho, dtype=float))
    if problem.K == 1:
        return rho, problem.evaluate(rho), 0.0, 0
    q, grad, hess = problem.evaluate(rho, order=2)
    res = _kkt(rho, grad)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        z = _solve_qp_simplex(grad, hess, rho)
        step = z - rho
        slope = float(grad @ step)
        if slope >= 0:
            # Newton model gave no descent; fall back to a projected gradient arc
            z = _project(rho - grad / max(float(np.linalg.eigvalsh(hess)[-1]), 1e-12))
            step = z - rho
            slope = float(grad @ step)
            if slope >= 0:
                break
        # log-det roundoff is ~1e-10 relative; don't let it veto a Newton step
        noise = 1e-9 * max(1.0, abs(q))
        s = 1.0
        while True:
            cand = _project(rho + s * step)
            q_new = problem.evaluate(cand)
            if q_new <= q + 1e-4 * s * slope + noise or s < 1e-10:
                break
            s *= 0.5
        if q_new > q + noise:
            break
        rho = cand
        q, grad, hess = problem.evaluate(rho, order=2)
        res = _kkt(rho, grad)
    return rho, q, res, it


def optimize_density(model: MotionModel, info: InfoConfig, batch, init=None,
                     lambda_energy=10.0, tol=1e-6, max_iter=100) -> DensityVector:
    """Optimal subpopulation density for fixed tuning curves.

    Raises :class:`DensityConvergenceError` if the KKT residual is still
    above ``tol`` after ``max_iter`` Newton steps.
    """
    if info.gamma_reg <= 0:
        raise ValueError("density optimization needs gamma_reg > 0")
    X, counts = evaluation_set(model, batch)
    problem = _DensityProblem(model.mt, X, _weights(counts), info, lambda_energy,
                               fisher_basis(model, info))
    init = DensityVector.uniform(model.k_cells) if init is None else as_density(init)
    rho, _, res, it = _minimize_density(problem, init.rho, tol, max_iter)
    out = DensityVector(rho)
    if res > tol:
        raise DensityConvergenceError(out, res, it)
    return out


def kkt_residual(model: MotionModel, density, info: InfoConfig, batch, lambda_energy=10.0) -> float:
    """Largest violation of stationarity / complementary slackness on the simplex.

    With ``mu = sum_k rho_k dQ/drho_k`` the optimality conditions are
    ``rho_k (dQ/drho_k - mu) = 0`` and ``dQ/drho_k >= mu``.
    """
    density = as_density(density)
    if len(density) == 1:
        return 0.0
    X, counts = evaluation_set(model, batch)
    problem = _DensityProblem(model.mt, X, _weights(counts), info, lambda_energy,
                               fisher_basis(model, info))
    _, grad = problem.evaluate(density.rho, order=1)
    return _kkt(density.rho, grad)


def density_log_det(model: MotionModel, density, info: InfoConfig, batch) -> float:
    """``< ln det(J(rho) + gamma I) >`` over the batch; concave in rho."""
    X, counts = evaluation_set(model, batch)
    problem = _DensityProblem(model.mt, X, _weights(counts), info, 0.0, fisher_basis(model, info))
    return problem.logdet_mean(as_density(density).rho)


# ---------------------------------------------------------------------------
# training

_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8


def train(config: TrainConfig, model: MotionModel, batch, info: InfoConfig,
          density=None, checkpoint=None, provenance=None):
    """Minimize Q over weights/thresholds with periodic exact density solves.

    Every iteration takes one Adam step on a minibatch drawn uniformly from
    ``batch``, then records the full-batch objective at the new parameters.
    ``checkpoint(snapshot)`` is called every ``config.checkpoint_every``
    iterations when both are set.

    Returns ``(ModelSnapshot, TrainTrace)``.
    """
    if len(batch) == 0:
        raise ValueError("training batch is empty")
    provenance = dict(provenance or {})
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    density = DensityVector.uniform(model.k_cells) if density is None else as_density(density)
    X_all, counts = evaluation_set(model, batch)
    w_all = _weights(counts)
    basis = fisher_basis(model, info)
    row_to_unique = batch.unique_index()
    lam = config.lambda_energy

    mt = model.mt
    W = np.array(mt.weights)
    b = np.array(mt.thresholds)
    rho = np.array(density.rho)
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    trace = TrainTrace()

    def snapshot(it):
        prov = dict(provenance, iteration=it, seed=config.seed)
        return ModelSnapshot(model.with_mt(mt.replace(weights=W.copy(), thresholds=b.copy())),
                             DensityVector(rho.copy()), prov)

    q, ld, en, _ = _objective_terms(mt, rho, X_all, w_all, info, lam, False, basis)
    trace.record(0, q, ld, en, 0.0, rho)
    last_density_q = q
    mb_weights = np.full(config.minibatch_size, 1.0 / config.minibatch_size)

    for it in range(1, config.max_iters + 1):
        rows = row_to_unique[rng.integers(0, len(batch), size=config.minibatch_size)]
        cur = mt.replace(weights=W, thresholds=b)
        _, _, _, grads = _objective_terms(cur, rho, X_all[rows], mb_weights, info, lam, True, basis)
        step = config.step_at(it - 1)
        mW = _ADAM_B1 * mW + (1 - _ADAM_B1) * grads.weights
        vW = _ADAM_B2 * vW + (1 - _ADAM_B2) * grads.weights**2
        mb = _ADAM_B1 * mb + (1 - _ADAM_B1) * grads.thresholds
        vb = _ADAM_B2 * vb + (1 - _ADAM_B2) * grads.thresholds**2
        c1 = 1 - _ADAM_B1**it
        c2 = 1 - _ADAM_B2**it
        W = W - step * (mW / c1) / (np.sqrt(vW / c2) + _ADAM_EPS)
        b = b - step * (mb / c1) / (np.sqrt(vb / c2) + _ADAM_EPS)
        cur = mt.replace(weights=W, thresholds=b)

        if it % config.density_update_period == 0 or it == config.max_iters:
            problem = _DensityProblem(cur, X_all, w_all, info, lam, basis)
            rho_new, _, res, _ = _minimize_density(problem, rho)
            if res > 1e-6:
                log.warning("iteration %d: density solve ended with KKT residual %.3g", it, res)
            rho = rho_new

        q, ld, en, _ = _objective_terms(cur, rho, X_all, w_all, info, lam, False, basis)
        trace.record(it, q, ld, en, step, rho)
        if not math.isfinite(q):
            raise TrainingDivergedError(f"objective became non-finite at iteration {it}", trace)
        if it >= 500:
            ref = trace.Q[it - 500]
            if q - ref > 10.0 * max(abs(ref), 1e-12):
                raise TrainingDivergedError(
                    f"objective rose from {ref:.6g} to {q:.6g} over 500 iterations", trace)
        if config.checkpoint_every and checkpoint is not None and it % config.checkpoint_every == 0:
            checkpoint(snapshot(it))
        if config.convergence_tol and it % config.density_update_period == 0:
            if abs(last_density_q - q) <= config.convergence_tol * max(abs(q), 1e-12):
                break
            last_density_q = q

    if config.max_iters == 0:
        return ModelSnapshot(model, density, dict(provenance, iteration=0, seed=config.seed)), trace
    return snapshot(trace.iteration[-1]), trace
