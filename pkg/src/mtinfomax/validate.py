"""Oracle suites: independent numerical checks of the analytic machinery.

Each suite returns a :class:`SuiteResult` with the worst measured error and
the tolerance it was held to. ``run_suites`` runs the whole set at a given
level ("fast" finishes in well under two minutes; "full" uses 10^6 Monte
Carlo trials for the Fisher check).
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .infotheory import (InfoConfig, evaluation_set, fisher_basis, fisher_matrix,
                         mc_fisher_validate)
from .model import DensityVector, MotionModel
from .mt import MTParams, mt_jacobian, mt_normalized, mt_raw
from .optimizer import (_objective_terms, _weights, density_log_det, grad_Q, kkt_residual,
                        objective_Q, optimize_density, project_simplex)
from .stimulus import DirectionGrid, sample_training_set
from .v1 import V1Params

LEVELS = ("fast", "full")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"suite={self.name} status={status} measured={self.measured:.3e} "
                f"tolerance={self.tolerance:.1e} seconds={self.seconds:.2f}"
                + (f" detail={self.detail}" if self.detail else ""))


def _random_mt(rng, m, k, scale=2.0):
    W = rng.normal(0.0, scale / np.sqrt(m), size=(k, m))
    b = rng.normal(0.0, 0.5, size=k)
    return MTParams(W, b, gain_A=float(rng.uniform(0.5, 2.0)), norm_eps=float(rng.uniform(0.05, 0.5)))


def _random_density(rng, k):
    return DensityVector(project_simplex(rng.dirichlet(np.ones(k))).rho)


def _small_problem(rng, n_dirs=12, m=6, k=3, n_single=40, n_bidir=20):
    grid = DirectionGrid(n_dirs)
    model = MotionModel(grid, V1Params(m), _random_mt(rng, m, k))
    batch = sample_training_set(grid, n_single, n_bidir, int(rng.integers(2**31)))
    return model, batch


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def central_difference(fun, x, step):
    """Central finite-difference Jacobian of ``fun`` (vector -> array) at ``x``."""
    x = np.asarray(x, dtype=float)
    base = np.asarray(fun(x))
    out = np.empty(base.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = step
        out[(Ellipsis,) + idx] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step)
    return out


@_timed
def suite_jacobian_fd(n_models=100, seed=0, tol=1e-6, step=1e-5, jacobian=mt_jacobian):
    """Analytic d fhat/dx against central differences on random models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        m = int(rng.integers(4, 25))
        k = int(rng.integers(2, 13))
        mt = _random_mt(rng, m, k)
        x = rng.uniform(0.0, 3.0, size=m)
        fd = central_difference(lambda z: mt_normalized(mt, mt_raw(mt, z)), x, step)
        an = jacobian(mt, x)
        err = np.max(np.abs(an - fd)) / max(np.max(np.abs(fd)), 1e-300)
        worst = max(worst, float(err))
    return SuiteResult("jacobian_fd", worst <= tol, worst, tol, 0.0, f"models={n_models}")


@_timed
def suite_fisher_mc(n_models=10, n_trials=10**6, seed=0, tol=0.01):
    """Closed-form Poisson Fisher matrix against sampled score outer products."""
    rng = np.random.default_rng(seed)
    info = InfoConfig(n_population=100.0, gamma_reg=1e-3, fisher_space="v1")
    worst = 0.0
    for i in range(n_models):
        m = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        mt = _random_mt(rng, m, k)
        rho = _random_density(rng, k)
        x = rng.uniform(0.0, 2.0, size=m)
        J = fisher_matrix(mt, rho, info, x).J
        J_mc = mc_fisher_validate(mt, rho, info, x, n_trials, seed=seed * 1000 + i)
        err = np.linalg.norm(J_mc - J) / np.linalg.norm(J)
        worst = max(worst, float(err))
    return SuiteResult("fisher_mc", worst <= tol, worst, tol, 0.0,
                       f"models={n_models},trials={n_trials}")


@_timed
def suite_grad_fd(n_models=5, seed=0, tol=1e-4, step=1e-6, lambda_energy=10.0):
    """grad_Q (weights, thresholds, rho) against central differences of objective_Q."""
    rng = np.random.default_rng(seed)
    info = InfoConfig(n_population=50.0, gamma_reg=0.05)
    worst = 0.0
    for _ in range(n_models):
        model, batch = _small_problem(rng)
        rho = _random_density(rng, model.k_cells).rho
        an = grad_Q(model, rho, info, batch, lambda_energy)
        mt = model.mt

        def q_w(W):
            return objective_Q(model.with_mt(mt.replace(weights=W)), rho, info, batch,
                               lambda_energy)[0]

        def q_b(b):
            return objective_Q(model.with_mt(mt.replace(thresholds=b)), rho, info, batch,
                               lambda_energy)[0]

        def q_rho(r):
            # objective as an unconstrained function of rho (same formula, off-simplex)
            X, counts = evaluation_set(model, batch)
            return _objective_terms(mt, r, X, _weights(counts), info, lambda_energy, False,
                                    fisher_basis(model, info))[0]

        for got, fun, x0 in ((an.weights, q_w, np.array(mt.weights)),
                             (an.thresholds, q_b, np.array(mt.thresholds)),
                             (an.rho, q_rho, rho)):
            fd = central_difference(fun, x0, step)
            err = np.max(np.abs(got - fd)) / max(np.max(np.abs(fd)), 1e-300)
            worst = max(worst, float(err))
    return SuiteResult("grad_fd", worst <= tol, worst, tol, 0.0, f"models={n_models}")


@_timed
def suite_concavity(n_probes=100, seed=0, tol=1e-9):
    """Midpoint probes: the mean log-det is concave along random chords of the simplex."""
    rng = np.random.default_rng(seed)
    info = InfoConfig(n_population=100.0, gamma_reg=1e-2)
    worst = 0.0
    model, batch = _small_problem(rng, n_dirs=24, m=24, k=12, n_single=60, n_bidir=30)
    for i in range(n_probes):
        if i and i % 25 == 0:
            model, batch = _small_problem(rng, n_dirs=24, m=24, k=12, n_single=60, n_bidir=30)
        r1 = rng.dirichlet(np.full(model.k_cells, 0.5))
        r2 = rng.dirichlet(np.full(model.k_cells, 0.5))
        t = float(rng.uniform(0.05, 0.95))
        mid = project_simplex(t * r1 + (1 - t) * r2)
        f1 = density_log_det(model, project_simplex(r1), info, batch)
        f2 = density_log_det(model, project_simplex(r2), info, batch)
        fm = density_log_det(model, mid, info, batch)
        worst = max(worst, float(t * f1 + (1 - t) * f2 - fm))
    return SuiteResult("concavity", worst <= tol, max(worst, 0.0), tol, 0.0,
                       f"probes={n_probes}")


def _simplex_oracle(v):
    """Projection onto the simplex by enumerating candidate supports."""
    n = v.size
    best, best_d = None, np.inf
    for r in range(1, n + 1):
        for support in itertools.combinations(range(n), r):
            s = list(support)
            tau = (v[s].sum() - 1.0) / r
            p = np.zeros(n)
            p[s] = v[s] - tau
            if np.any(p[s] < 0):
                continue
            d = np.sum((p - v) ** 2)
            if d < best_d:
                best, best_d = p, d
    return best


@_timed
def suite_simplex_oracle(n_vectors=200, seed=0, tol=1e-12):
    """Sort-based projection against a brute-force support enumeration."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_vectors):
        n = int(rng.integers(1, 8))
        v = rng.normal(0.0, 2.0, size=n)
        p = project_simplex(v).rho
        q = _simplex_oracle(v)
        worst = max(worst, float(np.max(np.abs(p - q))), abs(float(p.sum()) - 1.0))
    return SuiteResult("simplex_oracle", worst <= tol, worst, tol, 0.0, f"vectors={n_vectors}")


@_timed
def suite_restart(n_starts=5, seed=0, tol=1e-6, kkt_tol=1e-6, n_single=120, n_bidir=60,
                  lambda_energy=10.0):
    """Density optima from random starting points agree in objective value."""
    rng = np.random.default_rng(seed)
    info = InfoConfig(n_population=1000.0, gamma_reg=1e-3)
    model, batch = _small_problem(rng, n_dirs=24, m=24, k=12, n_single=n_single, n_bidir=n_bidir)
    values, residuals = [], []
    for _ in range(n_starts):
        init = _random_density(rng, model.k_cells)
        rho = optimize_density(model, info, batch, init, lambda_energy, tol=kkt_tol)
        values.append(objective_Q(model, rho, info, batch, lambda_energy)[0])
        residuals.append(kkt_residual(model, rho, info, batch, lambda_energy))
    spread = float(max(values) - min(values))
    worst_kkt = float(max(residuals))
    ok = spread <= tol and worst_kkt <= kkt_tol
    return SuiteResult("restart", ok, spread, tol, 0.0,
                       f"starts={n_starts},max_kkt={worst_kkt:.2e}")


def run_suites(level="fast", seed=0, jacobian=None) -> list:
    """Run every suite; ``jacobian`` replaces the analytic Jacobian (negative-control hook)."""
    jacobian = mt_jacobian if jacobian is None else jacobian
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    full = level == "full"
    return [
        suite_jacobian_fd(n_models=100, seed=seed, jacobian=jacobian),
        suite_fisher_mc(n_models=10, n_trials=10**6 if full else 10**5, seed=seed,
                        tol=0.01 if full else 0.03),
        suite_grad_fd(n_models=10 if full else 3, seed=seed),
        suite_concavity(n_probes=100, seed=seed),
        suite_simplex_oracle(n_vectors=500 if full else 200, seed=seed),
        suite_restart(n_starts=5, seed=seed,
                      n_single=1200 if full else 120, n_bidir=600 if full else 60),
    ]


def report_json(results) -> str:
    return json.dumps([asdict(r) for r in results], indent=1) + "\n"
