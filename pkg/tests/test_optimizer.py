import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtinfomax import optimizer
from mtinfomax.infotheory import LOG_2PIE, InfoConfig, evaluation_set, fisher_basis, mean_logdet
from mtinfomax.model import DensityVector, MotionModel
from mtinfomax.mt import MTParams, mt_normalized, mt_raw
from mtinfomax.optimizer import (DensityConvergenceError, TrainConfig, TrainingDivergedError,
                                 density_log_det, grad_Q, kkt_residual, objective_Q,
                                 optimize_density, project_simplex, train)
from mtinfomax.stimulus import make_grid, sample_training_set
from mtinfomax.v1 import V1Params
from mtinfomax.validate import _simplex_oracle, central_difference


def _model(seed=0, k=12, m=24, n_dirs=24, scale=1.0):
    rng = np.random.default_rng(seed)
    mt = MTParams(rng.normal(0, scale / np.sqrt(m), (k, m)), rng.normal(0, 0.3, k))
    return MotionModel(make_grid(n_dirs), V1Params(m), mt)


def _batch(model, n_single=60, n_bidir=30, seed=0):
    return sample_training_set(model.grid, n_single, n_bidir, seed)


INFO = InfoConfig()


# objective ------------------------------------------------------------------

def test_lambda_zero_is_minus_mean_logdet():
    model = _model(1)
    batch = _batch(model)
    rho = DensityVector.uniform(12)
    Q, ld, en = objective_Q(model, rho, INFO, batch, lambda_energy=0.0)
    assert en == 0.0 and Q == ld
    m = mean_logdet(model, rho, INFO, batch)
    assert Q == pytest.approx(-(m + 0.5 * 24 * LOG_2PIE), rel=1e-12)


def test_zero_weights_closed_form():
    grid = make_grid(24)
    mt = MTParams(np.zeros((12, 24)), np.linspace(-1, 1, 12))
    model = MotionModel(grid, V1Params(), mt)
    batch = sample_training_set(grid, 30, 10, seed=0)
    rho = DensityVector(np.random.default_rng(0).dirichlet(np.ones(12)))
    gamma, lam = 1e-3, 10.0
    fh = mt_normalized(mt, mt_raw(mt, np.zeros(24)))
    for space in ("stimulus", "v1"):
        info = InfoConfig(gamma_reg=gamma, fisher_space=space)
        Q, _, _ = objective_Q(model, rho, info, batch, lam)
        assert Q == pytest.approx(-0.5 * 24 * math.log(gamma) + lam * rho.rho @ fh, rel=1e-12)


def test_energy_part_linear_in_lambda():
    model = _model(2)
    batch = _batch(model)
    rho = DensityVector.uniform(12)
    _, ld1, en1 = objective_Q(model, rho, INFO, batch, 10.0)
    _, ld2, en2 = objective_Q(model, rho, INFO, batch, 20.0)
    assert ld1 == ld2
    assert en2 == pytest.approx(2 * en1, rel=1e-14)


# gradients ------------------------------------------------------------------

@pytest.mark.parametrize("space", ["stimulus", "v1"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_finite_differences(space, seed):
    model = _model(seed, k=3, m=4, n_dirs=12, scale=2.0)
    batch = _batch(model, 20, 10, seed)
    info = InfoConfig(n_population=50.0, gamma_reg=0.05, fisher_space=space)
    rng = np.random.default_rng(seed)
    rho = rng.dirichlet(np.ones(3))
    g = grad_Q(model, rho, info, batch, 10.0)
    mt = model.mt
    X, counts = evaluation_set(model, batch)
    w = counts / counts.sum()
    basis = fisher_basis(model, info)

    def q(W=mt.weights, b=mt.thresholds, r=rho):
        return optimizer._objective_terms(mt.replace(weights=W, thresholds=b), r, X, w, info,
                                          10.0, False, basis)[0]

    for got, fd in ((g.weights, central_difference(lambda W: q(W=W), np.array(mt.weights), 1e-5)),
                    (g.thresholds, central_difference(lambda b: q(b=b), np.array(mt.thresholds), 1e-5)),
                    (g.rho, central_difference(lambda r: q(r=r), rho, 1e-5))):
        err = np.max(np.abs(got - fd)) / np.max(np.abs(fd))
        assert err <= 1e-4


def test_duplicate_cells_get_identical_gradients():
    model = _model(3, k=4)
    W = np.array(model.mt.weights)
    b = np.array(model.mt.thresholds)
    W[3], b[3] = W[1], b[1]
    model = model.with_mt(model.mt.replace(weights=W, thresholds=b))
    rho = DensityVector([0.2, 0.3, 0.2, 0.3])
    g = grad_Q(model, rho, INFO, _batch(model))
    np.testing.assert_allclose(g.weights[1], g.weights[3], rtol=1e-10)
    assert g.thresholds[1] == pytest.approx(g.thresholds[3], rel=1e-10)
    assert g.rho[1] == pytest.approx(g.rho[3], rel=1e-10)


def test_lambda_only_moves_energy_gradient():
    model = _model(4)
    batch = _batch(model)
    rho = DensityVector.uniform(12)
    g1 = grad_Q(model, rho, INFO, batch, 10.0)
    g2 = grad_Q(model, rho, INFO, batch, 30.0)
    g0 = grad_Q(model, rho, INFO, batch, 0.0)
    for name in ("weights", "thresholds", "rho"):
        a, b, c = getattr(g1, name), getattr(g2, name), getattr(g0, name)
        # gradient is affine in lambda
        np.testing.assert_allclose(b - c, 3.0 * (a - c), rtol=1e-9, atol=1e-12)
    S, counts = batch.unique_stimuli()
    fh_mean = counts @ model.rates(S) / counts.sum()
    np.testing.assert_allclose(g2.rho - g1.rho, 20.0 * fh_mean, rtol=1e-9)


# simplex projection ---------------------------------------------------------

def test_projection_examples():
    np.testing.assert_array_equal(project_simplex([2.0, 0.0, 0.0]).rho, [1.0, 0.0, 0.0])
    for c in (-3.0, 0.0, 0.25, 7.0):
        np.testing.assert_allclose(project_simplex(np.full(5, c)).rho, np.full(5, 0.2))
    p = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(project_simplex(p).rho, p, atol=1e-16)
    with pytest.raises(ValueError):
        project_simplex([np.nan, 1.0])


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(float, st.integers(1, 7), elements=st.floats(-10, 10)))
def test_projection_matches_support_enumeration(v):
    p = project_simplex(v).rho
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(p, _simplex_oracle(v), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_projection_idempotent(v):
    p = project_simplex(v).rho
    np.testing.assert_allclose(project_simplex(p).rho, p, atol=1e-15)


# density problem -----------------------------------------------------------

def test_density_single_type():
    model = _model(0, k=1)
    batch = _batch(model)
    rho = optimize_density(model, INFO, batch)
    np.testing.assert_array_equal(rho.rho, [1.0])
    assert kkt_residual(model, rho, INFO, batch) == 0.0


def test_density_identical_types_symmetric_value():
    model = _model(5, k=3)
    W = np.array(model.mt.weights)
    b = np.array(model.mt.thresholds)
    W[2], b[2] = W[0], b[0]
    model = model.with_mt(model.mt.replace(weights=W, thresholds=b))
    batch = _batch(model)
    rho = optimize_density(model, INFO, batch, DensityVector([0.5, 0.3, 0.2]))
    # split the mass of the duplicated pair evenly; objective must not change
    sym = rho.rho.copy()
    sym[0] = sym[2] = 0.5 * (rho.rho[0] + rho.rho[2])
    q, _, _ = objective_Q(model, rho, INFO, batch)
    q_sym, _, _ = objective_Q(model, DensityVector(sym), INFO, batch)
    assert q == pytest.approx(q_sym, abs=1e-8)
    assert kkt_residual(model, DensityVector(sym), INFO, batch) <= 1e-6


def test_density_restarts_agree():
    model = _model(6)
    batch = _batch(model, 120, 60)
    rng = np.random.default_rng(0)
    values = []
    for _ in range(3):
        rho = optimize_density(model, INFO, batch, DensityVector(rng.dirichlet(np.ones(12))))
        assert kkt_residual(model, rho, INFO, batch) <= 1e-6
        values.append(objective_Q(model, rho, INFO, batch)[0])
    assert max(values) - min(values) <= 1e-6


def test_perturbed_optimum_has_large_residual():
    model = _model(7)
    batch = _batch(model)
    rho = optimize_density(model, INFO, batch)
    moved = rho.rho.copy()
    i, j = np.argmax(moved), np.argmin(moved)
    moved[i] -= 0.1
    moved[j] += 0.1
    assert kkt_residual(model, DensityVector(moved), INFO, batch) > 1e-3


def test_density_needs_regularizer():
    model = _model(0, k=3)
    with pytest.raises(ValueError):
        optimize_density(model, InfoConfig(gamma_reg=0.0), _batch(model))


def test_density_reports_non_convergence():
    model = _model(8)
    with pytest.raises(DensityConvergenceError) as info:
        optimize_density(model, INFO, _batch(model), tol=1e-6, max_iter=0)
    assert info.value.residual > 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_log_det_concave_in_density(seed, t):
    model = _model(seed % 97, k=5, scale=2.0)
    batch = _batch(model, 20, 10, seed)
    rng = np.random.default_rng(seed)
    r1, r2 = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    mid = project_simplex(t * r1 + (1 - t) * r2)
    f = lambda r: density_log_det(model, project_simplex(r), INFO, batch)  # noqa: E731
    assert f(mid.rho) >= t * f(r1) + (1 - t) * f(r2) - 1e-9


# training -------------------------------------------------------------------

def test_zero_iterations_returns_initial_model():
    model = _model(9)
    snap, trace = train(TrainConfig(max_iters=0), model, _batch(model), INFO)
    assert snap.model.mt == model.mt
    assert snap.density == DensityVector.uniform(12)
    assert len(trace) == 1


def test_training_deterministic_and_on_simplex():
    model = _model(10)
    batch = _batch(model, 300, 60)
    cfg = TrainConfig(max_iters=60, density_update_period=20, seed=3)
    s1, t1 = train(cfg, model, batch, INFO)
    s2, t2 = train(cfg, model, batch, INFO)
    assert s1 == s2
    assert t1.Q == t2.Q
    assert all(abs(s - 1.0) <= 1e-12 for s in t1.density_sums)
    assert all(m >= 0 for m in t1.density_mins)
    assert t1.Q[-1] < t1.Q[0]


def test_checkpoints_called():
    model = _model(11)
    seen = []
    cfg = TrainConfig(max_iters=25, checkpoint_every=10, density_update_period=10)
    train(cfg, model, _batch(model), INFO, checkpoint=lambda s: seen.append(s.provenance["iteration"]))
    assert seen == [10, 20]


def test_divergence_detected(monkeypatch):
    real = optimizer._objective_terms
    calls = itertools.count()

    def blowing_up(*args, **kwargs):
        out = real(*args, **kwargs)
        if args[6]:
            return out
        n = next(calls)
        return (abs(out[0]) * (1.0 + n),) + out[1:]

    monkeypatch.setattr(optimizer, "_objective_terms", blowing_up)
    model = _model(12, k=3)
    with pytest.raises(TrainingDivergedError) as info:
        train(TrainConfig(max_iters=1000, density_update_period=1000), model, _batch(model), INFO)
    assert len(info.value.trace) > 500


def test_trace_csv_and_smoothing():
    model = _model(13)
    _, trace = train(TrainConfig(max_iters=10), model, _batch(model), INFO)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "iter,Q,logdet_part,energy_part,step"
    assert len(lines) == 12
    assert len(trace.smoothed_Q(5)) == 11 - 4


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_energy=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(minibatch_size=0)
    assert TrainConfig(step_size=0.01, step_decay_iters=100).step_at(100) == pytest.approx(0.005)
