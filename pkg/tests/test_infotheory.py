import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtinfomax.infotheory import (LOG_2PIE, InfoConfig, NotPositiveDefiniteError, fisher_matrix,
                                  fisher_reports, fisher_reports_csv, mc_fisher_validate,
                                  mean_logdet, mi_asymptotic, spd_logdet)
from mtinfomax.model import DensityVector, MotionModel
from mtinfomax.mt import MTParams
from mtinfomax.stimulus import make_grid, sample_training_set
from mtinfomax.v1 import V1Params

V1 = InfoConfig(fisher_space="v1")


def _scalar_toy():
    """M = K = 1 model with fhat = 0.5 and d fhat/dx = 0.2 at x = 0.

    With eps = 1 and a single cell, fhat = f^2 / (f^2 + 1) = 0.5 needs f = 1,
    i.e. A = 2 at u = 0. Then d fhat/dx = (2/c) (f d w - fhat f d w) with
    c = 2, d = f (1 - f/A) = 0.5, so d fhat/dx = 0.25 w; w = 0.8 gives 0.2.
    """
    return MTParams(np.array([[0.8]]), np.array([0.0]), gain_A=2.0, norm_eps=1.0)


def test_scalar_toy_closed_form():
    mt = _scalar_toy()
    cfg = InfoConfig(n_population=100.0, gamma_reg=0.0, fisher_space="v1")
    rep = fisher_matrix(mt, DensityVector([1.0]), cfg, np.array([0.0]))
    assert rep.J[0, 0] == pytest.approx(8.0, rel=1e-12)


def test_scalar_toy_monte_carlo():
    mt = _scalar_toy()
    cfg = InfoConfig(n_population=100.0, gamma_reg=0.0, fisher_space="v1")
    J = mc_fisher_validate(mt, DensityVector([1.0]), cfg, np.array([0.0]), 200_000, seed=1)
    # sd of the estimate is about 8 * sqrt(2 / n)
    assert J[0, 0] == pytest.approx(8.0, abs=5 * 8 * math.sqrt(2 / 200_000))


def test_zero_weights_zero_information():
    mt = MTParams(np.zeros((3, 4)), np.zeros(3))
    rho = DensityVector.uniform(3)
    rep = fisher_matrix(mt, rho, InfoConfig(gamma_reg=0.5, fisher_space="v1"), np.ones(4))
    np.testing.assert_array_equal(rep.J, np.zeros((4, 4)))
    np.testing.assert_array_equal(rep.G, 0.5 * np.eye(4))
    np.testing.assert_array_equal(mc_fisher_validate(mt, rho, V1, np.ones(4), 10_000, 0),
                                  np.zeros((4, 4)))


def test_small_model_matches_monte_carlo():
    rng = np.random.default_rng(5)
    mt = MTParams(rng.normal(0, 1.2, (2, 3)), rng.normal(0, 0.3, 2), gain_A=1.5)
    rho = DensityVector([0.3, 0.7])
    x = rng.uniform(0, 2, 3)
    J = fisher_matrix(mt, rho, V1, x).J
    J_mc = mc_fisher_validate(mt, rho, V1, x, 10**6, seed=2)
    assert np.linalg.norm(J_mc - J) / np.linalg.norm(J) < 0.01


def test_monte_carlo_error_shrinks_with_trials():
    rng = np.random.default_rng(11)
    mt = MTParams(rng.normal(0, 1.0, (2, 3)), rng.normal(0, 0.3, 2))
    rho = DensityVector([0.4, 0.6])
    x = rng.uniform(0, 2, 3)
    J = fisher_matrix(mt, rho, V1, x).J
    better = 0
    for seed in range(10):
        e_small = np.linalg.norm(mc_fisher_validate(mt, rho, V1, x, 10**4, seed) - J)
        e_big = np.linalg.norm(mc_fisher_validate(mt, rho, V1, x, 10**6, seed + 100) - J)
        better += e_big < e_small
    assert better >= 9


def test_monte_carlo_needs_enough_trials():
    mt = MTParams(np.zeros((1, 1)), np.zeros(1))
    with pytest.raises(ValueError):
        mc_fisher_validate(mt, DensityVector([1.0]), V1, np.zeros(1), 100, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_fisher_symmetric_psd_low_rank(k, m, seed):
    rng = np.random.default_rng(seed)
    mt = MTParams(rng.normal(0, 1.5, (k, m)), rng.normal(0, 0.5, k))
    rho = DensityVector(rng.dirichlet(np.ones(k)))
    rep = fisher_matrix(mt, rho, InfoConfig(gamma_reg=1e-3, fisher_space="v1"),
                        rng.uniform(0, 2, m))
    J = rep.J
    assert np.max(np.abs(J - J.T)) <= 1e-12 * max(1.0, np.abs(J).max())
    eig = np.linalg.eigvalsh(J)
    assert eig.min() >= -1e-10 * max(1.0, eig.max())
    assert np.linalg.matrix_rank(J, tol=1e-9 * max(1.0, eig.max())) <= k
    np.testing.assert_allclose(rep.G, J + 1e-3 * np.eye(m))


def test_rate_floor_masks_silent_cells():
    # second cell is driven far below threshold: fhat ~ 1e-40
    mt = MTParams(np.array([[1.0, 0.5], [0.1, 0.1]]), np.array([0.0, 45.0]))
    rho = DensityVector([0.5, 0.5])
    rep = fisher_matrix(mt, rho, InfoConfig(gamma_reg=1e-3, fisher_space="v1"), np.ones(2))
    only_first = fisher_matrix(mt.replace(weights=mt.weights[:1], thresholds=mt.thresholds[:1]),
                               DensityVector([1.0]), InfoConfig(gamma_reg=1e-3, fisher_space="v1"),
                               np.ones(2))
    assert np.all(np.isfinite(rep.J))
    assert rep.J[0, 0] > 0
    assert only_first.J[0, 0] > 0


def test_spd_logdet_diagonal_and_failure():
    G = np.diag([2.0, 3.0, 0.5])
    assert spd_logdet(G) == pytest.approx(math.log(3.0))
    with pytest.raises(NotPositiveDefiniteError) as info:
        spd_logdet(np.stack([np.eye(2), np.zeros((2, 2))]), ["a", "b"])
    assert info.value.index == 1 and info.value.label == "b"


def _desk_model(seed=0, k=12):
    grid = make_grid(24)
    rng = np.random.default_rng(seed)
    mt = MTParams(rng.normal(0, 1 / np.sqrt(24), (k, 24)), np.zeros(k))
    return MotionModel(grid, V1Params(), mt)


def test_identity_G_gives_zero_logdet():
    grid = make_grid(24)
    model = MotionModel(grid, V1Params(), MTParams(np.zeros((12, 24)), np.zeros(12)))
    batch = sample_training_set(grid, 50, 10, seed=0)
    gamma = 2 * math.pi * math.e
    for space in ("stimulus", "v1"):
        est = mi_asymptotic(model, DensityVector.uniform(12),
                            InfoConfig(gamma_reg=gamma, fisher_space=space), batch)
        assert est.mean_logdet_nats == pytest.approx(0.0, abs=1e-12)
        assert est.mi_nats == est.mean_logdet_nats + est.entropy_H_nats
        assert est.entropy_H_nats == pytest.approx(batch.empirical_entropy())


def test_single_stimulus_diagonal_G():
    grid = make_grid(24)
    model = MotionModel(grid, V1Params(), MTParams(np.zeros((2, 24)), np.zeros(2)))
    batch = sample_training_set(grid, 1, 0, seed=0)
    gamma = 3.0
    est = mi_asymptotic(model, DensityVector.uniform(2), InfoConfig(gamma_reg=gamma), batch)
    assert est.mean_logdet_nats == pytest.approx(0.5 * 24 * (math.log(gamma) - LOG_2PIE))


@pytest.mark.parametrize("space", ["stimulus", "v1"])
def test_logdet_nondecreasing_in_population(space):
    model = _desk_model(3)
    batch = sample_training_set(model.grid, 40, 20, seed=1)
    rho = DensityVector.uniform(12)
    vals = [mean_logdet(model, rho, InfoConfig(n_population=n, fisher_space=space), batch)
            for n in (1, 10, 100, 1000, 10_000)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_gamma_zero_rank_deficient_reports_stimulus():
    model = _desk_model(4)
    batch = sample_training_set(model.grid, 5, 0, seed=2)
    with pytest.raises(NotPositiveDefiniteError) as info:
        mean_logdet(model, DensityVector.uniform(12), InfoConfig(gamma_reg=0.0), batch)
    assert info.value.label is not None


def test_empty_batch_rejected():
    model = _desk_model()
    batch = sample_training_set(model.grid, 0, 0, seed=0)
    with pytest.raises(ValueError):
        mi_asymptotic(model, DensityVector.uniform(12), InfoConfig(), batch)


def test_stimulus_space_is_pullback_of_v1_space():
    model = _desk_model(6)
    rho = DensityVector(np.random.default_rng(0).dirichlet(np.ones(12)))
    s = np.zeros(24)
    s[[2, 6]] = 1.0
    x = model.encode(s)
    Jx = fisher_matrix(model, rho, InfoConfig(fisher_space="v1"), x).J
    Js = fisher_matrix(model, rho, InfoConfig(fisher_space="stimulus"), x).J
    V = model.tuning_matrix
    np.testing.assert_allclose(Js, V.T @ Jx @ V, rtol=1e-10, atol=1e-12)


def test_reports_csv():
    model = _desk_model()
    batch = sample_training_set(model.grid, 3, 1, seed=0)
    reps = fisher_reports(model, DensityVector.uniform(12), InfoConfig(), batch)
    lines = fisher_reports_csv(reps).splitlines()
    assert lines[0] == "stimulus_id,logdet_term,min_eig_J,max_eig_J"
    assert len(lines) == 1 + len(reps)


def test_density_dimension_checked():
    mt = MTParams(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        fisher_matrix(mt, DensityVector.uniform(2), V1, np.zeros(2))
    with pytest.raises(ValueError):
        fisher_matrix(mt, [0.5, 0.6, -0.1], V1, np.zeros(2))
    with pytest.raises(ValueError):
        fisher_matrix(mt, DensityVector.uniform(3), V1, np.zeros(3))
