import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mtinfomax.stimulus import (TRAINING_SEPARATIONS_DEG, DirectionGrid, batch_from_stimuli,
                                bidirectional_stimulus, circular_difference, make_grid,
                                pair_geometry, sample_training_set, single_stimulus)


def test_grid_spacing():
    assert make_grid(12).spacing_deg == 30
    assert make_grid(24).spacing_deg == 15
    g = make_grid(24)
    assert g.n_dirs * g.spacing_deg == 360
    assert np.all(np.diff(g.directions_deg) > 0)
    assert g.directions_deg[0] == 15 and g.directions_deg[-1] == 360


@pytest.mark.parametrize("n", [7, 0, 1, 25])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        make_grid(n)


def test_single_stimulus():
    s = single_stimulus(make_grid(24), 3, 1.0)
    expected = np.zeros(24)
    expected[2] = 1.0
    np.testing.assert_array_equal(s.intensities, expected)
    assert s.component_indices == (3,)

    s12 = single_stimulus(make_grid(12), 12, 0.5)
    assert s12.intensities[11] == 0.5 and s12.intensities[:11].sum() == 0


@pytest.mark.parametrize("index", [0, 25, -1])
def test_single_stimulus_bounds(index):
    with pytest.raises(IndexError):
        single_stimulus(make_grid(24), index, 1.0)


def test_bidirectional_geometry():
    g = make_grid(24)
    s = bidirectional_stimulus(g, 1, 5, 1.0)
    assert s.separation_deg == pytest.approx(60.0)
    # components at 15 and 75 deg, midline at index 3
    assert s.midline_deg == pytest.approx(g.direction(3))
    assert np.count_nonzero(s.intensities) == 2

    anti = bidirectional_stimulus(g, 1, 13, 1.0)
    assert anti.separation_deg == pytest.approx(180.0)

    with pytest.raises(ValueError):
        bidirectional_stimulus(g, 1, 1, 1.0)
    with pytest.raises(IndexError):
        bidirectional_stimulus(g, 1, 30, 1.0)


def test_midline_wraps_across_zero():
    sep, mid = pair_geometry(345.0, 15.0)
    assert sep == pytest.approx(30.0)
    assert mid % 360.0 == pytest.approx(0.0)


@given(st.floats(-720, 720), st.floats(-720, 720))
def test_circular_difference_range(a, b):
    d = circular_difference(a, b)
    assert -180.0 <= d < 180.0
    assert np.isclose(np.cos(np.deg2rad(d)), np.cos(np.deg2rad(a - b)), atol=1e-9)


def test_training_set_counts_and_determinism():
    g = make_grid(24)
    b1 = sample_training_set(g, 500, 100, seed=7)
    b2 = sample_training_set(g, 500, 100, seed=7)
    assert len(b1) == 600
    np.testing.assert_array_equal(b1.dir_a, b2.dir_a)
    np.testing.assert_array_equal(b1.dir_b, b2.dir_b)
    assert b1.counts == (500, 100)
    for s in b1:
        n = np.count_nonzero(s.intensities)
        assert n in (1, 2) and np.all(s.intensities >= 0)
    other = sample_training_set(g, 500, 100, seed=8)
    assert not np.array_equal(b1.dir_a, other.dir_a)


def test_default_training_counts():
    b = sample_training_set(make_grid(24), 180_000, 36_000, seed=0)
    assert len(b) == 216_000


def test_empty_batch():
    b = sample_training_set(make_grid(24), 0, 0, seed=0)
    assert len(b) == 0
    assert b.empirical_entropy() == 0.0


def test_separation_histogram_uniform():
    b = sample_training_set(make_grid(24), 10_000, 2_000, seed=0)
    sep, _ = b.geometry()
    sep = sep[~np.isnan(sep)]
    counts = np.array([np.sum(np.isclose(sep, s)) for s in TRAINING_SEPARATIONS_DEG])
    assert counts.sum() == 2_000
    assert stats.chisquare(counts).pvalue > 0.05
    np.testing.assert_allclose(counts / counts.sum(), 1 / 12, atol=0.05)


def test_single_direction_marginal_uniform():
    b = sample_training_set(make_grid(24), 10_000, 0, seed=1)
    counts = np.bincount(b.dir_a, minlength=25)[1:]
    # binomial 99.9% bounds per direction
    p = 1 / 24
    sd = np.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts - 10_000 * p) < 3.3 * sd)


def test_grid12_restricts_to_even_multiples():
    g = make_grid(12)
    assert g.representable_separations() == tuple(range(30, 181, 30))
    b = sample_training_set(g, 0, 600, seed=3)
    sep, _ = b.geometry()
    assert set(np.round(sep).astype(int)) <= set(range(30, 181, 30))


def test_unique_stimuli_compresses_batch():
    b = sample_training_set(make_grid(24), 2_000, 800, seed=4)
    S, counts = b.unique_stimuli()
    assert counts.sum() == len(b)
    assert len(np.unique(S, axis=0)) == len(S)
    full = b.intensity_matrix()
    np.testing.assert_array_equal(S[b.unique_index()], full)


def test_batch_csv_columns():
    g = make_grid(24)
    b = batch_from_stimuli(g, [single_stimulus(g, 2, 1.0), bidirectional_stimulus(g, 1, 5, 1.0)])
    lines = b.to_csv().splitlines()
    assert lines[0] == "index,kind,dir_a_deg,dir_b_deg,intensity,separation_deg,midline_deg"
    assert lines[1].startswith("0,single,30,,")
    assert lines[2] == "1,bidir,15,75,1.0,60,45"


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sampled_pairs_are_valid(seed):
    g = make_grid(24)
    b = sample_training_set(g, 5, 20, seed)
    sep, mid = b.geometry()
    two = ~np.isnan(sep)
    assert np.all(np.isin(np.round(sep[two]), TRAINING_SEPARATIONS_DEG))
    assert np.all(b.dir_a[two] != b.dir_b[two])
