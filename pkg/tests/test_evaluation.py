"""Deviances, Diebold-Mariano, Murphy diagrams, calibration, histograms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqsev.evaluation import (
    EvaluationError,
    LossVector,
    calibration_curve,
    default_theta_grid,
    diebold_mariano,
    dominance,
    gamma_deviance,
    gamma_deviance_contributions,
    murphy_curve,
    poisson_deviance,
    poisson_deviance_contributions,
    prediction_histogram,
)


def test_poisson_deviance_oracles():
    assert poisson_deviance([1.0], [1.0], [1.0]) == 0.0
    assert abs(poisson_deviance([0.5], [0.0], [1.0]) - 1.0) < 1e-12
    assert abs(poisson_deviance([1.0, 1.0], [2.0, 0.0], [1.0, 1.0]) - 2 * np.log(2)) < 1e-12


def test_poisson_exposure_inside_loss():
    # rate f with exposure e behaves as mean e*f
    direct = poisson_deviance([0.25], [1.0], [2.0])
    equivalent = poisson_deviance([0.5], [1.0], [1.0])
    assert abs(direct - equivalent) < 1e-15


def test_poisson_rejects_bad_inputs():
    with pytest.raises(EvaluationError):
        poisson_deviance([0.0], [1.0], [1.0])
    with pytest.raises(EvaluationError):
        poisson_deviance([1.0], [-1.0], [1.0])


def test_gamma_deviance_oracles():
    assert gamma_deviance([2.0], [2.0]) == 0.0
    assert abs(gamma_deviance([1.0], [2.0]) - 2 * (1 - np.log(2))) < 1e-12
    single = gamma_deviance_contributions([1.0], [2.0], [1.0])
    double = gamma_deviance_contributions([1.0], [2.0], [2.0])
    np.testing.assert_allclose(double, 2 * single)


def test_dm_identical_and_direction():
    base = np.ones(50)
    result = diebold_mariano(LossVector(base), LossVector(base.copy()))
    assert result.verdict == "identical"
    assert result.p_value == 1.0

    rng = np.random.default_rng(0)
    d = 0.1 + 0.001 * rng.normal(size=100)
    better = diebold_mariano(LossVector(d), LossVector(np.zeros(100)))
    assert better.verdict == "reject"
    # oracle: classic one-sample t statistic of the differential series
    t_stat = d.mean() / (d.std(ddof=1) / np.sqrt(len(d)))
    assert abs(better.statistic - t_stat) < 1e-12
    flipped = diebold_mariano(LossVector(np.zeros(100)), LossVector(d))
    assert abs(flipped.statistic + better.statistic) < 1e-12
    assert flipped.verdict == "no_reject"


def test_murphy_single_observation():
    curve = murphy_curve([1.0], [0.0], theta_grid=[0.5])
    assert curve.scores[0] == 0.5


def test_murphy_zero_outside_interval():
    curve = murphy_curve([1.0, 2.0], [0.5, 3.0], theta_grid=[0.1, 0.3, 3.5, 4.0])
    np.testing.assert_array_equal(curve.scores, 0.0)
    perfect = murphy_curve([1.0, 2.0], [1.0, 2.0], theta_grid=[0.5, 1.5, 2.5])
    np.testing.assert_array_equal(perfect.scores, 0.0)


def test_default_grid_contains_knots():
    grid = default_theta_grid([1.0, 2.0], [0.5, 3.0])
    for knot in (0.5, 1.0, 2.0, 3.0):
        assert knot in grid


def test_dominance_verdicts():
    from freqsev.evaluation import MurphyCurve

    thetas = np.array([0.0, 1.0, 2.0])
    a = MurphyCurve(thetas, np.array([0.1, 0.2, 0.3]))
    b = MurphyCurve(thetas, np.array([0.1, 0.25, 0.3]))
    assert dominance(a, a) == "tied"
    assert dominance(a, b) == "A_dominates"
    assert dominance(b, a) == "B_dominates"
    c = MurphyCurve(thetas, np.array([0.2, 0.1, 0.3]))
    assert dominance(a, c) == "incomparable"
    with pytest.raises(EvaluationError):
        dominance(a, MurphyCurve(thetas[:2], np.zeros(2)))


def test_dominance_on_knots_extends_between_knots():
    # S_theta is piecewise linear between knots, so knot-grid dominance
    # extends to random probes
    rng = np.random.default_rng(1)
    y = rng.poisson(1.0, 40).astype(float)
    fa = np.maximum(0.05, y * 0.9 + 0.05)
    fb = rng.uniform(0.05, 3.0, 40)
    knots = np.union1d(np.union1d(fa, fb), y)
    ca = murphy_curve(fa, y, knots)
    cb = murphy_curve(fb, y, knots)
    if dominance(ca, cb) == "A_dominates":
        probes = np.sort(rng.uniform(knots[0], knots[-1], 200))
        pa = murphy_curve(fa, y, probes)
        pb = murphy_curve(fb, y, probes)
        assert np.all(pa.scores <= pb.scores + 1e-12)


def test_calibration_constant_predictor():
    y = np.array([0.0, 1.0, 2.0, 1.0])
    table = calibration_curve(np.full(4, 0.5), y, bin_spec=[0.0, 1.0])
    assert len(table.counts) == 1
    assert table.mean_response[0] == y.mean()


def test_calibration_merges_empty_bins():
    preds = np.array([0.1, 0.9])
    table = calibration_curve(preds, np.array([0.0, 1.0]), bin_spec=[0.0, 0.2, 0.5, 1.0])
    assert table.counts.sum() == 2
    assert table.merged.any()


def test_calibration_monte_carlo():
    rng = np.random.default_rng(3)
    f = rng.uniform(0.5, 5.0, 20_000)
    y = rng.poisson(f).astype(float)
    table = calibration_curve(f, y)
    for b in range(len(table.counts)):
        if table.counts[b] < 50:
            continue
        tol = 3 * np.sqrt(table.mean_prediction[b] / table.counts[b])
        assert abs(table.mean_response[b] - table.mean_prediction[b]) < tol


def test_calibration_custom_bin_spec():
    # fixed-width severity-style bins are honored when configured
    edges = np.arange(22_000.0, 25_001.0, 150.0)
    preds = np.linspace(22_010, 24_900, 300)
    table = calibration_curve(preds, preds, bin_spec=edges)
    assert table.counts.sum() == 300


def test_prediction_histogram():
    edges, counts = prediction_histogram(np.full(7, 0.42), 0.1)
    assert counts.sum() == 7
    assert (counts > 0).sum() == 1
    grid = np.arange(0.05, 1.0, 0.1)
    _, counts = prediction_histogram(grid, 0.1)
    np.testing.assert_array_equal(counts, np.ones(10))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=0.01, max_value=10), min_size=1, max_size=30),
    st.integers(min_value=0, max_value=1000),
)
def test_poisson_deviance_nonnegative_and_shuffle_invariant(preds, seed):
    f = np.asarray(preds)
    rng = np.random.default_rng(seed)
    y = rng.poisson(f).astype(float)
    e = np.ones(len(f))
    d = poisson_deviance(f, y, e)
    assert d >= 0.0
    perm = rng.permutation(len(f))
    assert abs(d - poisson_deviance(f[perm], y[perm], e[perm])) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.1, max_value=10), min_size=1, max_size=20))
def test_gamma_deviance_zero_iff_exact(values):
    y = np.asarray(values)
    assert gamma_deviance(y, y) == 0.0
    assert gamma_deviance(y + 0.1, y) > 0.0
