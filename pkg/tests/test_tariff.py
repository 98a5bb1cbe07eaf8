"""Premiums, lift curves, Gini matrices and tariff selection."""

import csv

import numpy as np
import pytest

from freqsev.glm import Design, fit_glm
from freqsev.tariff import (
    TariffError,
    balance_ratio,
    compare_tariffs,
    gini_index,
    lorenz_curve,
    minmax_select,
    ordered_lorenz,
    relativities,
    risk_scores,
    technical_premium,
    write_balance_csv,
    write_gini_csv,
    write_lorenz_csv,
)

from conftest import ConstantModel


def test_premium_is_frequency_times_severity(toy):
    premium = technical_premium(ConstantModel(0.1), ConstantModel(2000.0), toy)
    np.testing.assert_allclose(premium, 200.0)
    with pytest.raises(TariffError):
        technical_premium(ConstantModel(0.1), ConstantModel(-1.0), toy)


def test_balance_ratio_basics():
    assert balance_ratio([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 1.0
    p = np.array([1.0, 4.0])
    losses = np.array([2.0, 3.0])
    assert abs(balance_ratio(3 * p, losses) - 3 * balance_ratio(p, losses)) < 1e-12
    with pytest.raises(TariffError):
        balance_ratio([1.0], [0.0])


def test_poisson_glm_premiums_balance(toy):
    model = fit_glm(toy, Design(("region",)), "poisson_log")
    premiums = model.predict(toy) * toy.exposure
    assert abs(balance_ratio(premiums, toy.response) - 1.0) < 1e-6


def test_risk_scores_ecdf():
    np.testing.assert_allclose(risk_scores([4.0, 1.0, 3.0, 2.0]), [1.0, 0.25, 0.75, 0.5])
    np.testing.assert_allclose(risk_scores([7.0, 7.0, 7.0]), 1.0)
    p = np.random.default_rng(0).uniform(1, 5, 50)
    np.testing.assert_array_equal(risk_scores(p), risk_scores(np.exp(p)))


def test_lorenz_endpoints_and_concentration():
    scores = np.array([0.25, 0.5, 0.75, 1.0])
    losses = np.array([0.0, 0.0, 0.0, 10.0])
    s, lc = lorenz_curve(scores, losses)
    np.testing.assert_allclose(s, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(lc, [0.0, 0.0, 0.0, 0.0, 1.0])
    assert lc[-1] == 1.0


def test_lorenz_uninformative_scores_near_diagonal():
    rng = np.random.default_rng(1)
    n = 10_000
    premiums = rng.uniform(1.0, 2.0, n)
    losses = rng.uniform(0.0, 1.0, n)  # independent of premiums
    s, lc = lorenz_curve(risk_scores(premiums), losses)
    assert np.max(np.abs(lc - s)) < 0.05


def test_relativities_and_errors():
    np.testing.assert_allclose(relativities([1.0, 2.0], [2.0, 1.0]), [2.0, 0.5])
    with pytest.raises(TariffError):
        relativities([0.0, 1.0], [1.0, 1.0])


def test_ordered_lorenz_self_comparison_is_diagonal():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 3.0, 200)
    losses = rng.poisson(1.0, 200).astype(float) * rng.uniform(100, 500, 200)
    losses[0] = 1.0  # ensure positive total
    x, y = ordered_lorenz(a, 2.0 * a, losses)  # exact scaling keeps ties exact
    # all relativities equal -> a single block, exactly the diagonal
    np.testing.assert_array_equal(x, [0.0, 1.0])
    np.testing.assert_array_equal(y, [0.0, 1.0])
    assert gini_index(x, y) == 0.0


def test_ordered_lorenz_hand_accumulation():
    a = np.array([1.0, 1.0, 1.0, 1.0])
    b = np.array([4.0, 3.0, 2.0, 1.0])  # relativities 4, 3, 2, 1
    losses = np.array([1.0, 2.0, 3.0, 4.0])
    x, y = ordered_lorenz(a, b, losses)
    np.testing.assert_allclose(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(y, [0.0, 0.4, 0.7, 0.9, 1.0])
    assert x[-1] == 1.0 and y[-1] == 1.0


def test_gini_geometry():
    assert gini_index([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert gini_index([0.0, 1.0, 1.0], [0.0, 0.0, 1.0]) == 1.0
    assert gini_index([0.0, 0.0, 1.0], [0.0, 1.0, 1.0]) == -1.0
    with pytest.raises(TariffError):
        gini_index([0.0], [0.0])
    with pytest.raises(TariffError):
        gini_index([1.0, 0.0], [0.0, 1.0])


def test_minmax_select_pattern():
    g = np.array([
        [0.0, 16.59, 1.0, 2.0],
        [0.0, 0.0, 16.48, 3.0],
        [-6.41, -7.0, 0.0, -8.0],
        [21.50, 0.0, 1.0, 0.0],
    ])
    selected, row_max, tie = minmax_select(g)
    np.testing.assert_allclose(row_max, [16.59, 16.48, -6.41, 21.50])
    assert selected == 2
    assert not tie
    named, _, _ = minmax_select(g, ["glm", "gbm", "cann", "ffnn"])
    assert named == "cann"


def test_minmax_single_model_and_permutation():
    selected, row_max, _ = minmax_select(np.zeros((1, 1)))
    assert selected == 0
    g = np.array([[0.0, 3.0, 1.0], [2.0, 0.0, 5.0], [-1.0, 0.5, 0.0]])
    base, _, _ = minmax_select(g)
    perm = np.array([2, 0, 1])
    permuted, _, _ = minmax_select(g[np.ix_(perm, perm)])
    assert perm[permuted] == base


def test_compare_tariffs_and_csv_emitters(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.uniform(0.5, 2.0, 100)
    premiums = {"modelA": a, "modelB": 2.0 * a}
    losses = rng.uniform(0.0, 3.0, 100)
    comparison = compare_tariffs(premiums, losses)
    np.testing.assert_allclose(comparison.gini, 0.0, atol=1e-12)
    assert comparison.selected == "modelA"
    assert comparison.tie
    assert abs(comparison.balance["modelB"] - 2 * comparison.balance["modelA"]) < 1e-12

    write_balance_csv(comparison, tmp_path / "balance.csv")
    write_gini_csv(comparison, tmp_path / "gini.csv")
    write_lorenz_csv(comparison, tmp_path / "lorenz.csv")
    with open(tmp_path / "gini.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["benchmark"] for r in rows] == ["modelA", "modelB"]
    assert [r["selected"] for r in rows] == ["1", "0"]
    with open(tmp_path / "balance.csv", newline="") as fh:
        balance_rows = list(csv.DictReader(fh))
    assert float(balance_rows[0]["balance_ratio"]) == comparison.balance["modelA"]
