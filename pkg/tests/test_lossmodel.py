import itertools
import logging

import numpy as np
import pytest

from src.dataset import ThetaSeries, constant_prices, derive_theta, panel_from_arrays
from src.empirics import derive_thresholds, external_thresholds
from src.errors import ValidationError, ZeroVarianceError
from src.lossmodel import (
    LossSeries,
    cluster_stats,
    coefficient_of_effectiveness,
    drop_uninsurable,
    effectiveness_minimizer,
    gross_premium,
    loss_gain_surplus,
    mean_weighted_loss,
    optimal_mix,
    phi_equal_variance,
    pooled_series,
    revenue_series,
    surplus_stats,
    var_weighted_loss,
    weighted_average_variance,
)


def _losses(values) -> LossSeries:
    values = np.asarray(values, dtype=float)
    J, n = values.shape
    return LossSeries(
        crops=tuple(f"c{j}" for j in range(J)),
        years=tuple(range(n)),
        losses=values,
        gains=np.zeros_like(values),
        surplus=-values,
    )


def test_loss_gain_surplus_values():
    panel = panel_from_arrays(["a"], [2000, 2001, 2002], [[5.0, 10.0, 15.0]], [[1.0] * 3])
    losses = loss_gain_surplus(panel, constant_prices({"a": 2.0}), external_thresholds(panel, [10.0]))
    np.testing.assert_array_equal(losses.losses, [[10.0, 0.0, 0.0]])
    np.testing.assert_array_equal(losses.gains, [[0.0, 0.0, 10.0]])
    np.testing.assert_array_equal(losses.surplus, [[-10.0, 0.0, 10.0]])


def test_losses_are_non_negative(fixture_panel, fixture_prices):
    losses = loss_gain_surplus(fixture_panel, fixture_prices, derive_thresholds(fixture_panel, 0.5))
    assert np.all(losses.losses >= 0)
    assert np.all(losses.gains >= 0)
    np.testing.assert_array_equal(losses.surplus, losses.gains - losses.losses)


def test_zero_yield_revenue_is_zero():
    panel = panel_from_arrays(["a", "b"], [2000, 2001], np.zeros((2, 2)), np.ones((2, 2)))
    revenue = revenue_series(panel, constant_prices({"a": 1.75, "b": 11.9}))
    np.testing.assert_array_equal(revenue, 0.0)


def test_mean_weighted_loss_matches_covariance_identity(fixture_panel, fixture_prices, fixture_theta):
    losses = loss_gain_surplus(fixture_panel, fixture_prices, derive_thresholds(fixture_panel, 2 / 3))
    expected = 0.0
    for j in range(fixture_panel.n_crops):
        t, l = fixture_theta.shares[j], losses.losses[j]
        expected += t.mean() * l.mean() + np.mean((t - t.mean()) * (l - l.mean()))
    assert mean_weighted_loss(fixture_theta, losses) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_variance_direct_and_decomposed_agree(seed, random_panel):
    rng = np.random.default_rng(1000 + seed)
    panel, prices = random_panel(int(rng.integers(1, 6)), int(rng.integers(5, 201)), seed)
    theta = derive_theta(panel)
    losses = loss_gain_surplus(panel, prices, derive_thresholds(panel, float(rng.uniform(0.1, 0.9))))
    direct = var_weighted_loss(theta, losses, "direct")
    decomposed = var_weighted_loss(theta, losses, "decomposed")
    assert decomposed == pytest.approx(direct, rel=1e-9, abs=1e-9 * max(1.0, np.abs(losses.losses).max() ** 2))


def test_enumerated_population_variance():
    # four equally likely joint outcomes of two crops
    losses = _losses([[0.0, 10.0, 0.0, 10.0], [0.0, 0.0, 20.0, 20.0]])
    theta = ThetaSeries.equal_weights(2, 4)
    pooled = [0.0, 5.0, 10.0, 15.0]
    enumerated = sum(v * v for v in pooled) / 4 - (sum(pooled) / 4) ** 2
    assert enumerated == 31.25
    assert var_weighted_loss(theta, losses, "direct", ddof=0) == pytest.approx(enumerated, abs=1e-12)
    assert var_weighted_loss(theta, losses, "decomposed", ddof=0) == pytest.approx(enumerated, abs=1e-12)
    assert var_weighted_loss(theta, losses, "direct") == pytest.approx(enumerated * 4 / 3, abs=1e-12)


def test_independent_reduction_is_reporting_only(caplog):
    losses = _losses([[0.0, 10.0, 0.0, 10.0], [0.0, 0.0, 20.0, 20.0]])
    with caplog.at_level(logging.WARNING):
        var_weighted_loss(ThetaSeries.equal_weights(2, 4), losses, "independent_reduction")
    assert "reporting only" in caplog.text


def test_unknown_variance_mode():
    with pytest.raises(ValidationError):
        var_weighted_loss(ThetaSeries.equal_weights(1, 3), _losses([[1.0, 2.0, 3.0]]), "exact")


@pytest.mark.parametrize("n_crops", [2, 3, 4])
def test_equal_weights_on_uncorrelated_losses_give_one_over_j(n_crops):
    rng = np.random.default_rng(n_crops)
    losses = _losses(rng.normal(100.0, 10.0, size=(n_crops, 10_000)))
    phi = coefficient_of_effectiveness(ThetaSeries.equal_weights(n_crops, 10_000), losses)
    assert phi == pytest.approx(1 / n_crops, rel=0.10)


@pytest.mark.parametrize("n_crops", [2, 3, 4])
def test_no_simplex_point_beats_equal_weights(n_crops):
    steps = np.round(np.arange(0.0, 1.0001, 0.05), 10)
    best = min(
        phi_equal_variance(list(head) + [1.0 - sum(head)])
        for head in itertools.product(steps, repeat=n_crops - 1)
        if sum(head) <= 1.0 + 1e-12
    )
    weights, minimum = effectiveness_minimizer(n_crops)
    assert minimum == pytest.approx(1 / n_crops)
    assert phi_equal_variance(weights) == pytest.approx(minimum)
    assert best >= minimum - 1e-12


def test_phi_equal_variance_is_sum_of_squares():
    assert phi_equal_variance([0.5, 0.25, 0.25]) == pytest.approx(0.375)
    assert phi_equal_variance([1.0]) == 1.0


def test_optimal_mix_on_uncorrelated_losses():
    rng = np.random.default_rng(7)
    losses = _losses(rng.normal(100.0, 10.0, size=(3, 5000)))
    weights, phi = optimal_mix(losses)
    assert weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(weights, 1 / 3, atol=0.05)
    equal = coefficient_of_effectiveness(ThetaSeries.equal_weights(3, 5000), losses)
    assert phi <= equal + 1e-9


def test_optimal_mix_prefers_hedging_crop():
    rng = np.random.default_rng(11)
    base = rng.normal(0.0, 1.0, 4000)
    losses = _losses([100 + 10 * base, 100 - 10 * base + rng.normal(0.0, 1.0, 4000)])
    weights, phi = optimal_mix(losses)
    assert phi < 0.05
    np.testing.assert_allclose(weights, 0.5, atol=0.05)


def test_phi_undefined_for_constant_losses():
    losses = _losses([[5.0, 5.0, 5.0], [1.0, 1.0, 1.0]])
    with pytest.raises(ZeroVarianceError):
        coefficient_of_effectiveness(ThetaSeries.equal_weights(2, 3), losses)


def test_phi_with_varying_shares(fixture_panel, fixture_prices, fixture_theta):
    losses = loss_gain_surplus(fixture_panel, fixture_prices, derive_thresholds(fixture_panel, 2 / 3))
    phi = coefficient_of_effectiveness(fixture_theta, losses)
    expected = var_weighted_loss(fixture_theta, losses) / weighted_average_variance(fixture_theta, losses)
    assert phi == pytest.approx(expected)
    assert phi > 0


def test_pooled_series_alignment():
    theta = ThetaSeries.equal_weights(2, 3)
    np.testing.assert_allclose(pooled_series(theta, np.array([[2.0, 4.0, 6.0], [0.0, 0.0, 2.0]])), [1.0, 2.0, 4.0])
    with pytest.raises(ValidationError):
        pooled_series(theta, np.ones((2, 4)))


def test_surplus_stats_with_constant_shares():
    losses = _losses([[0.0, 10.0], [4.0, 0.0]])
    stats = surplus_stats(ThetaSeries.equal_weights(2, 2), losses)
    assert stats.mean_surplus == pytest.approx(-3.5)
    assert stats.constant_theta_form == pytest.approx(-3.5)
    assert stats.covariance_term == 0.0
    assert stats.insurable == (False, False)


def test_cluster_stats(fixture_panel, fixture_prices, fixture_theta):
    losses = loss_gain_surplus(fixture_panel, fixture_prices, derive_thresholds(fixture_panel, 2 / 3))
    stats = cluster_stats(fixture_theta, losses)
    n = fixture_panel.n_years
    assert stats.var_loss == pytest.approx(stats.var_loss_population * n / (n - 1))
    assert stats.sd_loss == pytest.approx(np.sqrt(stats.var_loss))
    assert stats.crops == fixture_panel.crops
    assert len(stats.per_crop_insurable) == 3
    assert stats.phi == pytest.approx(coefficient_of_effectiveness(fixture_theta, losses))


def test_cluster_stats_reports_nan_phi_for_constant_losses():
    stats = cluster_stats(ThetaSeries.equal_weights(1, 3), _losses([[0.0, 0.0, 0.0]]))
    assert np.isnan(stats.phi)
    assert stats.var_loss == 0.0


def test_drop_uninsurable():
    years = range(2000, 2004)
    panel = panel_from_arrays(["a", "b"], years, [[1.0, 2.0, 3.0, 4.0]] * 2, np.ones((2, 4)))
    prices = constant_prices({"a": 1.0, "b": 1.0})
    thresholds = external_thresholds(panel, [2.0, 3.0])
    kept_panel, kept_thresholds, removed = drop_uninsurable(panel, prices, thresholds)
    assert removed == ["b"]
    assert kept_panel.crops == ("a",)
    assert kept_thresholds.mu_c.tolist() == [2.0]
    np.testing.assert_array_equal(derive_theta(kept_panel).shares, 1.0)


def test_drop_uninsurable_with_nothing_insurable():
    panel = panel_from_arrays(["a"], [2000, 2001], [[1.0, 2.0]], [[1.0, 1.0]])
    with pytest.raises(ValidationError):
        drop_uninsurable(panel, constant_prices({"a": 1.0}), external_thresholds(panel, [5.0]))


def test_gross_premium():
    premium = gross_premium(100.0, 20.0, 5.0)
    assert premium.gross == 125.0
    with pytest.raises(ValueError):
        gross_premium(-1.0, 0.0, 0.0)


@pytest.fixture
def hedged_panel():
    # b = 500 - a: whenever one crop is short the other is long
    a = np.random.default_rng(0).uniform(100.0, 400.0, 40)
    panel = panel_from_arrays(["a", "b"], range(1960, 2000), [a, 500.0 - a], np.full((2, 40), 7.0))
    return panel, constant_prices({"a": 1.3, "b": 1.3})


def test_hedged_crops_give_phi_near_zero(hedged_panel):
    panel, prices = hedged_panel
    losses = loss_gain_surplus(panel, prices, derive_thresholds(panel, 1.0))
    theta = derive_theta(panel)
    phi = coefficient_of_effectiveness(theta, losses)
    assert phi == pytest.approx(0.0, abs=1e-12)
    assert cluster_stats(theta, losses).phi == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_mean_weighted_loss_identity_on_random_panels(seed, random_panel):
    panel, prices = random_panel(3, 30 + seed, seed)
    theta = derive_theta(panel)
    losses = loss_gain_surplus(panel, prices, derive_thresholds(panel, 0.4))
    expected = sum(
        theta.alphas[j] * losses.losses[j].mean()
        + np.mean((theta.shares[j] - theta.shares[j].mean()) * (losses.losses[j] - losses.losses[j].mean()))
        for j in range(3)
    )
    assert mean_weighted_loss(theta, losses) == pytest.approx(expected, rel=1e-10)


def test_price_scaling(random_panel):
    panel, prices = random_panel(3, 50, 8)
    theta = derive_theta(panel)
    thresholds = derive_thresholds(panel, 0.5)
    base = loss_gain_surplus(panel, prices, thresholds)
    # a power of two keeps every product exact
    scaled = loss_gain_surplus(panel, prices.scaled(2.0), thresholds)
    np.testing.assert_array_equal(scaled.losses, 2.0 * base.losses)
    np.testing.assert_array_equal(scaled.gains, 2.0 * base.gains)
    np.testing.assert_array_equal(scaled.surplus, 2.0 * base.surplus)

    before, after = cluster_stats(theta, base), cluster_stats(theta, scaled)
    assert after.mean_loss == pytest.approx(2.0 * before.mean_loss, rel=1e-12)
    assert after.mean_surplus == pytest.approx(2.0 * before.mean_surplus, rel=1e-12)
    assert after.var_loss == pytest.approx(4.0 * before.var_loss, rel=1e-12)
    assert after.phi == pytest.approx(before.phi, rel=1e-12)


def test_equal_covariance_phi():
    rng = np.random.default_rng(21)
    n, v, c = 200_000, 100.0, 40.0
    common = rng.normal(0.0, np.sqrt(c), n)
    losses = _losses([200.0 + common + rng.normal(0.0, np.sqrt(v - c), n) for _ in range(3)])
    phi = coefficient_of_effectiveness(ThetaSeries.equal_weights(3, n), losses)
    assert phi == pytest.approx(1 / 3 + 2 * c / (3 * v), rel=0.02)


def test_single_crop_phi_is_one():
    losses = _losses([[0.0, 3.0, 1.0, 7.0, 2.0]])
    assert coefficient_of_effectiveness(ThetaSeries.equal_weights(1, 5), losses) == pytest.approx(1.0, rel=1e-12)


def test_identical_losses_do_not_diversify():
    row = [0.0, 3.0, 1.0, 7.0, 2.0]
    losses = _losses([row, row, row])
    assert coefficient_of_effectiveness(ThetaSeries.equal_weights(3, 5), losses) == pytest.approx(1.0, rel=1e-12)


def test_surplus_is_gain_when_no_crop_is_short(random_panel):
    panel, prices = random_panel(3, 25, 4)
    thresholds = external_thresholds(panel, panel.yields.min(axis=1))
    theta = derive_theta(panel)
    losses = loss_gain_surplus(panel, prices, thresholds)
    stats = surplus_stats(theta, losses)
    assert not losses.losses.any()
    assert stats.mean_surplus == stats.mean_gain
