import numpy as np
import pytest

from src.dataset import DeclarationLog, panel_from_arrays
from src.empirics import (
    EXTERNAL,
    coincidence,
    crop_omega,
    derive_thresholds,
    empirical_cdf,
    external_thresholds,
    sample_cov,
    sample_moments,
    threshold_for_omega,
)
from src.errors import InsufficientDataError, ValidationError


def test_empirical_cdf_is_right_continuous():
    sample = [3.0, 1.0, 2.0, 2.0]
    assert empirical_cdf(sample, 0.5) == 0.0
    assert empirical_cdf(sample, 2.0) == 0.75
    assert empirical_cdf(sample, 10.0) == 1.0


@pytest.mark.parametrize(
    "omega, expected",
    [(0.3, 3.0), (0.25, 3.0), (0.2, 2.0), (0.01, 1.0), (1.0, 10.0), (0.95, 10.0)],
)
def test_threshold_is_ceiling_order_statistic(omega, expected):
    assert threshold_for_omega(np.arange(10, 0, -1), omega) == expected


@pytest.mark.parametrize("omega", [0.0, -0.1, 1.5])
def test_threshold_rejects_omega_outside_unit_interval(omega):
    with pytest.raises(ValidationError):
        threshold_for_omega([1.0, 2.0], omega)


@pytest.mark.parametrize("seed", range(5))
def test_threshold_is_smallest_value_reaching_omega(seed):
    rng = np.random.default_rng(seed)
    sample = rng.normal(500.0, 100.0, size=int(rng.integers(2, 60)))
    ordered = np.sort(sample)
    for omega in np.linspace(0.01, 1.0, 100):
        mu = threshold_for_omega(sample, omega)
        assert empirical_cdf(sample, mu) >= omega
        below = ordered[ordered < mu]
        if below.size:
            assert empirical_cdf(sample, below[-1]) < omega


def test_two_thirds_of_24_years_is_the_16th_value():
    sample = np.arange(1.0, 25.0)
    assert threshold_for_omega(sample, 16 / 24) == 16.0
    assert threshold_for_omega(sample, 2 / 3) == 16.0


def test_ties_push_crop_omega_above_target():
    panel = panel_from_arrays(["a"], range(2000, 2004), [[1.0, 2.0, 2.0, 3.0]], [[1.0] * 4])
    thresholds = derive_thresholds(panel, 0.5)
    assert thresholds.mu_c[0] == 2.0
    assert thresholds.omega_j[0] == 0.75
    assert thresholds.omega_slack[0] == pytest.approx(0.25)


def test_coincidence_uses_strict_inequality():
    panel = panel_from_arrays(["a"], range(2000, 2004), [[1.0, 3.0, 4.0, 2.0]], [[1.0] * 4])
    log = DeclarationLog(declared_years=frozenset({2000, 2001}), years=panel.years)
    thresholds = external_thresholds(panel, [3.0], log)
    # 2000 is below 3.0, 2001 sits exactly on it and does not count
    assert coincidence(panel, thresholds, log)[0] == 0.5
    assert thresholds.psi_true[0] == 0.5
    assert thresholds.psi_false[0] == 0.5
    assert thresholds.omega_target == EXTERNAL
    assert thresholds.omega_slack is None


def test_coincidence_needs_declarations():
    panel = panel_from_arrays(["a"], [2000, 2001], [[1.0, 2.0]], [[1.0, 1.0]])
    log = DeclarationLog(declared_years=frozenset(), years=panel.years)
    thresholds = derive_thresholds(panel, 0.5, log)
    assert thresholds.psi_true is None
    with pytest.raises(InsufficientDataError):
        coincidence(panel, thresholds, log)


def test_fixture_thresholds(fixture_panel, fixture_log):
    thresholds = derive_thresholds(fixture_panel, fixture_log.omega_hat, fixture_log)
    assert thresholds.crops == fixture_panel.crops
    assert np.all(thresholds.omega_j >= fixture_log.omega_hat)
    np.testing.assert_array_equal(crop_omega(fixture_panel, thresholds), thresholds.omega_j)
    assert np.all((thresholds.psi_true >= 0) & (thresholds.psi_true <= 1))
    for j in range(fixture_panel.n_crops):
        assert thresholds.mu_c[j] in fixture_panel.yields[j]


def test_external_thresholds_must_match_crops(fixture_panel):
    with pytest.raises(ValidationError):
        external_thresholds(fixture_panel, [100.0, 200.0])


def test_sample_moments():
    mean, var = sample_moments([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert var == pytest.approx(5 / 3)
    assert sample_moments([1.0, 2.0, 3.0, 4.0], ddof=0)[1] == pytest.approx(1.25)
    with pytest.raises(InsufficientDataError):
        sample_moments([1.0])


def test_sample_cov():
    assert sample_cov([1, 2, 3], [2, 4, 6]) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        sample_cov([1, 2], [1, 2, 3])
    with pytest.raises(InsufficientDataError):
        sample_cov([1], [1])
    assert sample_cov([4.0], [7.0], ddof=0) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_threshold_is_monotone_in_omega(seed):
    sample = np.random.default_rng(seed).gamma(3.0, 150.0, size=40)
    mus = [threshold_for_omega(sample, w) for w in np.linspace(0.01, 1.0, 200)]
    assert all(b >= a for a, b in zip(mus, mus[1:]))


def test_frequencies_do_not_depend_on_year_order(fixture_panel, fixture_log):
    rng = np.random.default_rng(17)
    order = rng.permutation(fixture_panel.n_years)
    flags = fixture_log.flags()[order]
    shuffled = panel_from_arrays(
        fixture_panel.crops, fixture_panel.years, fixture_panel.yields[:, order], fixture_panel.areas[:, order]
    )
    shuffled_log = DeclarationLog(
        declared_years=frozenset(y for y, f in zip(shuffled.years, flags) if f), years=shuffled.years
    )
    thresholds = derive_thresholds(fixture_panel, 0.5, fixture_log)
    moved = external_thresholds(shuffled, thresholds.mu_c, shuffled_log)

    np.testing.assert_array_equal(crop_omega(shuffled, moved), crop_omega(fixture_panel, thresholds))
    np.testing.assert_array_equal(coincidence(shuffled, moved, shuffled_log), coincidence(fixture_panel, thresholds, fixture_log))
    np.testing.assert_array_equal(derive_thresholds(shuffled, 0.5).mu_c, thresholds.mu_c)
