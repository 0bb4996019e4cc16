import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_suspensions.chaos import LevyMeasure, LevyTriplet, cf_idp
from poisson_suspensions.errors import InsufficientReplicas
from poisson_suspensions.intensity import Component, IntensityMeasure, RegionSet
from poisson_suspensions.stats import (Affine, CappedCount, Count, ExpNegCount, IndicatorPositive,
                                       TestReport, birkhoff_tail_noise_floor, birkhoff_tail_weights,
                                       chisq_bins, chisq_poisson, empirical_cf, independence_test,
                                       limit_dispersion, mean_test, observable_from_dict,
                                       observable_mean, observable_variance, poisson_expectation)

LINE = IntensityMeasure.of(Component.constant("R", 1))
A = RegionSet.interval("R", 0, 1)


# -- Poisson moments ------------------------------------------------------------

def test_exp_neg_count_variance_closed_form():
    # probability generating function: E t^N = exp(m (t - 1)), at t = e^-1 and e^-2
    m = 1.0
    closed = math.exp(m * (math.exp(-2) - 1)) - math.exp(2 * m * (math.exp(-1) - 1))
    assert math.isclose(observable_variance(ExpNegCount(A), LINE), closed, rel_tol=1e-13)
    assert math.isclose(closed, 0.138739, abs_tol=5e-7)


def test_exp_neg_count_variance_monte_carlo():
    n = np.random.default_rng(0).poisson(1.0, 400000)
    v = np.exp(-n).var()
    assert abs(v - observable_variance(ExpNegCount(A), LINE)) < 2e-3


@pytest.mark.parametrize("lam", [0.0, 1e-9, 0.5, 7.0, 150.0])
def test_poisson_expectation_moments(lam):
    assert math.isclose(poisson_expectation(lambda n: 1.0, lam), 1.0, rel_tol=1e-12)
    assert math.isclose(poisson_expectation(lambda n: n, lam), lam, rel_tol=1e-12, abs_tol=1e-300)
    assert math.isclose(poisson_expectation(lambda n: n * (n - 1), lam), lam * lam,
                        rel_tol=1e-11, abs_tol=1e-300)


def test_observable_means():
    assert math.isclose(observable_mean(IndicatorPositive(A), LINE), 1 - math.exp(-1), rel_tol=1e-14)
    assert math.isclose(observable_mean(Count(A), LINE), 1.0, rel_tol=1e-14)
    two = RegionSet.interval("R", 0, 2)
    capped = observable_mean(CappedCount(two, 1), LINE)
    assert math.isclose(capped, 1 - math.exp(-2), rel_tol=1e-14)
    aff = Affine(((2.0, Count(A)), (-1.0, Count(two))), 0.5)
    assert math.isclose(observable_mean(aff, LINE), 2 - 2 + 0.5)


def test_observable_dict_round_trip():
    for o in (ExpNegCount(A), CappedCount(A, 3), IndicatorPositive(A), Count(A),
              Affine(((1.5, Count(A)), (2.0, ExpNegCount(A))), 1.0)):
        assert observable_from_dict(json.loads(json.dumps(o.to_dict()))) == o


# -- chi-square -----------------------------------------------------------------

def test_degenerate_poisson_passes():
    rep = chisq_poisson([0] * 1000, 1e-9)
    assert rep.passed and rep.p_value == 1.0


def test_correct_poisson_passes():
    counts = np.random.default_rng(1).poisson(2.0, 100000)
    assert chisq_poisson(counts, 2.0).passed


def test_shifted_poisson_fails():
    counts = np.random.default_rng(2).poisson(2.2, 100000)
    rep = chisq_poisson(counts, 2.0)
    assert not rep.passed and rep.p_value < 1e-20


def test_chisq_needs_replicas():
    with pytest.raises(InsufficientReplicas):
        chisq_poisson([1] * 999, 1.0)


@given(st.floats(0.01, 60), st.integers(1000, 200000))
def test_pooled_bins_have_enough_mass(mean, R):
    from scipy import stats as sps

    edges = chisq_bins(mean, R)
    assert edges[0] == 0 and edges == sorted(set(edges))
    for lo, hi in zip(edges, edges[1:]):
        assert R * (sps.poisson.cdf(hi - 1, mean) - sps.poisson.cdf(lo - 1, mean)) >= 5 - 1e-9


def test_report_is_deterministic_json():
    counts = np.random.default_rng(3).poisson(1.0, 2000)
    a, b = chisq_poisson(counts, 1.0, seed=3), chisq_poisson(counts, 1.0, seed=3)
    assert a.to_json() == b.to_json()
    assert TestReport(**json.loads(a.to_json())) == a


# -- independence -------------------------------------------------------------------

def test_identical_pairs_fail():
    x = np.random.default_rng(4).poisson(1.0, 5000)
    assert not independence_test(np.c_[x, x]).passed


def test_disjoint_counts_pass():
    rng = np.random.default_rng(5)
    assert independence_test(np.c_[rng.poisson(1.0, 10000), rng.poisson(2.0, 10000)], z=4).passed


def test_overlapping_counts_fail():
    # N_A = X + Z, N_B = Y + Z with Z the count of the unit overlap
    rng = np.random.default_rng(6)
    x, y, z = rng.poisson(1.0, (3, 10000))
    assert not independence_test(np.c_[x + z, y + z], z=4).passed


# -- characteristic functions ----------------------------------------------------------------

def test_cf_of_zeros_is_one():
    t = np.linspace(-5, 5, 11)
    assert np.all(empirical_cf(np.zeros(10), t) == 1.0)


def test_cf_at_zero_is_exactly_one():
    assert empirical_cf(np.random.default_rng(7).normal(size=100), [0.0])[0] == 1.0


def test_centered_poisson_cf_matches_levy_khintchine():
    R = 100000
    x = np.random.default_rng(8).poisson(2.0, R) - 2.0
    t = np.round(np.arange(-50, 51) * 0.1, 10)
    got = empirical_cf(x, t)
    target = cf_idp(LevyTriplet(LevyMeasure(((1.0, 2.0),)), 0.0), t)
    assert np.max(np.abs(got - target)) <= 5 / math.sqrt(R) + 1e-3


def test_mean_test_within_standard_errors():
    x = np.random.default_rng(9).normal(1.0, 2.0, 10000)
    assert mean_test(x, 1.0).passed
    assert not mean_test(x, 1.5).passed


# -- Birkhoff tail dispersion -----------------------------------------------------------

def test_constant_equal_trajectories_have_no_dispersion():
    assert limit_dispersion([np.full(100, 0.3)] * 30) == (0.0, 0.0)


def test_dispersion_needs_thirty_trajectories():
    with pytest.raises(InsufficientReplicas):
        limit_dispersion([np.zeros(10)] * 29)


@given(st.integers(2, 300), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_tail_weights_reproduce_tail_mean(n, frac, seed):
    f = np.random.default_rng(seed).normal(size=n)
    running = np.cumsum(f) / np.arange(1, n + 1)
    w = birkhoff_tail_weights(n, frac)
    m = max(1, int(round(frac * n)))
    assert math.isclose(float(w @ f), running[-m:].mean(), rel_tol=1e-9, abs_tol=1e-12)


def test_noise_floor_matches_iid_simulation():
    n, frac, trials = 400, 0.5, 4000
    f = np.random.default_rng(10).normal(size=(trials, n))
    running = np.cumsum(f, axis=1) / np.arange(1, n + 1)
    tails = running[:, -n // 2:].mean(axis=1)
    floor = birkhoff_tail_noise_floor(n, frac, 1.0)
    # sample variance of 4000 normals is within about 10 percent at 4.5 sd
    assert abs(tails.var(ddof=1) / floor - 1) < 0.1


def test_noise_floor_for_acceptance_run():
    var = observable_variance(ExpNegCount(A), LINE)
    floor = birkhoff_tail_noise_floor(2000, 0.5, var)
    assert 7e-5 < floor < 9e-5


# -- calibration meta-tests -----------------------------------------------------------------

def _rejection_bounds(alpha, runs):
    return alpha / 3 * runs, 3 * alpha * runs


@pytest.mark.slow
def test_chisq_calibration():
    alpha, runs, R = 1e-2, 10000, 1000
    rng = np.random.default_rng(11)
    rejections = sum(not chisq_poisson(rng.poisson(2.0, R), 2.0, alpha).passed for _ in range(runs))
    lo, hi = _rejection_bounds(alpha, runs)
    assert lo <= rejections <= hi


@pytest.mark.slow
def test_independence_calibration():
    alpha, runs, R = 1e-2, 10000, 1000
    rng = np.random.default_rng(12)
    rejections = sum(not independence_test(rng.poisson(1.5, (R, 2)), alpha).passed for _ in range(runs))
    lo, hi = _rejection_bounds(alpha, runs)
    assert lo <= rejections <= hi
