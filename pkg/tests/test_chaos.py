import cmath
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_suspensions.chaos import (LevyMeasure, LevyTriplet, SimpleFunction, centering_shift,
                                       cf_idp, chaos1, chaos1_samples, chaos2_offdiag,
                                       check_lower_bounded, compose_simple, levy_of, triplet_of)
from poisson_suspensions.dynamics import MapSpec, suspend
from poisson_suspensions.errors import UncoveredRegion
from poisson_suspensions.intensity import Component, IntensityMeasure, RegionSet
from poisson_suspensions.rng import SeedSpec
from poisson_suspensions.sampler import Configuration, count, sample

LINE = IntensityMeasure.of(Component.constant("R", 1))
A = RegionSet.interval("R", 0, 1)
B = RegionSet.interval("R", 2, 3.5)


def hand(points, covered=RegionSet.interval("R", -1, 4)):
    arr = np.array(sorted(points), dtype=float).reshape(-1, 1)
    return Configuration(LINE, covered, {"R": arr} if points else {}, SeedSpec(0))


def test_zero_function():
    assert chaos1(SimpleFunction.zero(), hand([0.5])) == 0.0


def test_indicator_is_centered_count():
    cfg = sample(LINE, RegionSet.interval("R", -1, 4), SeedSpec(3))
    assert chaos1(SimpleFunction.indicator(A), cfg) == count(cfg, A) - 1.0


def test_two_term_function_on_three_points():
    # points 0.5 in A; 2.1 and 3.0 in B
    f = SimpleFunction(((2.0, A), (-1.0, B)))
    cfg = hand([0.5, 2.1, 3.0])
    assert chaos1(f, cfg) == 2 * 1 - 2 - (2 * 1.0 - 1.5)


def test_uncovered_region():
    with pytest.raises(UncoveredRegion):
        chaos1(SimpleFunction.indicator(A), hand([], RegionSet.interval("R", 0.5, 2)))


def test_overlapping_terms_rejected():
    with pytest.raises(ValueError):
        SimpleFunction(((1.0, A), (2.0, RegionSet.interval("R", 0.5, 2))))


def test_chaos2_empty_configuration():
    f = SimpleFunction(((2.0, A), (-1.0, B)))
    m = f.integral(LINE)
    assert chaos2_offdiag(f, hand([])) == m * m


def test_chaos2_single_point():
    f = SimpleFunction(((2.0, A), (-1.0, B)))
    m = f.integral(LINE)
    assert chaos2_offdiag(f, hand([2.5])) == -2 * m * (-1.0) + m * m


@given(st.lists(st.floats(-1, 3.999), max_size=8, unique=True))
def test_chaos2_matches_pair_sum(points):
    f = SimpleFunction(((2.0, A), (-1.0, B), (0.5, RegionSet.interval("R", 1.0, 1.75))))
    m = f.integral(LINE)
    vals = [f("R", (x,)) for x in points]
    brute = sum(vals[i] * vals[j] for i in range(len(vals)) for j in range(len(vals)) if i != j)
    expected = brute - 2 * m * sum(vals) + m * m
    assert math.isclose(chaos2_offdiag(f, hand(points)), expected, rel_tol=1e-12, abs_tol=1e-12)


def test_inner_product():
    f = SimpleFunction(((2.0, A), (-1.0, B)))
    g = SimpleFunction(((3.0, RegionSet.interval("R", 0.5, 2.5)),))
    assert math.isclose(f.inner(g, LINE), 2 * 3 * 0.5 - 1 * 3 * 0.5)


def test_chaos_equivariance():
    T = MapSpec.translation("R", 0.75)
    f = SimpleFunction(((2.0, A), (-1.0, B)))
    omega = sample(LINE, RegionSet.interval("R", -3, 5), SeedSpec(4))
    moved = suspend(T, omega)
    assert chaos1(f, moved) == chaos1(compose_simple(f, T), omega)


# -- Levy measures ---------------------------------------------------------------

def test_levy_of_indicator():
    mu = IntensityMeasure.of(Component.constant("R", 1, 2.0))
    assert levy_of(SimpleFunction.indicator(A), mu).atoms == ((1.0, 2.0),)


def test_levy_of_zero():
    assert levy_of(SimpleFunction.zero(), LINE).atoms == ()


def test_levy_merges_equal_coefficients():
    f = SimpleFunction(((2.0, A), (2.0, RegionSet.interval("R", 5, 8))))
    assert levy_of(f, LINE).atoms == ((2.0, 4.0),)


def test_no_atom_at_zero():
    with pytest.raises(ValueError):
        LevyMeasure(((0.0, 1.0),))


def test_cf_at_zero():
    tri = triplet_of(SimpleFunction(((2.0, A), (-1.0, B))), LINE)
    assert cf_idp(tri, 0.0) == 1.0


@pytest.mark.parametrize("lam", [0.5, 2.0, 7.0])
def test_centered_poisson_cf(lam):
    tri = LevyTriplet(LevyMeasure(((1.0, lam),)), 0.0)
    for t in np.linspace(-5, 5, 21):
        expected = cmath.exp(lam * (cmath.exp(1j * t) - 1) - 1j * t * lam)
        assert abs(cf_idp(tri, t) - expected) < 1e-13


@given(st.floats(-10, 10))
def test_cf_conjugate_symmetry(t):
    tri = triplet_of(SimpleFunction(((2.0, A), (-1.0, B), (0.3, RegionSet.interval("R", 1, 2)))), LINE)
    assert abs(cf_idp(tri, -t) - cf_idp(tri, t).conjugate()) < 1e-14


def test_cf_vectorized_matches_scalar():
    tri = triplet_of(SimpleFunction(((2.0, A), (-1.0, B))), LINE)
    t = np.linspace(-5, 5, 17)
    vec = cf_idp(tri, t)
    assert np.allclose(vec, [cf_idp(tri, float(x)) for x in t], rtol=0, atol=1e-15)


def test_centering_shift_makes_mean_zero():
    # mean of the law is b + sum_{|x|>1} x m; the small atoms are compensated inside
    lev = LevyMeasure(((2.0, 1.0), (-3.0, 0.5), (0.5, 4.0)))
    b = centering_shift(lev)
    h = 1e-5
    tri = LevyTriplet(lev, b)
    deriv = (cf_idp(tri, h) - cf_idp(tri, -h)) / (2 * h)
    assert abs(deriv) < 1e-8


def test_lower_bounded_cases():
    assert tuple(check_lower_bounded(LevyMeasure())) == (True, 0.0)
    assert tuple(check_lower_bounded(LevyMeasure(((-1.0, 0.5),)))) == (False, 0.0)
    mu2 = IntensityMeasure.of(Component.constant("R", 1, 2.5))
    ok, moment = check_lower_bounded(levy_of(SimpleFunction.indicator(A), mu2))
    assert ok and moment == 2.5


def test_indicator_chaos_is_bounded_below():
    f = SimpleFunction.indicator(A)
    cfgs = [sample(LINE, A, SeedSpec(5, i)) for i in range(200)]
    assert chaos1_samples(f, cfgs).min() >= -LINE.measure_of(A)
