import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_suspensions.errors import DimensionMismatch, NonFiniteWindow, OverlappingBoxes, UnknownComponent
from poisson_suspensions.intensity import (Box, Component, Exponential, IntensityMeasure, Lebesgue,
                                           RegionSet, Steps, canonical_cells, measure_of,
                                           partition_window, profile_from_dict, region_difference,
                                           region_intersection)


def iv(a, b, c="R"):
    return RegionSet.interval(c, a, b)


# -- measure_of -------------------------------------------------------------

def test_unit_cube_has_mass_one():
    mu = IntensityMeasure.of(Component.constant("Q", 3))
    assert measure_of(mu, RegionSet.of(Box("Q", (0, 0, 0), (1, 1, 1)))) == 1.0


def test_exponential_box_mass_is_closed_form():
    mu = IntensityMeasure.of(Component.exponential("E", 1))
    a, b = -0.7, 1.3
    assert math.isclose(measure_of(mu, iv(a, b, "E")), math.exp(b) - math.exp(a), rel_tol=1e-15)


def test_shrunk_cube_mass_scales_by_exp_minus_abs_s():
    # sub-cube of side p e^{-|s|/d} in d-dim Lebesgue has mass e^{-|s|} p^d
    for d, p, s in [(1, 1.0, math.log(2)), (2, 2.0, -math.log(3)), (3, 1.5, 1.0)]:
        mu = IntensityMeasure.of(Component.constant("Q", d))
        q = p * math.exp(-abs(s) / d)
        m = measure_of(mu, RegionSet.of(Box("Q", (0.0,) * d, (q,) * d)))
        assert math.isclose(m, math.exp(-abs(s)) * p ** d, rel_tol=1e-14)


def test_step_profile_mass():
    prof = Steps(breaks=(0.0, 1.0, 3.0), levels=(2.0, 0.5))
    mu = IntensityMeasure.of(Component("K", (prof,)))
    assert math.isclose(measure_of(mu, iv(0.5, 2.0, "K")), 0.5 * 2 + 1.0 * 0.5)


def test_density_scale_and_product():
    mu = IntensityMeasure.of(Component.constant("P", 2, 0.5))
    assert measure_of(mu, RegionSet.of(Box("P", (0, 0), (2, 3)))) == 3.0


def test_unbounded_box_in_infinite_component_is_infinite(line):
    assert measure_of(line, iv(0, math.inf)) == math.inf


def test_unknown_component_raises(line):
    with pytest.raises(UnknownComponent):
        measure_of(line, iv(0, 1, "nope"))


def test_dimension_mismatch_raises(line):
    with pytest.raises(DimensionMismatch):
        measure_of(line, RegionSet.of(Box("R", (0, 0), (1, 1))))


def test_profiles_round_trip():
    for p in (Lebesgue(), Lebesgue(0.0, 1.0), Exponential(), Steps((0.0, 1.0, 2.0), (1.0, 3.0))):
        assert profile_from_dict(p.to_dict()) == p


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0, 1))
def test_exponential_inverse_cdf_lands_in_box(a, w, u):
    p = Exponential()
    x = p.inverse_cdf(a, a + w, u)
    assert a <= x < a + w


# -- partition_window ---------------------------------------------------------

def test_mass_one_window_is_one_cell(line):
    assert len(partition_window(iv(0, 1), 1.0, line)) == 1


def test_four_unit_cells(line):
    cells = partition_window(iv(0, 4), 1.0, line)
    assert len(cells) == 4
    assert all(measure_of(line, c) == 1.0 for c in cells)


def test_exponential_partition_masses_sum_to_e_minus_one():
    mu = IntensityMeasure.of(Component.exponential("E", 1))
    cells = partition_window(iv(0, 1, "E"), 0.5, mu)
    masses = [measure_of(mu, c) for c in cells]
    # independent oracle: closed-form integral of e^t over each returned cell
    oracle = sum(math.exp(c.boxes[0].upper[0]) - math.exp(c.boxes[0].lower[0]) for c in cells)
    assert max(masses) <= 0.5
    assert math.isclose(sum(masses), math.e - 1, rel_tol=1e-14)
    assert math.isclose(oracle, 1.718281828459045, rel_tol=1e-14)


def test_infinite_window_rejected(line):
    with pytest.raises(NonFiniteWindow):
        partition_window(iv(0, math.inf), 1.0, line)


@given(st.floats(-6, 1), st.floats(0.01, 2), st.floats(0.2, 3))
def test_partition_is_exact_cover(a, w, mcm):
    mu = IntensityMeasure.of(Component.exponential("E", 1))
    window = iv(a, a + w, "E")
    cells = partition_window(window, mcm, mu)
    assert all(measure_of(mu, c) <= mcm * (1 + 1e-12) for c in cells)
    union = RegionSet.empty()
    for c in cells:
        assert union.intersection(c).is_empty
        union = union.union(c)
    assert union == window.coalesce()
    assert math.isclose(sum(measure_of(mu, c) for c in cells), measure_of(mu, window), rel_tol=1e-12)


def test_canonical_cells_do_not_depend_on_window(plane):
    a = {c.index: c for c in canonical_cells(plane, Box("P", (0, 0), (2, 2)), 0.3)}
    b = {c.index: c for c in canonical_cells(plane, Box("P", (0.5, 0.5), (1.5, 3)), 0.3)}
    shared = a.keys() & b.keys()
    assert shared
    assert all(a[k] == b[k] for k in shared)


# -- region algebra -------------------------------------------------------------

def test_self_intersection(line):
    A = iv(0, 2)
    assert region_intersection(A, A) == A


def test_touching_intervals_do_not_intersect():
    assert region_intersection(iv(0, 1), iv(1, 2)).is_empty


def test_difference_half_open():
    assert region_difference(iv(0, 2), iv(1, 3)) == iv(0, 1)


def test_overlapping_boxes_rejected():
    with pytest.raises(OverlappingBoxes):
        RegionSet.of(Box.interval("R", 0, 2), Box.interval("R", 1, 3))


def test_union_coalesces_adjacent_pieces():
    assert iv(0, 1).union(iv(1, 2)) == iv(0, 2)


def test_coalesce_mixed_dimensions(mixed):
    r = RegionSet.of(Box.interval("R", 0, 1), Box("P", (0, 0), (1, 1))).union(
        RegionSet.of(Box.interval("R", 1, 2), Box("P", (1, 0), (2, 1))))
    assert r == RegionSet.of(Box.interval("R", 0, 2), Box("P", (0, 0), (2, 1)))


boxes2 = st.tuples(st.integers(-4, 4), st.integers(1, 4), st.integers(-4, 4), st.integers(1, 4)).map(
    lambda t: Box("P", (t[0] / 2, t[2] / 2), ((t[0] + t[1]) / 2, (t[2] + t[3]) / 2)))


@given(boxes2, boxes2)
def test_box_algebra_masses(a, b):
    mu = IntensityMeasure.of(Component.constant("P", 2))
    A, B = RegionSet.of(a), RegionSet.of(b)
    inter, diff, uni = A.intersection(B), A.difference(B), A.union(B)
    m = lambda r: measure_of(mu, r)  # noqa: E731
    assert math.isclose(m(diff) + m(inter), m(A), abs_tol=1e-12)
    assert math.isclose(m(uni), m(A) + m(B) - m(inter), abs_tol=1e-12)
    assert diff.intersection(B).is_empty
    assert inter.is_subset(A) and inter.is_subset(B)
    assert RegionSet.from_dict(uni.to_dict()) == uni


def test_component_round_trip(mixed):
    assert IntensityMeasure.from_dict(mixed.to_dict()) == mixed
