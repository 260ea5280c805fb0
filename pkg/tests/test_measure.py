"""State spaces, densities, TV distance, subgraph measures, influence sums."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppcoupling.errors import DomainError
from ppcoupling.measure import (
    DiscreteSpace,
    IntervalSpace,
    Region,
    discrete_density,
    influence_check_h,
    integrate_interval,
    interval_density,
    subgraph_measures,
    tv_distance,
)


def test_tv_identical_is_zero(two_atoms):
    f = discrete_density(two_atoms, [0.5, 0.5])
    assert tv_distance(f, f) == 0.0


def test_tv_hand_sum(coin_densities):
    f, g = coin_densities
    assert tv_distance(f, g) == pytest.approx(0.2, abs=1e-15)
    assert tv_distance(g, f) == pytest.approx(0.2, abs=1e-15)


def test_tv_disjoint_point_masses(two_atoms):
    f = discrete_density(two_atoms, [1.0, 0.0])
    g = discrete_density(two_atoms, [0.0, 1.0])
    assert tv_distance(f, g) == pytest.approx(1.0)


def test_tv_weighted_space():
    sp = DiscreteSpace((0.5, 1.5))
    f = discrete_density(sp, [2.0, 0.0])      # mass 1 at atom 0
    g = discrete_density(sp, [0.0, 2 / 3])    # mass 1 at atom 1
    assert tv_distance(f, g) == pytest.approx(1.0)


def test_subgraph_hand_sums(coin_densities):
    f, g = coin_densities
    inter, union, sym = subgraph_measures(f, g)
    assert (inter, union, sym) == pytest.approx((0.8, 1.2, 0.4))


def test_subgraph_identical(coin_densities):
    f, _ = coin_densities
    assert subgraph_measures(f, f) == pytest.approx((1.0, 1.0, 0.0))


def test_subgraph_continuous(interval_densities):
    f, g = interval_densities
    inter, union, sym = subgraph_measures(f, g)
    # int min(1, 2x) = int_0^.5 2x + int_.5^1 1 = 3/4
    assert inter == pytest.approx(0.75, abs=1e-8)
    assert union == pytest.approx(1.25, abs=1e-8)
    assert sym == pytest.approx(0.5, abs=1e-8)


def test_tv_continuous(interval_densities):
    f, g = interval_densities
    assert tv_distance(f, g) == pytest.approx(0.25, abs=1e-8)


def test_min_max_identity_exact_discrete(coin_densities):
    f, g = coin_densities
    inter, union, _ = subgraph_measures(f, g)
    assert inter + union == pytest.approx(f.total_mass + g.total_mass, abs=1e-12)


def test_tv_vs_subgraph_relation(coin_densities):
    f, g = coin_densities
    d = tv_distance(f, g)
    inter, union, _ = subgraph_measures(f, g)
    assert d == pytest.approx(1.0 - inter, abs=1e-9)
    assert 1.0 + d == pytest.approx(union, abs=1e-9)


def test_tv_vs_subgraph_relation_continuous(interval_densities):
    f, g = interval_densities
    d = tv_distance(f, g)
    inter, union, _ = subgraph_measures(f, g)
    assert d == pytest.approx(1.0 - inter, abs=1e-7)
    assert 1.0 + d == pytest.approx(union, abs=1e-7)


def test_mismatched_spaces_rejected(two_atoms):
    other = DiscreteSpace((1.0, 1.0, 1.0))
    f = discrete_density(two_atoms, [0.5, 0.5])
    g = discrete_density(other, [0.4, 0.3, 0.3])
    with pytest.raises(DomainError):
        tv_distance(f, g)


def test_tv_requires_probability(two_atoms):
    f = discrete_density(two_atoms, [0.5, 0.5])
    g = discrete_density(two_atoms, [0.7, 0.7])
    with pytest.raises(DomainError):
        tv_distance(f, g)


@st.composite
def prob_vectors(draw, size):
    raw = draw(
        st.lists(st.floats(1e-3, 1.0), min_size=size, max_size=size)
    )
    v = np.asarray(raw)
    return v / v.sum()


@settings(max_examples=100, derandomize=True)
@given(prob_vectors(4), prob_vectors(4), prob_vectors(4))
def test_tv_triangle_inequality(p, q, r):
    sp = DiscreteSpace((1.0,) * 4)
    f, g, h = (discrete_density(sp, v) for v in (p, q, r))
    assert tv_distance(f, h) <= tv_distance(f, g) + tv_distance(g, h) + 1e-12


@settings(max_examples=100, derandomize=True)
@given(prob_vectors(5), prob_vectors(5))
def test_tv_bounds_and_symmetry(p, q):
    sp = DiscreteSpace((1.0,) * 5)
    f, g = discrete_density(sp, p), discrete_density(sp, q)
    d = tv_distance(f, g)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert d == pytest.approx(tv_distance(g, f), abs=1e-12)
    inter, union, sym = subgraph_measures(f, g)
    assert inter + union == pytest.approx(2.0, abs=1e-9)
    assert sym == pytest.approx(2 * d, abs=1e-9)


# -- interval machinery ---------------------------------------------------------


def test_envelope_must_dominate(unit_interval):
    with pytest.raises(DomainError):
        interval_density(unit_interval, lambda x: 2.0 * x, 1.0)


def test_envelope_infinite_rejected(unit_interval):
    with pytest.raises(DomainError):
        interval_density(unit_interval, lambda x: np.ones_like(x), float("inf"))


def test_region_positive_measure(two_atoms):
    with pytest.raises(DomainError):
        discrete_density(two_atoms, [0.0, 0.0])
    r = Region(discrete_density(two_atoms, [0.5, 0.5]))
    assert r.measure == pytest.approx(1.0)


def test_interval_space_validation():
    with pytest.raises(DomainError):
        IntervalSpace(1.0, 0.0)
    with pytest.raises(DomainError):
        IntervalSpace(0.0, 1.0, ref_density=0.0)


def test_quadrature_kinked_integrand(unit_interval):
    # |x - 1/3| integrates to 5/18; kink away from panel bounds
    val = integrate_interval(unit_interval, lambda x: np.abs(x - 1 / 3), tol=1e-10)
    assert val == pytest.approx(5 / 18, abs=1e-8)


def test_scaled_density(unit_interval):
    f = interval_density(unit_interval, lambda x: np.ones_like(x), 1.0)
    h = f.scaled(0.5)
    assert h.total_mass == pytest.approx(0.5)
    assert float(h.evaluate(np.array([0.3]))[0]) == pytest.approx(0.5)


# -- influence partial sums --------------------------------------------------------


def test_influence_check_all_zero():
    total, prods = influence_check_h([0.0] * 11, 10)
    assert total == pytest.approx(11.0)
    assert np.all(prods == 1.0)


def test_influence_check_all_one():
    total, _ = influence_check_h([1.0] * 11, 10)
    assert total == pytest.approx(0.0)


def test_influence_check_geometric():
    total, prods = influence_check_h([0.5] * 4, 3)
    assert total == pytest.approx(0.9375)
    assert prods == pytest.approx([0.5, 0.25, 0.125, 0.0625])


def test_influence_check_validation():
    with pytest.raises(DomainError):
        influence_check_h([0.5, 1.5], 1)
    with pytest.raises(DomainError):
        influence_check_h([0.5, 0.5], 2)


@settings(max_examples=50, derandomize=True)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
def test_influence_partial_sum_bounds(eps):
    total, prods = influence_check_h(eps, len(eps) - 1)
    assert 0.0 <= total <= len(eps) + 1e-9
    assert np.all(np.diff(prods) <= 1e-15)  # partial products non-increasing
