"""Exponential race: exact coincidence oracle, marginals, and the TV bound."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import binom_band, random_prob_vector
from ppcoupling.errors import DomainError
from ppcoupling.race import (
    RaceSource,
    _race_samples_batch,
    race_coincidence_exact,
    race_coincidence_mc,
    race_lower_bound,
    race_sample,
    race_tv,
)


def test_point_mass_always_wins():
    p = [0.0, 1.0, 0.0]
    for seed in range(50):
        assert race_sample(RaceSource(seed, 3), p) == 1


def test_zero_probability_never_wins():
    p = [0.6, 0.0, 0.4]
    draws = _race_samples_batch(5, 5000, np.asarray(p))
    assert not np.any(draws == 1)


def test_marginal_two_atoms():
    draws = _race_samples_batch(11, 100_000, np.array([0.5, 0.5]))
    freq = float(np.mean(draws == 0))
    assert abs(freq - 0.5) <= binom_band(0.5, 100_000)


@pytest.mark.parametrize("size", [2, 3, 4])
def test_marginal_chisquare(size):
    rng = np.random.default_rng(size)
    p = random_prob_vector(rng, size)
    draws = _race_samples_batch(77 + size, 100_000, p)
    counts = np.bincount(draws, minlength=size)
    assert stats.chisquare(counts, p * 100_000).pvalue > 1e-4


def test_scale_invariance_of_argmin():
    p = np.array([0.2, 0.5, 0.3])
    for seed in range(200):
        src = RaceSource(seed, 3)
        assert race_sample(src, p) == race_sample(src, 10.0 * p)


def test_exact_identical_vectors():
    p = [0.3, 0.7]
    assert race_coincidence_exact(p, p) == pytest.approx(1.0, abs=1e-12)


def test_exact_hand_value():
    # row a=0: 1 + max(1, 3/7) = 2 -> 1/2 ; row a=1: max(1, 7/3) + 1 = 10/3 -> 3/10
    assert race_coincidence_exact([0.5, 0.5], [0.7, 0.3]) == pytest.approx(0.8, abs=1e-12)


def test_exact_disjoint_supports():
    assert race_coincidence_exact([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_exact_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_prob_vector(rng, 5)
        q = random_prob_vector(rng, 5)
        assert race_coincidence_exact(p, q) == pytest.approx(
            race_coincidence_exact(q, p), abs=1e-12
        )


def test_mc_identical_is_one():
    est, se = race_coincidence_mc([0.4, 0.6], [0.4, 0.6], 1000, 5)
    assert est == 1.0 and se == 0.0


def test_mc_disjoint_is_zero():
    est, _ = race_coincidence_mc([1.0, 0.0], [0.0, 1.0], 1000, 5)
    assert est == 0.0


def test_mc_matches_exact_oracle():
    exact = race_coincidence_exact([0.5, 0.5], [0.7, 0.3])
    est, se = race_coincidence_mc([0.5, 0.5], [0.7, 0.3], 100_000, 19)
    assert abs(est - exact) <= 3 * se


def test_validation_errors():
    with pytest.raises(DomainError):
        race_sample(RaceSource(1, 2), [0.0, 0.0])
    with pytest.raises(DomainError):
        race_coincidence_exact([0.5, 0.5], [1.0])
    with pytest.raises(DomainError):
        race_coincidence_mc([0.5, 0.5], [0.5, 0.5], 0, 1)


@settings(max_examples=200, derandomize=True)
@given(
    st.integers(2, 8).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n),
            st.lists(st.floats(1e-6, 1.0), min_size=n, max_size=n),
        )
    )
)
def test_lower_bound_property(pq):
    p = np.asarray(pq[0]); p = p / p.sum()
    q = np.asarray(pq[1]); q = q / q.sum()
    assert race_coincidence_exact(p, q) >= race_lower_bound(p, q) - 1e-12


def test_tv_helper(coin_densities):
    assert race_tv([0.5, 0.5], [0.7, 0.3]) == pytest.approx(0.2)
    assert race_lower_bound([0.5, 0.5], [0.7, 0.3]) == pytest.approx(2 / 3)
