import math

import numpy as np
import pytest

from ppcoupling.measure import (
    DiscreteSpace,
    IntervalSpace,
    discrete_density,
    interval_density,
)


@pytest.fixture
def two_atoms():
    return DiscreteSpace((1.0, 1.0))


@pytest.fixture
def unit_interval():
    return IntervalSpace(0.0, 1.0, 1.0)


@pytest.fixture
def coin_densities(two_atoms):
    f = discrete_density(two_atoms, [0.5, 0.5])
    g = discrete_density(two_atoms, [0.7, 0.3])
    return f, g


@pytest.fixture
def interval_densities(unit_interval):
    f = interval_density(unit_interval, lambda x: np.ones_like(x), 1.0)
    g = interval_density(unit_interval, lambda x: 2.0 * x, ((0.0, 1.0), (2.0,)))
    return f, g


def binom_band(p: float, n: int, sigmas: float = 3.0) -> float:
    return sigmas * math.sqrt(max(p * (1.0 - p), 1e-300) / n)


def random_prob_vector(rng: np.random.Generator, size: int) -> np.ndarray:
    v = rng.dirichlet(np.ones(size))
    return v / v.sum()
