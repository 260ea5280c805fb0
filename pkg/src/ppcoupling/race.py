"""Exponential-race coupling on finite supports.

One family of Exp(1) variates per seed races across atoms; the winner for a
probability vector p is argmin_a eps_a / p(a).  The same variates answer every
p, which is what makes the coupling global.  The exact coincidence probability
for two vectors has a closed form used as the oracle for the Monte Carlo
harness.

Countably infinite supports are deliberately out of scope here: every
desk-scale experiment uses finite E, and the lazy-tail machinery lives in the
point-process coupler, which subsumes this one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import DomainError
from .streams import TAG_RACE, derive_keys, exponentials, fold


def _check_prob_vector(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("probability vector must be 1-d and nonempty")
    if np.any(v < 0) or not np.isfinite(v).all():
        raise DomainError("probabilities must be finite and nonnegative")
    if v.sum() <= 0:
        raise DomainError("probability vector must not be all zero")
    return v


@dataclass(frozen=True)
class RaceSource:
    """Seed-determined family of i.i.d. Exp(1) variates, one per atom."""

    seed: int
    n_atoms: int
    replica: int = 0
    _key: int = field(init=False, default=0)

    def __post_init__(self):
        object.__setattr__(self, "_key", fold(TAG_RACE, self.seed, self.replica))

    def exponentials(self) -> np.ndarray:
        return exponentials(np.uint64(self._key), np.arange(self.n_atoms, dtype=np.uint64))


def race_sample(src: RaceSource, p) -> int:
    """Winner atom index: argmin_a eps_a / p(a), with p(a)=0 excluded.

    Floating-point ties break toward the smallest atom index (a measure-zero
    perturbation of the exact-arithmetic coupling).  The argmin is invariant
    under rescaling p, so unnormalized weight vectors are accepted.
    """
    v = _check_prob_vector(p)
    if len(v) != src.n_atoms:
        raise DomainError("vector length must match the source's atom count")
    eps = src.exponentials()
    with np.errstate(divide="ignore"):
        ratios = np.where(v > 0, eps / v, np.inf)
    return int(np.argmin(ratios))


def _race_samples_batch(seed: int, n_replicas: int, p: np.ndarray) -> np.ndarray:
    keys = derive_keys(fold(TAG_RACE, seed), np.arange(n_replicas))
    eps = exponentials(keys, np.arange(len(p), dtype=np.uint64))
    with np.errstate(divide="ignore"):
        ratios = np.where(p[None, :] > 0, eps / p[None, :], np.inf)
    return np.argmin(ratios, axis=1)


def race_coincidence_exact(p, q) -> float:
    """Exact probability that the race returns the same atom for p and q.

    Sums, over atoms a in the common support, the closed-form win
    probabilities 1 / sum_b max(p(b)/p(a), q(b)/q(a)).
    """
    vp = _check_prob_vector(p)
    vq = _check_prob_vector(q)
    if len(vp) != len(vq):
        raise DomainError("vectors must share the same support size")
    vp = vp / vp.sum()
    vq = vq / vq.sum()
    total = 0.0
    for a in np.flatnonzero((vp > 0) & (vq > 0)):
        lam = np.maximum(vp / vp[a], vq / vq[a])
        total += 1.0 / lam.sum()
    return total


def race_coincidence_mc(p, q, n_replicas: int, seed: int) -> tuple[float, float]:
    """Monte Carlo coincidence estimate with binomial standard error.

    Each replica is an independent RaceSource; both vectors are raced on the
    same variates.
    """
    if n_replicas < 1:
        raise DomainError("need at least one replica")
    vp = _check_prob_vector(p)
    vq = _check_prob_vector(q)
    a = _race_samples_batch(seed, n_replicas, vp)
    b = _race_samples_batch(seed, n_replicas, vq)
    est = float(np.mean(a == b))
    stderr = math.sqrt(est * (1.0 - est) / n_replicas)
    return est, stderr


def race_tv(p, q) -> float:
    """Total-variation distance between two probability vectors."""
    vp = _check_prob_vector(p)
    vq = _check_prob_vector(q)
    vp = vp / vp.sum()
    vq = vq / vq.sum()
    return float(np.clip(vp - vq, 0, None).sum())


def race_lower_bound(p, q) -> float:
    """Coincidence lower bound (1 - d) / (1 + d) with d the TV distance."""
    d = race_tv(p, q)
    return (1.0 - d) / (1.0 + d)
