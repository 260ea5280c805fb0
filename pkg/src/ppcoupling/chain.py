"""Stationary-process kernels, path simulation, and influence coefficients.

A model maps a finite past word to a one-step conditional density.  Infinite
pasts are represented by the word plus a frozen all-zeros boundary; for the
geometric families the boundary tail is summed in closed form, so kernel
evaluation carries no truncation error.  Shipped families:

- i.i.d. (discrete and continuous),
- finite-order Markov on a discrete space (order <= 4),
- long-memory binary kernel  f(1 | x) = 1/2 + sum_k a_k (x_{-k} - 1/2)
  with geometric weights a_k = c r^k,
- its continuous analogue on [0, 1]:
  f(a | x) = 1 + psi(a) sum_k a_k (x_{-k} - 1/2),  psi(a) = 2a - 1.

Pointwise influence at distance n (worst-case one-step TV when the past
beyond n changes) has closed forms per family; average influence is estimated
by Monte Carlo over independent path pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .errors import DomainError, UnsupportedModelError
from .measure import (
    Density,
    DiscreteSpace,
    IntervalSpace,
    N_CELLS,
    discrete_density,
    interval_density,
)
from .ppp import BatchRegion, batch_first_points, discrete_batch_region
from .streams import TAG_SIM, derive_keys, fold


class ChainModel:
    """Base: a one-step kernel with declared memory structure.

    Subclasses set `space` and a `memory` descriptor.
    """

    # -- single-word interface -------------------------------------------------
    def kernel(self, window: Sequence) -> Density:
        raise NotImplementedError

    # -- influence -------------------------------------------------------------
    def delta_exact(self, n: int) -> float:
        raise UnsupportedModelError(f"{type(self).__name__} has no closed-form influence")

    def delta_tail_sum(self, start: int) -> float:
        raise UnsupportedModelError(f"{type(self).__name__} has no closed-form influence tail")

    # -- batched simulation protocol --------------------------------------------
    def init_state(self, n_replicas: int):
        raise NotImplementedError

    def advance(self, state, xs: np.ndarray):
        raise NotImplementedError

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        raise NotImplementedError

    def path_dtype(self):
        return np.int64 if isinstance(self.space, DiscreteSpace) else np.float64

    def boundary_value(self):
        return 0 if isinstance(self.space, DiscreteSpace) else 0.0

    # TV between kernels conditioned on two words (zeros boundary before each)
    def kernel_tv_words(self, w1, w2) -> float:
        from .measure import tv_distance

        return tv_distance(self.kernel(w1), self.kernel(w2))


# -- i.i.d. ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IIDDiscreteModel(ChainModel):
    space: DiscreteSpace
    probs: tuple[float, ...]
    memory = "iid"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if len(p) != self.space.n_atoms or abs(p.sum() - 1) > 1e-9 or np.any(p < 0):
            raise DomainError("probs must be a probability vector on the atoms")

    def _values(self) -> np.ndarray:
        return np.asarray(self.probs) / self.space.weight_array()

    def kernel(self, window) -> Density:
        return discrete_density(self.space, self._values())

    def delta_exact(self, n: int) -> float:
        return 0.0

    def delta_tail_sum(self, start: int) -> float:
        return 0.0

    def init_state(self, n_replicas: int):
        return n_replicas

    def advance(self, state, xs):
        return state

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        return discrete_batch_region(self._values() * scale)

    def kernel_values(self, state) -> np.ndarray:
        return np.broadcast_to(self._values(), (state, self.space.n_atoms))


@dataclass(frozen=True, eq=False)
class IIDUniformModel(ChainModel):
    """i.i.d. with the uniform probability density on a bounded interval."""

    space: IntervalSpace
    memory = "iid"

    def _level(self) -> float:
        return 1.0 / self.space.total_measure

    def kernel(self, window) -> Density:
        lvl = self._level()
        return interval_density(self.space, lambda x: np.full_like(x, lvl), lvl)

    def delta_exact(self, n: int) -> float:
        return 0.0

    def delta_tail_sum(self, start: int) -> float:
        return 0.0

    def init_state(self, n_replicas: int):
        return n_replicas

    def advance(self, state, xs):
        return state

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        lvl = self._level() * scale
        return BatchRegion(
            envelope=np.full(N_CELLS, lvl),
            evaluate=lambda rep, xs, _l=lvl: np.full(len(xs), _l),
        )


# -- finite-order Markov ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteMarkovModel(ChainModel):
    """Order-m Markov chain on a discrete space; rows indexed by the last m symbols."""

    space: DiscreteSpace
    order: int
    rows: np.ndarray  # shape (A,) * order + (A,), rows are probability vectors

    def __post_init__(self):
        a = self.space.n_atoms
        rows = np.asarray(self.rows, dtype=np.float64)
        if self.order < 1 or self.order > 4:
            raise DomainError("shipped Markov orders are 1..4")
        if rows.shape != (a,) * self.order + (a,):
            raise DomainError("rows must have shape (A,)*order + (A,)")
        if np.any(rows < 0) or not np.allclose(rows.sum(axis=-1), 1.0, atol=1e-9):
            raise DomainError("each row must be a probability vector")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "memory", f"markov({self.order})")

    def _window_tuple(self, window) -> tuple:
        w = [self.boundary_value()] * self.order + [int(v) for v in window]
        return tuple(w[-self.order :])

    def kernel(self, window) -> Density:
        p = self.rows[self._window_tuple(window)]
        return discrete_density(self.space, p / self.space.weight_array())

    def delta_exact(self, n: int) -> float:
        if n >= self.order:
            return 0.0
        a = self.space.n_atoms
        w = self.space.weight_array()
        best = 0.0
        for z in product(range(a), repeat=n):
            rows = np.array(
                [self.rows[u + z] for u in product(range(a), repeat=self.order - n)]
            )
            diffs = 0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=-1)
            best = max(best, float(diffs.max()))
        return best

    def delta_tail_sum(self, start: int) -> float:
        return float(sum(self.delta_exact(n) for n in range(start, self.order)))

    def init_state(self, n_replicas: int):
        return np.zeros((n_replicas, self.order), dtype=np.int64)

    def advance(self, state, xs):
        return np.concatenate([state[:, 1:], np.asarray(xs, dtype=np.int64)[:, None]], axis=1)

    def kernel_values(self, state) -> np.ndarray:
        idx = tuple(state[:, k] for k in range(self.order))
        return self.rows[idx] / self.space.weight_array()

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        vals = self.kernel_values(state) * scale
        env = (self.rows.reshape(-1, self.space.n_atoms).max(axis=0) / self.space.weight_array()) * scale
        return discrete_batch_region(vals, envelope=env)

    def kernel_tv_words(self, w1, w2) -> float:
        p = self.rows[self._window_tuple(w1)]
        q = self.rows[self._window_tuple(w2)]
        return float(np.clip(p - q, 0, None).sum())

    def stationary_law(self) -> np.ndarray:
        """Stationary distribution of the order-m chain, marginalized to one step."""
        a = self.space.n_atoms
        states = list(product(range(a), repeat=self.order))
        t = np.zeros((len(states), len(states)))
        index = {s: i for i, s in enumerate(states)}
        for s in states:
            for nxt in range(a):
                t[index[s], index[s[1:] + (nxt,)]] += self.rows[s + (nxt,)]
        vals, vecs = np.linalg.eig(t.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
        v = v / v.sum()
        out = np.zeros(a)
        for s, i in index.items():
            out[s[-1]] += v[i]
        return out


# -- geometric long-memory families -------------------------------------------------


def _geometric_checks(c: float, r: float, max_swing: float):
    if not (0 < r < 1):
        raise DomainError("memory decay r must lie in (0, 1)")
    if not (0 <= c) or c * r / (1 - r) > max_swing:
        raise DomainError("influence weights too heavy for a positive kernel")


@dataclass(frozen=True, eq=False)
class GeometricBinaryModel(ChainModel):
    """Binary kernel f(1|x) = 1/2 + sum_{k>=1} c r^k (x_{-k} - 1/2), counting reference."""

    c: float
    r: float
    memory = "infinite-geometric"

    def __post_init__(self):
        _geometric_checks(self.c, self.r, 1.0 - 1e-9)
        object.__setattr__(self, "space", DiscreteSpace((1.0, 1.0)))

    @property
    def swing(self) -> float:
        """sup |sum a_k (x_{-k} - 1/2)| = c r / (2 (1 - r))."""
        return self.c * self.r / (2 * (1 - self.r))

    def _s_from_window(self, window) -> float:
        s = -self.swing  # all-zeros boundary tail in closed form
        for x in window:
            s = self.r * s + self.c * self.r * (float(x) - 0.5)
        return s

    def kernel(self, window) -> Density:
        p1 = 0.5 + self._s_from_window(window)
        return discrete_density(self.space, [1.0 - p1, p1])

    def delta_exact(self, n: int) -> float:
        # tail sum of the weights: sup TV over pasts agreeing on the last n
        return self.c * self.r ** (n + 1) / (1 - self.r)

    def delta_tail_sum(self, start: int) -> float:
        return self.c * self.r ** (start + 1) / (1 - self.r) ** 2

    def init_state(self, n_replicas: int):
        return np.full(n_replicas, -self.swing)

    def advance(self, state, xs):
        return self.r * state + self.c * self.r * (np.asarray(xs, dtype=np.float64) - 0.5)

    def kernel_values(self, state) -> np.ndarray:
        p1 = 0.5 + state
        return np.stack([1.0 - p1, p1], axis=1)

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        env = np.full(2, (0.5 + self.swing) * scale)
        return discrete_batch_region(self.kernel_values(state) * scale, envelope=env)

    def kernel_tv_words(self, w1, w2) -> float:
        return abs(self._s_from_window(w1) - self._s_from_window(w2))


@dataclass(frozen=True, eq=False)
class GeometricIntervalModel(ChainModel):
    """Kernel 1 + psi(a) sum_k c r^k (x_{-k} - 1/2) on [0, 1], psi(a) = 2a - 1."""

    c: float
    r: float
    memory = "infinite-geometric"

    def __post_init__(self):
        _geometric_checks(self.c, self.r, 2.0 - 1e-9)
        object.__setattr__(self, "space", IntervalSpace(0.0, 1.0, 1.0))

    @property
    def swing(self) -> float:
        return self.c * self.r / (2 * (1 - self.r))

    def _s_from_window(self, window) -> float:
        s = -self.swing
        for x in window:
            s = self.r * s + self.c * self.r * (float(x) - 0.5)
        return s

    def kernel(self, window) -> Density:
        s = self._s_from_window(window)
        return interval_density(
            self.space, lambda x, _s=s: 1.0 + (2.0 * x - 1.0) * _s, 1.0 + abs(s)
        )

    def delta_exact(self, n: int) -> float:
        # (1/2) * tail * int |psi| dpi = tail / 4
        return self.c * self.r ** (n + 1) / (1 - self.r) / 4.0

    def delta_tail_sum(self, start: int) -> float:
        return self.c * self.r ** (start + 1) / (1 - self.r) ** 2 / 4.0

    def init_state(self, n_replicas: int):
        return np.full(n_replicas, -self.swing)

    def advance(self, state, xs):
        return self.r * state + self.c * self.r * (np.asarray(xs, dtype=np.float64) - 0.5)

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        return BatchRegion(
            envelope=np.full(N_CELLS, (1.0 + self.swing) * scale),
            evaluate=lambda rep, xs, _s=state, _sc=scale: _sc
            * (1.0 + (2.0 * xs - 1.0) * _s[rep]),
        )

    def kernel_tv_words(self, w1, w2) -> float:
        return abs(self._s_from_window(w1) - self._s_from_window(w2)) / 4.0


# -- reweighting adapter --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReweightedModel(ChainModel):
    """The same process on the normalized reference pi' = pi / pi(E).

    Densities transform as f -> f * pi(E); sample paths and events are
    unchanged, which is what the priming construction needs.
    """

    base: ChainModel

    def __post_init__(self):
        c = self.base.space.total_measure
        object.__setattr__(self, "_factor", c)
        if isinstance(self.base.space, DiscreteSpace):
            sp = DiscreteSpace(tuple(w / c for w in self.base.space.weights), self.base.space.labels)
        else:
            s = self.base.space
            sp = IntervalSpace(s.lo, s.hi, s.ref_density / c)
        object.__setattr__(self, "space", sp)
        object.__setattr__(self, "memory", self.base.memory)

    def kernel(self, window) -> Density:
        d = self.base.kernel(window)
        if d.is_discrete:
            return discrete_density(self.space, d.values * self._factor)
        return interval_density(
            self.space,
            lambda x, _f=d.fn, _c=self._factor: _c * _f(x),
            envelope=(tuple(d.breakpoints), tuple(self._factor * v for v in _cell_to_piecewise(d))),
        )

    def delta_exact(self, n: int) -> float:
        return self.base.delta_exact(n)

    def delta_tail_sum(self, start: int) -> float:
        return self.base.delta_tail_sum(start)

    def init_state(self, n_replicas: int):
        return self.base.init_state(n_replicas)

    def advance(self, state, xs):
        return self.base.advance(state, xs)

    def kernel_values(self, state) -> np.ndarray:
        return self.base.kernel_values(state) * self._factor

    def kernel_region(self, state, scale: float = 1.0) -> BatchRegion:
        return self.base.kernel_region(state, scale=scale * self._factor)

    def kernel_tv_words(self, w1, w2) -> float:
        return self.base.kernel_tv_words(w1, w2)

    def path_dtype(self):
        return self.base.path_dtype()

    def boundary_value(self):
        return self.base.boundary_value()


def _cell_to_piecewise(d: Density):
    # envelope pieces between declared breakpoints: max of covered cells
    sp = d.space
    out = []
    for a, b in zip(d.breakpoints[:-1], d.breakpoints[1:]):
        lo_c = int(np.clip((a - sp.lo) / sp.cell_width, 0, N_CELLS - 1))
        hi_c = int(np.clip(math.ceil((b - sp.lo) / sp.cell_width) - 1, lo_c, N_CELLS - 1))
        out.append(float(d.cell_envelope[lo_c : hi_c + 1].max()))
    return out


def as_probability(model: ChainModel) -> ChainModel:
    """Reweight the model's reference measure to a probability if needed."""
    if model.space.is_probability:
        return model
    return ReweightedModel(model)


# -- simulation --------------------------------------------------------------------


def _sim_keys(seed: int, step: int, n_replicas: int) -> np.ndarray:
    return derive_keys(fold(TAG_SIM, seed, step), np.arange(n_replicas))


def simulate_paths(
    model: ChainModel, seed: int, n_replicas: int, length: int, burn_in: int = 0
) -> np.ndarray:
    """Paths via the coupling recursion, one fresh source per (step, replica).

    Burn-in steps run the same recursion before the recorded window so the
    recorded law is close to stationary; the kernel's frozen all-zeros
    boundary sits before everything.
    """
    paths = np.empty((n_replicas, length), dtype=model.path_dtype())
    state = model.init_state(n_replicas)
    for step in range(burn_in + length):
        region = model.kernel_region(state)
        res = batch_first_points(model.space, _sim_keys(seed, step, n_replicas), [region])
        xs = res[0].x
        if isinstance(model.space, DiscreteSpace):
            xs = xs.astype(np.int64)
        if step >= burn_in:
            paths[:, step - burn_in] = xs
        state = model.advance(state, xs)
    return paths


def simulate_path(model: ChainModel, seed: int, length: int, burn_in: int = 0) -> np.ndarray:
    """Single path of the coupling recursion; deterministic given the seed."""
    return simulate_paths(model, seed, 1, length, burn_in)[0]


# -- influence estimation -------------------------------------------------------------


def eta_mc(
    model: ChainModel,
    n: int,
    n_replicas: int,
    seed: int,
    depth: int = 40,
) -> tuple[float, float]:
    """Average influence at distance n by Monte Carlo over path pairs.

    Draws independent paths X (a depth-40 past) and Y (an n-window), then
    averages the TV distance between the kernel given Y's window alone and
    the kernel given X's past prepended to it.  Exact zeros (i.i.d. kernels,
    Markov offsets past the order) come out exactly zero.
    """
    if n < 0:
        raise DomainError("distance must be nonnegative")
    x_paths = simulate_paths(model, fold(seed, 0xE7A1), n_replicas, depth, burn_in=depth)
    y_paths = (
        simulate_paths(model, fold(seed, 0xE7A2), n_replicas, n, burn_in=depth)
        if n > 0
        else np.empty((n_replicas, 0), dtype=model.path_dtype())
    )
    tvs = _eta_tv_batch(model, x_paths, y_paths)
    est = float(tvs.mean())
    stderr = float(tvs.std(ddof=1) / math.sqrt(n_replicas)) if n_replicas > 1 else 0.0
    return est, stderr


def _eta_tv_batch(model: ChainModel, x_paths: np.ndarray, y_win: np.ndarray) -> np.ndarray:
    n_rep = x_paths.shape[0]
    if isinstance(model, (IIDDiscreteModel, IIDUniformModel)):
        return np.zeros(n_rep)
    base = model.base if isinstance(model, ReweightedModel) else model
    if isinstance(base, (GeometricBinaryModel, GeometricIntervalModel)):
        s_short = base.init_state(n_rep)
        s_long = base.init_state(n_rep)
        for k in range(x_paths.shape[1]):
            s_long = base.advance(s_long, x_paths[:, k])
        for k in range(y_win.shape[1]):
            s_short = base.advance(s_short, y_win[:, k])
            s_long = base.advance(s_long, y_win[:, k])
        scale = 1.0 if isinstance(base, GeometricBinaryModel) else 0.25
        return np.abs(s_long - s_short) * scale
    if isinstance(base, FiniteMarkovModel):
        st_short = base.init_state(n_rep)
        st_long = base.init_state(n_rep)
        for k in range(x_paths.shape[1]):
            st_long = base.advance(st_long, x_paths[:, k])
        for k in range(y_win.shape[1]):
            st_short = base.advance(st_short, y_win[:, k])
            st_long = base.advance(st_long, y_win[:, k])
        p = base.kernel_values(st_short) * base.space.weight_array()
        q = base.kernel_values(st_long) * base.space.weight_array()
        return np.clip(p - q, 0, None).sum(axis=1)
    # fallback: per-replica exact TV through the public kernel
    out = np.empty(n_rep)
    for i in range(n_rep):
        w1 = list(y_win[i])
        w2 = list(x_paths[i]) + list(y_win[i])
        out[i] = model.kernel_tv_words(w1, w2)
    return out


@dataclass(frozen=True)
class InfluenceProfile:
    """Influence coefficients up to a horizon: worst-case and average.

    gamma and alpha are reported only for families with closed forms (the
    i.i.d. models, where both vanish); suprema over uncountable pasts are out
    of reach for the long-memory families.
    """

    delta: np.ndarray
    eta: np.ndarray
    eta_stderr: np.ndarray
    gamma: np.ndarray | None = None
    alpha: np.ndarray | None = None


def influence_profile(
    model: ChainModel, max_n: int, n_replicas: int, seed: int, depth: int = 40
) -> InfluenceProfile:
    """delta_exact and eta_mc over distances 0..max_n, plus gamma/alpha if known."""
    ns = range(max_n + 1)
    delta = np.array([model.delta_exact(n) for n in ns])
    eta = np.empty(max_n + 1)
    se = np.empty(max_n + 1)
    for n in ns:
        eta[n], se[n] = eta_mc(model, n, n_replicas, fold(seed, n), depth=depth)
    base = model.base if isinstance(model, ReweightedModel) else model
    zeros = np.zeros(max_n + 1) if isinstance(base, (IIDDiscreteModel, IIDUniformModel)) else None
    return InfluenceProfile(delta=delta, eta=eta, eta_stderr=se, gamma=zeros, alpha=zeros)


def check_kernel_positivity(model: ChainModel, n_paths: int, length: int, seed: int) -> float:
    """Smallest kernel density value along simulated pasts (priming condition)."""
    paths = simulate_paths(model, seed, n_paths, length)
    state = model.init_state(n_paths)
    worst = np.inf
    for k in range(length):
        region = model.kernel_region(state)
        if region.values is not None:
            vals = region.values if region.values.ndim == 2 else np.broadcast_to(region.values, (n_paths, len(region.values)))
            worst = min(worst, float(vals.min()))
        else:
            grid = np.linspace(model.space.lo, model.space.hi, 257)
            for rep in range(0, n_paths, max(1, n_paths // 16)):
                worst = min(worst, float(region.evaluate(np.full(len(grid), rep), grid).min()))
        state = model.advance(state, paths[:, k])
    return worst


def exact_prefix_law(model: ChainModel, ell: int) -> dict[tuple, float]:
    """Law of the first ell symbols of the zeros-boundary chain (discrete only)."""
    if not isinstance(model.space, DiscreteSpace):
        raise UnsupportedModelError("exact prefix laws are enumerable on discrete spaces only")
    a = model.space.n_atoms
    w = model.space.weight_array()
    out: dict[tuple, float] = {(): 1.0}
    for _ in range(ell):
        nxt: dict[tuple, float] = {}
        for word, p in out.items():
            probs = model.kernel(list(word)).values * w
            for sym in range(a):
                nxt[word + (sym,)] = p * float(probs[sym])
        out = nxt
    return out
