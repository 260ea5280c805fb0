"""The priming construction: innovation-built words that match the true path.

From a block of innovations alone, build a word Z and an event H such that,
conditionally on H, Z coincides with the hidden path with probability at
least 1 - epsilon.  Constants are found per induction step:

- m bounds the kernel given Z from above by m times the kernel given the
  true past, up to an integral defect <= the step target;
- n bounds the true kernel by a constant up to the same target;
- M = M(Z) in [n, n+1] levels the union subgraph so that the per-step event
  H' = {first point under f(.|Z)/m appears before the first point under M}
  has conditional probability exactly 1 / (m (n + 1)).

The per-step target is epsilon / (3 ell) for each of the two defects, so the
accumulated conditional mismatch over ell steps stays below epsilon.

Everything here sees only innovations and the model; the true path enters
solely through the conditional Monte Carlo that calibrates the constants.
The reference measure must be a probability: use chain.as_probability first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainModel, simulate_paths
from .errors import DomainError, EngineError, InsufficientReplicasError, SearchFailureError
from .governor import InnovationBatch, extract_batch
from .measure import Density, DiscreteSpace, IntervalSpace, N_CELLS, integrate_interval
from .ppp import BatchRegion, discrete_batch_region
from .streams import fold

PHI_TOL = 1e-9
MAX_POWER = 20


# -- the level map phi and its root -------------------------------------------------


def phi(density: Density, m: float, s: float) -> float:
    """integral of sup(f(x)/m, s) dpi for the given density f."""
    if density.is_discrete:
        w = density.space.weight_array()
        return float(np.maximum(density.values / m, s) @ w)
    return integrate_interval(
        density.space,
        lambda x: np.maximum(density.fn(x) / m, s),
        extra_breakpoints=density.breakpoints,
    )


def solve_M(density: Density, m: float, n: float) -> float:
    """The level M in [n, n+1] with phi(M) = n + 1, by bisection.

    A non-bracketing interval contradicts phi(n) <= n+1 <= phi(n+1) on a
    probability reference and therefore signals an integration bug.
    """
    if not density.space.is_probability:
        raise DomainError("the level equation assumes a probability reference measure")
    lo, hi = float(n), float(n) + 1.0
    flo, fhi = phi(density, m, lo), phi(density, m, hi)
    target = n + 1.0
    if flo > target + PHI_TOL or fhi < target - PHI_TOL:
        raise EngineError("phi bracket violated; integration inconsistency")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if phi(density, m, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    M = 0.5 * (lo + hi)
    if abs(phi(density, m, M) - target) > PHI_TOL:
        raise EngineError("phi root did not converge to tolerance")
    return M


def _solve_M_rows(space: DiscreteSpace, fz: np.ndarray, m: float, n: float) -> np.ndarray:
    """Vectorized bisection of phi over per-replica discrete kernel rows."""
    w = space.weight_array()
    scaled = fz / m
    lo = np.full(fz.shape[0], float(n))
    hi = lo + 1.0
    target = n + 1.0
    phi_lo = np.maximum(scaled, lo[:, None]) @ w
    phi_hi = np.maximum(scaled, hi[:, None]) @ w
    if np.any(phi_lo > target + PHI_TOL) or np.any(phi_hi < target - PHI_TOL):
        raise EngineError("phi bracket violated; integration inconsistency")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = np.maximum(scaled, mid[:, None]) @ w
        low = val < target
        lo = np.where(low, mid, lo)
        hi = np.where(low, hi, mid)
    return 0.5 * (lo + hi)


# -- constant search -----------------------------------------------------------------


def _mc_mean(values: np.ndarray) -> tuple[float, float]:
    est = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return est, se


def _doubling(eval_fn, target: float, what: str, max_power: int = MAX_POWER):
    trace = []
    for e in range(max_power + 1):
        cand = float(1 << e)
        est, se = eval_fn(cand)
        trace.append((cand, est, se))
        if est <= target - 2.0 * se:
            return cand, trace
    raise SearchFailureError(
        f"{what} exceeded 2**{max_power}: the model is priming-hostile at this epsilon",
        trace,
    )


def find_m(space: DiscreteSpace, fz: np.ndarray, fx: np.ndarray, epsilon: float) -> float:
    """Smallest power of two m with E int [f(.|Z) - m f(.|X)]+ dpi <= eps/3.

    `fz`, `fx` are per-replica kernel rows already conditioned on the running
    priming event; the Monte Carlo criterion is est <= eps/3 - 2 stderr.
    """
    w = space.weight_array()

    def ev(m):
        return _mc_mean(np.clip(fz - m * fx, 0.0, None) @ w)

    return _doubling(ev, epsilon / 3.0, "m search")[0]


def find_n(space: DiscreteSpace, fx: np.ndarray, epsilon: float) -> float:
    """Smallest power of two n with E int [f(.|X) - n]+ dpi <= eps/3."""
    w = space.weight_array()

    def ev(n):
        return _mc_mean(np.clip(fx - n, 0.0, None) @ w)

    return _doubling(ev, epsilon / 3.0, "n search")[0]


def find_n_and_M(space: DiscreteSpace, fx: np.ndarray, m: float, epsilon: float):
    """The constant n plus a solver mapping a realized Z-kernel row to M."""
    n = find_n(space, fx, epsilon)

    def solver(fz_row: np.ndarray) -> float:
        return float(_solve_M_rows(space, fz_row[None, :], m, n)[0])

    return n, solver


# -- certificates and the priming recursion ---------------------------------------------


@dataclass(frozen=True)
class StepConstants:
    m: float
    n: float

    @property
    def h_probability(self) -> float:
        return 1.0 / (self.m * (self.n + 1.0))


@dataclass
class PrimingCertificate:
    """Constants of the priming induction for a window of a given length."""

    epsilon: float
    ell: int
    steps: list[StepConstants]
    search_traces: list = field(default_factory=list)

    @property
    def h_probability_exact(self) -> float:
        out = 1.0
        for s in self.steps:
            out *= s.h_probability
        return out


def _require_probability(model: ChainModel):
    if not model.space.is_probability:
        raise DomainError(
            "priming requires a probability reference measure; wrap the model with as_probability()"
        )


def _level_region(model: ChainModel, levels: np.ndarray) -> BatchRegion:
    top = float(levels.max())
    if isinstance(model.space, DiscreteSpace):
        vals = np.repeat(levels[:, None], model.space.n_atoms, axis=1)
        return discrete_batch_region(vals, envelope=np.full(model.space.n_atoms, top))
    return BatchRegion(
        envelope=np.full(N_CELLS, top),
        evaluate=lambda rep, xs, _l=levels: _l[rep] * np.ones(len(xs)),
    )


def _levels_for_state(model: ChainModel, state, n_rep: int, const: StepConstants) -> np.ndarray:
    if isinstance(model.space, DiscreteSpace):
        fz = model.kernel_values(state)
        return _solve_M_rows(model.space, fz, const.m, const.n)
    region = model.kernel_region(state)
    out = np.empty(n_rep)
    for i in range(n_rep):
        dens = Density(
            space=model.space,
            fn=lambda x, _i=i, _r=region: _r.evaluate(np.full(len(x), _i), x),
            cell_envelope=region.envelope,
            breakpoints=(model.space.lo, model.space.hi),
            total_mass=1.0,
        )
        out[i] = solve_M(dens, const.m, const.n)
    return out


def prime(
    model: ChainModel,
    innovations: InnovationBatch,
    certificate: PrimingCertificate,
    start_step: int = 0,
):
    """Run the priming recursion on innovations alone.

    Returns (Z, H, H_steps): the innovation-built words, the priming event
    indicator, and the per-step event indicators.  For ell = 0 the word is
    empty and H is certain.
    """
    _require_probability(model)
    n_rep = innovations.n_replicas
    ell = certificate.ell
    z = np.empty((n_rep, ell), dtype=model.path_dtype())
    h = np.ones(n_rep, dtype=bool)
    h_steps = np.ones((n_rep, ell), dtype=bool)
    state = model.init_state(n_rep)
    discrete = isinstance(model.space, DiscreteSpace)
    for k, const in enumerate(certificate.steps):
        region_a = model.kernel_region(state, scale=1.0 / const.m)
        levels = _levels_for_state(model, state, n_rep, const)
        region_b = _level_region(model, levels)
        res_a, res_b = innovations.query(start_step + k, [region_a, region_b])
        h_steps[:, k] = res_a.t <= res_b.t
        h &= h_steps[:, k]
        xs = res_a.x.astype(np.int64) if discrete else res_a.x
        z[:, k] = xs
        state = model.advance(state, xs)
    return z, h, h_steps


@dataclass
class PrimingStudy:
    """A certificate plus the joint Monte Carlo it was calibrated on.

    `m_levels[:, k]` records the level variable M of step k per replica
    (a function of the realized Z word, always inside [n_k, n_k + 1]).
    """

    certificate: PrimingCertificate
    x_window: np.ndarray
    z: np.ndarray
    h: np.ndarray
    h_steps: np.ndarray
    m_levels: np.ndarray | None = None

    @property
    def n_replicas(self) -> int:
        return len(self.h)

    @property
    def h_rate(self) -> float:
        return float(self.h.mean())

    def per_step_h_rates(self) -> np.ndarray:
        return self.h_steps.mean(axis=0)

    def conditional_mismatch(self) -> tuple[float, float, int]:
        """(rate, stderr, successes) of P[X window != Z | H]."""
        sel = self.h
        n_h = int(sel.sum())
        if n_h == 0:
            raise InsufficientReplicasError("no priming successes in the replica budget")
        mism = np.any(self.x_window[sel] != self.z[sel], axis=1) if self.z.shape[1] else np.zeros(n_h, bool)
        rate = float(mism.mean())
        return rate, math.sqrt(max(rate * (1 - rate), 1e-300) / n_h), n_h


def certify(
    model: ChainModel,
    ell: int,
    epsilon: float,
    n_replicas: int,
    seed: int,
    burn_in: int = 40,
) -> PrimingStudy:
    """Find per-step constants by conditional Monte Carlo and run the recursion.

    Simulates replicas of the path with its innovations, then per induction
    step: keep the replicas where the running event holds, run the doubling
    searches at the per-step target epsilon/ell, solve the level equation for
    the realized Z words, and extend Z and H through the step's innovations.
    """
    _require_probability(model)
    if ell < 0 or epsilon <= 0:
        raise DomainError("need ell >= 0 and epsilon > 0")
    paths = simulate_paths(model, fold(seed, 0xA1), n_replicas, burn_in + ell)
    innovations = extract_batch(model, paths, fold(seed, 0xA2), skip_steps=burn_in)
    x_window = paths[:, burn_in:]

    n_rep = n_replicas
    discrete = isinstance(model.space, DiscreteSpace)
    z = np.empty((n_rep, ell), dtype=model.path_dtype())
    h = np.ones(n_rep, dtype=bool)
    h_steps = np.ones((n_rep, ell), dtype=bool)
    z_state = model.init_state(n_rep)
    x_state = model.init_state(n_rep)
    for k in range(burn_in):
        x_state = model.advance(x_state, paths[:, k])

    eps_step = epsilon / max(ell, 1)
    steps: list[StepConstants] = []
    traces = []
    m_levels = np.empty((n_rep, ell))
    for k in range(ell):
        sel = np.flatnonzero(h)
        if len(sel) == 0:
            raise InsufficientReplicasError(f"no conditioning successes left at step {k}")
        if discrete:
            fz = model.kernel_values(z_state)
            fx = model.kernel_values(x_state)
            m_k, tr_m = _doubling(
                lambda m: _mc_mean(
                    np.clip(fz[sel] - m * fx[sel], 0.0, None) @ model.space.weight_array()
                ),
                eps_step / 3.0,
                f"m search (step {k})",
            )
            n_k, tr_n = _doubling(
                lambda n: _mc_mean(
                    np.clip(fx[sel] - n, 0.0, None) @ model.space.weight_array()
                ),
                eps_step / 3.0,
                f"n search (step {k})",
            )
        else:
            m_k, tr_m = _doubling(
                lambda m: _mc_mean(_interval_defect_scaled(model, z_state, x_state, sel, m)),
                eps_step / 3.0,
                f"m search (step {k})",
            )
            n_k, tr_n = _doubling(
                lambda n: _mc_mean(_interval_defect_level(model, x_state, sel, n)),
                eps_step / 3.0,
                f"n search (step {k})",
            )
        const = StepConstants(m=m_k, n=n_k)
        steps.append(const)
        traces.append({"step": k, "m": tr_m, "n": tr_n})

        region_a = model.kernel_region(z_state, scale=1.0 / const.m)
        levels = _levels_for_state(model, z_state, n_rep, const)
        m_levels[:, k] = levels
        region_b = _level_region(model, levels)
        res_a, res_b = innovations.query(k, [region_a, region_b])
        h_steps[:, k] = res_a.t <= res_b.t
        h &= h_steps[:, k]
        xs = res_a.x.astype(np.int64) if discrete else res_a.x
        z[:, k] = xs
        z_state = model.advance(z_state, xs)
        x_state = model.advance(x_state, paths[:, burn_in + k])

    cert = PrimingCertificate(epsilon=epsilon, ell=ell, steps=steps, search_traces=traces)
    return PrimingStudy(
        certificate=cert, x_window=x_window, z=z, h=h, h_steps=h_steps, m_levels=m_levels
    )


def _interval_defect_scaled(model, z_state, x_state, sel, m) -> np.ndarray:
    rz = model.kernel_region(z_state)
    rx = model.kernel_region(x_state)
    out = np.empty(len(sel))
    for j, i in enumerate(sel):
        out[j] = integrate_interval(
            model.space,
            lambda x, _i=i: np.clip(
                rz.evaluate(np.full(len(x), _i), x) - m * rx.evaluate(np.full(len(x), _i), x),
                0.0,
                None,
            ),
        )
    return out


def _interval_defect_level(model, x_state, sel, n) -> np.ndarray:
    rx = model.kernel_region(x_state)
    out = np.empty(len(sel))
    for j, i in enumerate(sel):
        out[j] = integrate_interval(
            model.space,
            lambda x, _i=i: np.clip(rx.evaluate(np.full(len(x), _i), x) - n, 0.0, None),
        )
    return out
