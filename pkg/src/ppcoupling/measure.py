"""State spaces, densities with dominating envelopes, and total-variation ops.

Two backends ship: finite discrete spaces (atom weights) and bounded real
intervals with a constant reference density relative to length.  Densities are
immutable, carry their envelope and cached total mass, and are the only
currency the point-process engine accepts: the envelope's finite integral is
what makes lazy materialization terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

#: number of dyadic cells an interval is split into (width 2**-10 * (hi-lo))
N_CELLS = 1024

#: absolute tolerance for interval integrals
QUAD_TOL = 1e-8

#: tolerance on |total mass - 1| for probability densities
MASS_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteSpace:
    """Finite set of atoms with strictly positive reference weights."""

    weights: tuple[float, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.weights) == 0:
            raise DomainError("discrete space needs at least one atom")
        if any(not np.isfinite(w) or w <= 0 for w in self.weights):
            raise DomainError("atom weights must be strictly positive and finite")
        if self.labels is not None and len(self.labels) != len(self.weights):
            raise DomainError("labels length must match weights length")

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def total_measure(self) -> float:
        return float(sum(self.weights))

    @property
    def is_probability(self) -> bool:
        return abs(self.total_measure - 1.0) <= MASS_TOL

    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


@dataclass(frozen=True)
class IntervalSpace:
    """Bounded interval [lo, hi] with constant reference density vs length.

    `slab_decomposition` is reserved for an unbounded sigma-finite backend;
    the shipped experiments never need one, so it must stay None for now.
    """

    lo: float
    hi: float
    ref_density: float = 1.0
    slab_decomposition: tuple | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise DomainError("interval needs finite lo < hi")
        if not (np.isfinite(self.ref_density) and self.ref_density > 0):
            raise DomainError("reference density must be positive and finite")
        if self.slab_decomposition is not None:
            raise DomainError("unbounded slab decompositions are not implemented")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def cell_width(self) -> float:
        return self.width / N_CELLS

    @property
    def total_measure(self) -> float:
        return self.ref_density * self.width

    @property
    def is_probability(self) -> bool:
        return abs(self.total_measure - 1.0) <= MASS_TOL

    def cell_edges(self) -> np.ndarray:
        return self.lo + np.arange(N_CELLS + 1) * self.cell_width


StateSpace = DiscreteSpace | IntervalSpace


def _check_same_space(f: "Density", g: "Density") -> None:
    if f.space != g.space:
        raise DomainError("densities live on different state spaces")


@dataclass(frozen=True)
class Density:
    """A nonnegative density wrt the space's reference measure.

    Discrete densities store per-atom values; interval densities store a
    vectorized evaluator plus a per-cell constant envelope dominating it.
    `breakpoints` lists the declared discontinuities of the envelope and is
    used as mandatory quadrature panel boundaries.
    """

    space: StateSpace
    values: np.ndarray | None = None          # discrete backend
    fn: Callable[[np.ndarray], np.ndarray] | None = None  # interval backend
    cell_envelope: np.ndarray | None = None   # per-cell dominating constants
    breakpoints: tuple[float, ...] = ()
    total_mass: float = field(default=0.0)

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.space, DiscreteSpace)

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= MASS_TOL

    def evaluate(self, x):
        """Density value at points of E (atom indices or reals)."""
        if self.is_discrete:
            return self.values[np.asarray(x, dtype=np.intp)]
        return self.fn(np.asarray(x, dtype=np.float64))

    def scaled(self, alpha: float) -> "Density":
        """The density alpha * f (subgraph scales accordingly)."""
        if not (np.isfinite(alpha) and alpha > 0):
            raise DomainError("scale factor must be positive and finite")
        if self.is_discrete:
            return discrete_density(self.space, self.values * alpha)
        base_fn = self.fn
        return Density(
            space=self.space,
            fn=lambda x, _f=base_fn, _a=alpha: _a * _f(x),
            cell_envelope=self.cell_envelope * alpha,
            breakpoints=self.breakpoints,
            total_mass=self.total_mass * alpha,
        )

    def envelope_values(self) -> np.ndarray:
        """Per-atom (discrete) or per-cell (interval) dominating constants."""
        if self.is_discrete:
            return self.values
        return self.cell_envelope


def discrete_density(space: DiscreteSpace, values) -> Density:
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != (space.n_atoms,):
        raise DomainError("density values must match the atom count")
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise DomainError("density values must be finite and nonnegative")
    mass = float(vals @ space.weight_array())
    if not (0 < mass < np.inf):
        raise DomainError("total mass must be positive and finite")
    return Density(space=space, values=vals, total_mass=mass)


def _refine_envelope(space: IntervalSpace, breakpoints, values) -> np.ndarray:
    """Per-cell constants dominating a declared piecewise-constant envelope."""
    bp = np.asarray(breakpoints, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if bp.ndim != 1 or len(bp) != len(vals) + 1:
        raise DomainError("envelope needs len(breakpoints) == len(values) + 1")
    if not (np.all(np.diff(bp) > 0) and bp[0] <= space.lo + 1e-12 and bp[-1] >= space.hi - 1e-12):
        raise DomainError("envelope breakpoints must increase and cover the interval")
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise DomainError("envelope values must be finite and nonnegative")
    edges = space.cell_edges()
    out = np.empty(N_CELLS)
    for c in range(N_CELLS):
        a, b = edges[c], edges[c + 1]
        lo_i = max(0, np.searchsorted(bp, a, side="right") - 1)
        hi_i = min(len(vals) - 1, max(lo_i, np.searchsorted(bp, b, side="left") - 1))
        out[c] = vals[lo_i : hi_i + 1].max()
    return out


def interval_density(
    space: IntervalSpace,
    fn: Callable[[np.ndarray], np.ndarray],
    envelope: float | tuple[Sequence[float], Sequence[float]],
    breakpoints: Sequence[float] = (),
    spot_check: bool = True,
) -> Density:
    """Interval density from a vectorized evaluator and a dominating envelope.

    `envelope` is either a constant bound or a (breakpoints, values)
    piecewise-constant description; it is refined to the dyadic cell grid.
    The constructor spot-checks domination on cell midpoints and edges.
    """
    if isinstance(envelope, (int, float)):
        env_bp = (space.lo, space.hi)
        env_vals = (float(envelope),)
    else:
        env_bp, env_vals = envelope
    cell_env = _refine_envelope(space, env_bp, env_vals)
    if not np.all(np.isfinite(cell_env)):
        raise DomainError("envelope integral must be finite")

    decl = sorted(set(float(b) for b in tuple(env_bp) + tuple(breakpoints)))
    decl = tuple(b for b in decl if space.lo < b < space.hi)

    if spot_check:
        edges = space.cell_edges()
        probes = np.concatenate([edges[:-1] + space.cell_width / 2, edges])
        fv = np.asarray(fn(probes), dtype=np.float64)
        if np.any(~np.isfinite(fv)) or np.any(fv < -1e-12):
            raise DomainError("density evaluator must be finite and nonnegative")
        cells = np.clip(((probes - space.lo) / space.cell_width).astype(int), 0, N_CELLS - 1)
        if np.any(fv > cell_env[cells] + 1e-12):
            raise DomainError("envelope fails to dominate the density at sampled points")

    mass = integrate_interval(space, fn, extra_breakpoints=decl)
    if not (0 < mass < np.inf):
        raise DomainError("total mass must be positive and finite")
    return Density(
        space=space,
        fn=fn,
        cell_envelope=cell_env,
        breakpoints=(space.lo,) + decl + (space.hi,),
        total_mass=mass,
    )


def constant_density(space: StateSpace, level: float) -> Density:
    """The constant density x -> level (subgraph is a horizontal slab)."""
    if not (np.isfinite(level) and level > 0):
        raise DomainError("constant level must be positive")
    if isinstance(space, DiscreteSpace):
        return discrete_density(space, np.full(space.n_atoms, level))
    return interval_density(space, lambda x, _l=level: np.full_like(x, _l, dtype=np.float64), level)


# -- quadrature ---------------------------------------------------------------


def integrate_interval(
    space: IntervalSpace,
    fn: Callable[[np.ndarray], np.ndarray],
    extra_breakpoints: Sequence[float] = (),
    tol: float = QUAD_TOL,
) -> float:
    """Integral of fn against pi over [lo, hi], adaptive Simpson per panel.

    Declared breakpoints are mandatory panel boundaries; the target absolute
    tolerance is split between panels.
    """
    pts = sorted({space.lo, space.hi, *(float(b) for b in extra_breakpoints if space.lo < float(b) < space.hi)})
    panels = list(zip(pts[:-1], pts[1:]))
    per_panel = tol / len(panels)
    total = 0.0
    for a, b in panels:
        total += _adaptive_simpson(fn, a, b, per_panel)
    return total * space.ref_density


def _adaptive_simpson(fn, a: float, b: float, tol: float, max_depth: int = 48) -> float:
    """Iterative adaptive Simpson with vectorized refinement."""
    lo = np.array([a])
    hi = np.array([b])
    f_lo = np.asarray(fn(lo), dtype=np.float64)
    f_hi = np.asarray(fn(hi), dtype=np.float64)
    mid = (lo + hi) / 2
    f_mid = np.asarray(fn(mid), dtype=np.float64)
    whole = (hi - lo) / 6 * (f_lo + 4 * f_mid + f_hi)
    tols = np.array([tol])
    total = 0.0
    for _ in range(max_depth):
        lm = (lo + mid) / 2
        rm = (mid + hi) / 2
        f_lm = np.asarray(fn(lm), dtype=np.float64)
        f_rm = np.asarray(fn(rm), dtype=np.float64)
        left = (mid - lo) / 6 * (f_lo + 4 * f_lm + f_mid)
        right = (hi - mid) / 6 * (f_mid + 4 * f_rm + f_hi)
        err = left + right - whole
        done = np.abs(err) <= 15 * tols
        total += float(np.sum((left + right + err / 15)[done]))
        keep = ~done
        if not np.any(keep):
            return total
        # split every unfinished interval into its two halves
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        f_lo = np.concatenate([f_lo[keep], f_mid[keep]])
        f_hi = np.concatenate([f_mid[keep], f_hi[keep]])
        mid = np.concatenate([lm[keep], rm[keep]])
        f_mid = np.concatenate([f_lm[keep], f_rm[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        tols = np.concatenate([tols[keep] / 2, tols[keep] / 2])
    # depth exhausted: accept the current Simpson sums
    return total + float(np.sum(whole))


# -- regions ------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """The subgraph D_f = {(x, y): y <= f(x)} of a density."""

    density: Density

    def __post_init__(self):
        if not (0 < self.density.total_mass < np.inf):
            raise DomainError("region must have positive finite measure")

    @property
    def space(self) -> StateSpace:
        return self.density.space

    @property
    def measure(self) -> float:
        return self.density.total_mass


# -- operations ----------------------------------------------------------------


def tv_distance(f: Density, g: Density) -> float:
    """Total-variation distance between probability densities on one space."""
    _check_same_space(f, g)
    if not (f.is_probability and g.is_probability):
        raise DomainError("tv_distance expects probability densities")
    if f.is_discrete:
        w = f.space.weight_array()
        return float(np.clip((f.values - g.values), 0, None) @ w)
    bps = set(f.breakpoints) | set(g.breakpoints)
    return integrate_interval(
        f.space,
        lambda x: np.clip(f.fn(x) - g.fn(x), 0, None),
        extra_breakpoints=bps,
    )


def subgraph_measures(f: Density, g: Density) -> tuple[float, float, float]:
    """(mu(D_f ∩ D_g), mu(D_f ∪ D_g), mu(D_f Δ D_g)) for any finite densities."""
    _check_same_space(f, g)
    if f.is_discrete:
        w = f.space.weight_array()
        inter = float(np.minimum(f.values, g.values) @ w)
        union = float(np.maximum(f.values, g.values) @ w)
        sym = float(np.abs(f.values - g.values) @ w)
        return inter, union, sym
    bps = set(f.breakpoints) | set(g.breakpoints)
    inter = integrate_interval(f.space, lambda x: np.minimum(f.fn(x), g.fn(x)), bps)
    union = integrate_interval(f.space, lambda x: np.maximum(f.fn(x), g.fn(x)), bps)
    sym = integrate_interval(f.space, lambda x: np.abs(f.fn(x) - g.fn(x)), bps)
    return inter, union, sym


def influence_check_h(eps_seq: Sequence[float], horizon: int) -> tuple[float, np.ndarray]:
    """Partial sum sum_{k<=horizon} prod_{n<=k}(1 - eps_n) plus the products.

    Only reports the finite partial sum; divergence of the full series is
    undecidable from a prefix.
    """
    eps = np.asarray(eps_seq, dtype=np.float64)
    if np.any(eps < 0) or np.any(eps > 1):
        raise DomainError("influence values must lie in [0, 1]")
    if horizon < 0 or len(eps) < horizon + 1:
        raise DomainError("need eps_0..eps_horizon: len(eps_seq) >= horizon + 1")
    products = np.cumprod(1.0 - eps[: horizon + 1])
    return float(products.sum()), products
