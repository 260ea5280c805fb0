"""Seed-determined Poisson point process on E x R+ x R+ with lazy region queries.

The process has intensity pi (x) lambda (x) lambda.  E x R+ is partitioned into
canonical cells of finite measure (atom x unit y-strip for discrete spaces,
dyadic x-interval x unit y-strip for intervals), and time into unit slabs.
The points of any cell x slab box are a pure function of
(source key, cell id, slab index), so every query sees the same realization:
the randomness is fixed before any density is named, which is what makes the
coupling built on top of this global.

First-point queries scan slabs in time order and stop at the first slab that
produces a point of the region (later slabs cannot beat it).  Splicing returns
a view that swaps the first point under a density's subgraph for a prescribed
one; views answer all queries like ordinary sources.

The hot candidate-collection loop has a numba kernel and a bit-identical
numpy fallback (PPCOUPLING_NO_NUMBA=1 forces the fallback).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EngineError
from .measure import (
    Density,
    DiscreteSpace,
    IntervalSpace,
    N_CELLS,
    Region,
    StateSpace,
)
from .streams import GOLDEN, TAG_PPP, fold, mix64, to_uniform

_U_GOLDEN = np.uint64(GOLDEN)

# counter layout: (cell_id << 32) | (slab << 12) | draw
_DRAW_BITS = 12
_SLAB_BITS = 20
_SLAB_SHIFT = np.uint64(_DRAW_BITS)
_CELL_SHIFT = np.uint64(_DRAW_BITS + _SLAB_BITS)
_STRIP_BITS = 16
_MAX_STRIPS = 1 << _STRIP_BITS
_MAX_SLABS = (1 << _SLAB_BITS) - 1
_MAX_COUNT = ((1 << _DRAW_BITS) - 4) // 3

_TAIL_EPS = 1e-22


def _use_numba() -> bool:
    return os.environ.get("PPCOUPLING_NO_NUMBA", "") != "1"


# -- Poisson count thresholds ---------------------------------------------------


def _poisson_thresholds(mus: np.ndarray) -> np.ndarray:
    """uint64 thresholds T[m, k] with  count > k  iff  z >= T[m, k].

    Rows are padded with 2**64 - 1 (an unreachable threshold up to a 2**-64
    event, where the count saturates -- identical in both collect paths).
    """
    rows = []
    for mu in mus:
        if mu <= 0:
            raise DomainError("cell measures must be positive")
        p = math.exp(-mu)
        c = p
        thr = [c]
        k = 0
        while c < 1.0 - _TAIL_EPS:
            k += 1
            p *= mu / k
            c += p
            thr.append(min(c, 1.0))
            if k > _MAX_COUNT:
                raise DomainError("cell measure too large for the draw budget")
        rows.append(thr)
    kmax = max(len(r) for r in rows)
    out = np.full((len(rows), kmax), (1 << 64) - 1, dtype=np.uint64)
    for i, r in enumerate(rows):
        for k, c in enumerate(r):
            out[i, k] = min((1 << 64) - 1, int(round(c * 2.0**64)))
    return out


# -- lane tables ----------------------------------------------------------------


@dataclass
class _LaneTable:
    """Active (cell, strip) lanes for one union envelope."""

    cell_index: np.ndarray   # atom index (discrete) or dyadic cell index
    strip: np.ndarray
    cell_part: np.ndarray    # uint64 cell_id << (slab+draw bits)
    row: np.ndarray          # index into thresholds
    thresholds: np.ndarray   # uint64 [n_rows, kmax]


def _strip_counts(envelope: np.ndarray) -> np.ndarray:
    counts = np.ceil(np.asarray(envelope, dtype=np.float64)).astype(np.int64)
    counts[counts < 0] = 0
    if np.any(counts >= _MAX_STRIPS):
        raise DomainError("envelope too tall for the strip budget")
    return counts


def _lane_table(space: StateSpace, envelope: np.ndarray) -> _LaneTable:
    counts = _strip_counts(envelope)
    cell_index = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    strip = np.concatenate([np.arange(c, dtype=np.int64) for c in counts]) if len(cell_index) else np.empty(0, np.int64)
    cell_id = (cell_index.astype(np.uint64) << np.uint64(_STRIP_BITS)) | strip.astype(np.uint64)
    cell_part = cell_id << _CELL_SHIFT
    if isinstance(space, DiscreteSpace):
        thresholds = _poisson_thresholds(space.weight_array())
        row = cell_index
    else:
        thresholds = _poisson_thresholds(np.array([space.ref_density * space.cell_width]))
        row = np.zeros(len(cell_index), dtype=np.int64)
    return _LaneTable(cell_index, strip, cell_part, row, thresholds)


# -- candidate collection ---------------------------------------------------------

try:  # pragma: no cover - exercised through the public API
    import numba

    @numba.njit(cache=True, fastmath=False)
    def _collect_numba(sub_keys, cnt0, thr_row, thresholds, out, cap):  # pragma: no cover
        gold = np.uint64(0x9E3779B97F4A7C15)
        kmax = thresholds.shape[1]
        n = 0
        for i in range(sub_keys.shape[0]):
            b = sub_keys[i]
            for l in range(cnt0.shape[0]):
                z = b + cnt0[l]
                z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                z = z ^ (z >> np.uint64(31))
                r = thr_row[l]
                if z >= thresholds[r, 0]:
                    k = 1
                    while k < kmax and z >= thresholds[r, k]:
                        k += 1
                    for p in range(k):
                        d = np.uint64(3 * p)
                        if n < cap:
                            zz = b + cnt0[l] + (d + np.uint64(1)) * gold
                            zz = (zz ^ (zz >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                            zz = (zz ^ (zz >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                            out[n, 2] = zz ^ (zz >> np.uint64(31))
                            zz = b + cnt0[l] + (d + np.uint64(2)) * gold
                            zz = (zz ^ (zz >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                            zz = (zz ^ (zz >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                            out[n, 3] = zz ^ (zz >> np.uint64(31))
                            zz = b + cnt0[l] + (d + np.uint64(3)) * gold
                            zz = (zz ^ (zz >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
                            zz = (zz ^ (zz >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
                            out[n, 4] = zz ^ (zz >> np.uint64(31))
                            out[n, 0] = np.uint64(i)
                            out[n, 1] = np.uint64(l)
                        n += 1
        return n

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _collect_numpy(sub_keys, cnt0, thr_row, thresholds):
    z = mix64(sub_keys[:, None] + cnt0[None, :])
    occ = z >= thresholds[thr_row, 0][None, :]
    ii, ll = np.nonzero(occ)
    if len(ii) == 0:
        return (np.empty(0, np.int64),) * 2 + (np.empty(0, np.uint64),) * 3
    zocc = z[ii, ll]
    rows = thr_row[ll]
    counts = np.ones(len(ii), dtype=np.int64)
    for k in range(1, thresholds.shape[1]):
        m = zocc >= thresholds[rows, k]
        if not m.any():
            break
        counts += m
    reps, lanes, zx, zy, zt = [], [], [], [], []
    base = sub_keys[ii] + cnt0[ll]
    mask64 = (1 << 64) - 1
    for p in range(int(counts.max())):
        sel = counts > p
        b = base[sel]
        offs = [np.uint64(((3 * p + k) * GOLDEN) & mask64) for k in (1, 2, 3)]
        reps.append(ii[sel])
        lanes.append(ll[sel])
        zx.append(mix64(b + offs[0]))
        zy.append(mix64(b + offs[1]))
        zt.append(mix64(b + offs[2]))
    return (
        np.concatenate(reps),
        np.concatenate(lanes),
        np.concatenate(zx),
        np.concatenate(zy),
        np.concatenate(zt),
    )


def _collect(sub_keys: np.ndarray, table: _LaneTable, slab: int):
    """Raw candidates (rep_local, lane, zx, zy, zt) of one slab."""
    cnt0 = (table.cell_part | (np.uint64(slab) << _SLAB_SHIFT)) * _U_GOLDEN
    if _HAVE_NUMBA and _use_numba():
        cap = max(256, len(sub_keys) * 4)
        while True:
            out = np.empty((cap, 5), dtype=np.uint64)
            n = _collect_numba(sub_keys, cnt0, table.row, table.thresholds, out, cap)
            if n <= cap:
                out = out[:n]
                return (
                    out[:, 0].astype(np.int64),
                    out[:, 1].astype(np.int64),
                    out[:, 2].copy(),
                    out[:, 3].copy(),
                    out[:, 4].copy(),
                )
            cap = n + 64
    return _collect_numpy(sub_keys, cnt0, table.row, table.thresholds)


# -- batched regions and replacements --------------------------------------------


@dataclass
class BatchRegion:
    """Region spec for batched queries.

    Discrete: `values` is [A] (shared) or [N, A] (per replica); the in-region
    test is y <= values[rep, atom].  Interval: `envelope` is the per-cell
    dominating array shared by all replicas and `evaluate(rep_idx, xs)` gives
    the per-replica density at points xs.
    """

    envelope: np.ndarray
    values: np.ndarray | None = None
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def contains(self, rep: np.ndarray, x: np.ndarray, y: np.ndarray, x_idx: np.ndarray | None) -> np.ndarray:
        if self.values is not None:
            v = self.values[x_idx] if self.values.ndim == 1 else self.values[rep, x_idx]
            return y <= v
        return y <= self.evaluate(rep, x)


def region_batch_from_density(d: Density, n_replicas: int | None = None) -> BatchRegion:
    if d.is_discrete:
        return BatchRegion(envelope=d.envelope_values(), values=d.values)
    return BatchRegion(
        envelope=d.cell_envelope,
        evaluate=lambda rep, xs, _f=d.fn: _f(xs),
    )


def discrete_batch_region(values: np.ndarray, envelope: np.ndarray | None = None) -> BatchRegion:
    values = np.asarray(values, dtype=np.float64)
    env = envelope if envelope is not None else (values if values.ndim == 1 else values.max(axis=0))
    return BatchRegion(envelope=np.asarray(env, dtype=np.float64), values=values)


@dataclass
class BatchReplacement:
    """Per-replica splice records: drop the original point, add the new one."""

    orig_x: np.ndarray
    orig_y: np.ndarray
    orig_t: np.ndarray
    new_x: np.ndarray
    new_y: np.ndarray


@dataclass
class BatchResult:
    x: np.ndarray       # float64; atom indices for discrete spaces
    y: np.ndarray
    t: np.ndarray


def _candidate_coords(space, table: _LaneTable, slab: int, lanes, zx, zy, zt):
    y = table.strip[lanes].astype(np.float64) + to_uniform(zy)
    t = float(slab) + to_uniform(zt)
    if isinstance(space, DiscreteSpace):
        x = table.cell_index[lanes].astype(np.float64)
    else:
        x = space.lo + (table.cell_index[lanes].astype(np.float64) + to_uniform(zx)) * space.cell_width
    return x, y, t


def batch_first_points(
    space: StateSpace,
    base_keys: np.ndarray,
    regions: Sequence[BatchRegion],
    replacement: BatchReplacement | None = None,
    max_slabs: int = 100_000,
) -> list[BatchResult]:
    """First point of each region, for every replica, from one point set."""
    base_keys = np.asarray(base_keys, dtype=np.uint64)
    n = len(base_keys)
    env = np.maximum.reduce([r.envelope for r in regions])
    table = _lane_table(space, env)
    results = [
        BatchResult(np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.inf))
        for _ in regions
    ]
    unresolved = [np.ones(n, dtype=bool) for _ in regions]

    for slab in range(min(max_slabs, _MAX_SLABS)):
        active = np.zeros(n, dtype=bool)
        for u in unresolved:
            active |= u
        act_idx = np.flatnonzero(active)
        if len(act_idx) == 0:
            return results
        rep_l, lanes, zx, zy, zt = _collect(base_keys[act_idx], table, slab)
        rep = act_idx[rep_l]
        x, y, t = _candidate_coords(space, table, slab, lanes, zx, zy, zt)

        if replacement is not None:
            drop = (
                (x == replacement.orig_x[rep])
                & (y == replacement.orig_y[rep])
                & (t == replacement.orig_t[rep])
            )
            if drop.any():
                keep = ~drop
                rep, x, y, t = rep[keep], x[keep], y[keep], t[keep]
            inj = act_idx[np.floor(replacement.orig_t[act_idx]).astype(np.int64) == slab]
            if len(inj):
                rep = np.concatenate([rep, inj])
                x = np.concatenate([x, replacement.new_x[inj]])
                y = np.concatenate([y, replacement.new_y[inj]])
                t = np.concatenate([t, replacement.orig_t[inj]])

        if len(rep) == 0:
            continue
        x_idx = x.astype(np.int64) if isinstance(space, DiscreteSpace) else None
        for r_i, region in enumerate(regions):
            mask = unresolved[r_i][rep] & region.contains(rep, x, y, x_idx)
            if not mask.any():
                continue
            rr, xx, yy, tt = rep[mask], x[mask], y[mask], t[mask]
            order = np.lexsort((xx, yy, tt, rr))
            rr, xx, yy, tt = rr[order], xx[order], yy[order], tt[order]
            firsts = np.unique(rr, return_index=True)[1]
            sel_r, sel_x, sel_y, sel_t = rr[firsts], xx[firsts], yy[firsts], tt[firsts]
            results[r_i].x[sel_r] = sel_x
            results[r_i].y[sel_r] = sel_y
            results[r_i].t[sel_r] = sel_t
            unresolved[r_i][sel_r] = False
    raise EngineError("slab budget exhausted; is a region measure effectively zero?")


def batch_points_in_window(
    space: StateSpace,
    base_keys: np.ndarray,
    y_max: float,
    t_max: float,
    replacement: BatchReplacement | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All points with y < y_max, t < t_max, per replica: (rep, x, y, t) sorted."""
    base_keys = np.asarray(base_keys, dtype=np.uint64)
    if isinstance(space, DiscreteSpace):
        env = np.full(space.n_atoms, float(y_max))
    else:
        env = np.full(N_CELLS, float(y_max))
    table = _lane_table(space, env)
    reps, xs, ys, ts = [], [], [], []
    for slab in range(int(math.ceil(t_max))):
        rep_l, lanes, zx, zy, zt = _collect(base_keys, table, slab)
        rep = rep_l
        x, y, t = _candidate_coords(space, table, slab, lanes, zx, zy, zt)
        keep = (y < y_max) & (t < t_max)
        reps.append(rep[keep])
        xs.append(x[keep])
        ys.append(y[keep])
        ts.append(t[keep])
    rep = np.concatenate(reps) if reps else np.empty(0, np.int64)
    x = np.concatenate(xs) if xs else np.empty(0)
    y = np.concatenate(ys) if ys else np.empty(0)
    t = np.concatenate(ts) if ts else np.empty(0)
    if replacement is not None:
        drop = (
            (x == replacement.orig_x[rep])
            & (y == replacement.orig_y[rep])
            & (t == replacement.orig_t[rep])
        )
        rep, x, y, t = rep[~drop], x[~drop], y[~drop], t[~drop]
        inj = np.flatnonzero((replacement.orig_t < t_max) & (replacement.new_y < y_max))
        rep = np.concatenate([rep, inj])
        x = np.concatenate([x, replacement.new_x[inj]])
        y = np.concatenate([y, replacement.new_y[inj]])
        t = np.concatenate([t, replacement.orig_t[inj]])
    order = np.lexsort((x, y, t, rep))
    return rep[order], x[order], y[order], t[order]


# -- public single-source API ------------------------------------------------------


@dataclass(frozen=True)
class FirstPoint:
    """First point of the process inside a region: position, height, time."""

    x: float | int
    y: float
    t: float


@dataclass(frozen=True)
class PointProcessSource:
    """Seed-determined Poisson point process on space x R+ x R+."""

    space: StateSpace
    seed: int | None = None
    key: int | None = None

    def __post_init__(self):
        if self.key is None:
            if self.seed is None:
                raise DomainError("source needs a seed or an explicit key")
            object.__setattr__(self, "key", fold(TAG_PPP, self.seed))

    def _base_key(self) -> int:
        return self.key

    def _replacement(self) -> BatchReplacement | None:
        return None


@dataclass(frozen=True)
class SplicedSource:
    """View of a source with the first point under a density replaced."""

    base: PointProcessSource
    region: Region
    x_star: float | int
    v: float
    orig: FirstPoint
    new_y: float

    @property
    def space(self) -> StateSpace:
        return self.base.space

    def _base_key(self) -> int:
        return self.base.key

    def _replacement(self) -> BatchReplacement | None:
        arr = lambda v: np.array([float(v)])
        return BatchReplacement(
            orig_x=arr(self.orig.x),
            orig_y=arr(self.orig.y),
            orig_t=arr(self.orig.t),
            new_x=arr(self.x_star),
            new_y=arr(self.new_y),
        )


Source = PointProcessSource | SplicedSource


def _check_region(src: Source, region: Region) -> None:
    if region.space != src.space:
        raise DomainError("region lives on a different state space")
    if not (0 < region.measure < np.inf):
        raise DomainError("region measure must be positive and finite")
    env = region.density.envelope_values()
    if not np.all(np.isfinite(env)):
        raise DomainError("region envelope must have finite integral")


def joint_first_points(src: Source, regions: Sequence[Region]) -> list[FirstPoint]:
    """First points of several regions, answered from one point set."""
    for r in regions:
        _check_region(src, r)
    keys = np.array([src._base_key()], dtype=np.uint64)
    batch = [region_batch_from_density(r.density) for r in regions]
    res = batch_first_points(src.space, keys, batch, replacement=src._replacement())
    out = []
    discrete = isinstance(src.space, DiscreteSpace)
    for r in res:
        x = int(r.x[0]) if discrete else float(r.x[0])
        out.append(FirstPoint(x=x, y=float(r.y[0]), t=float(r.t[0])))
    return out


def first_point_in(src: Source, region: Region) -> FirstPoint:
    """The point of the process in region x R+ with minimal time coordinate."""
    return joint_first_points(src, [region])[0]


def splice(src: PointProcessSource, region: Region, x_star, v: float) -> SplicedSource:
    """View of src whose first point in the region is (x*, v f(x*), t_region).

    The caller supplies the uniform height fraction v; when (x*, v) are drawn
    as (X, V) with X ~ f and V uniform, the view is again a Poisson point
    process of the same intensity.
    """
    if isinstance(src, SplicedSource):
        raise DomainError("chained splices are not supported; splice the raw source")
    _check_region(src, region)
    if not (0.0 <= v <= 1.0):
        raise DomainError("v must lie in [0, 1]")
    fx = float(region.density.evaluate(np.array([x_star]))[0])
    if fx <= 0:
        raise DomainError("replacement point would lie outside the region subgraph")
    orig = first_point_in(src, region)
    return SplicedSource(
        base=src, region=region, x_star=x_star, v=float(v), orig=orig, new_y=float(v) * fx
    )


def points_in_window(src: Source, y_max: float, t_max: float):
    """Materialized points of the source with y < y_max and t < t_max."""
    keys = np.array([src._base_key()], dtype=np.uint64)
    rep, x, y, t = batch_points_in_window(
        src.space, keys, y_max, t_max, replacement=src._replacement()
    )
    if isinstance(src.space, DiscreteSpace):
        x = x.astype(np.int64)
    return x, y, t
