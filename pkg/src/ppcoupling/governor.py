"""Innovation extraction: rebuild an i.i.d. governing sequence from a path.

For each time step a fresh Poisson source W_n and a uniform V_n are derived
from the extraction seed; the innovation U_n is the view of W_n whose first
point under the current kernel's subgraph carries the observed value X_n at
height V_n f(X_n).  Re-running the coupling recursion on the U_n reproduces
the path exactly; the views remain Poisson of the right intensity, which the
test suite checks through box counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainModel
from .errors import DomainError, InadmissiblePathError
from .measure import DiscreteSpace
from .ppp import (
    BatchRegion,
    BatchReplacement,
    BatchResult,
    batch_first_points,
    PointProcessSource,
    Region,
    SplicedSource,
    splice,
)
from .streams import TAG_GOV_V, TAG_GOV_W, derive_keys, fold, to_uniform, mix64


@dataclass
class StepInnovations:
    """Batched innovations for one time step: base processes plus splice records."""

    base_keys: np.ndarray
    replacement: BatchReplacement | None


@dataclass
class InnovationBatch:
    """Time-indexed innovations for a batch of replicas."""

    space: object
    n_replicas: int
    steps: list[StepInnovations]

    def query(self, step: int, regions: list[BatchRegion]) -> list[BatchResult]:
        s = self.steps[step]
        return batch_first_points(self.space, s.base_keys, regions, replacement=s.replacement)


def raw_innovations(space, seed: int, n_replicas: int, n_steps: int) -> InnovationBatch:
    """Fresh i.i.d. Poisson sources, no splicing: innovations of a yet-unseen path."""
    steps = [
        StepInnovations(derive_keys(fold(TAG_GOV_W, seed, k), np.arange(n_replicas)), None)
        for k in range(n_steps)
    ]
    return InnovationBatch(space=space, n_replicas=n_replicas, steps=steps)


def extract_batch(
    model: ChainModel, paths: np.ndarray, seed: int, skip_steps: int = 0
) -> InnovationBatch:
    """Innovations of the given paths, one spliced view per (step, replica).

    The first `skip_steps` columns only advance the kernel state (burn-in);
    innovations are built for the remaining steps.
    """
    n_rep, n_steps = paths.shape
    state = model.init_state(n_rep)
    steps: list[StepInnovations] = []
    discrete = isinstance(model.space, DiscreteSpace)
    for k in range(skip_steps):
        state = model.advance(state, paths[:, k])
    for k in range(skip_steps, n_steps):
        region = model.kernel_region(state)
        w_keys = derive_keys(fold(TAG_GOV_W, seed, k), np.arange(n_rep))
        orig = batch_first_points(model.space, w_keys, [region])[0]
        xs = paths[:, k]
        if discrete:
            fx = (
                region.values[xs]
                if region.values.ndim == 1
                else region.values[np.arange(n_rep), xs]
            )
        else:
            fx = region.evaluate(np.arange(n_rep), xs.astype(np.float64))
        bad = np.flatnonzero(fx <= 0)
        if len(bad):
            raise InadmissiblePathError(k)
        v = to_uniform(mix64(derive_keys(fold(TAG_GOV_V, seed, k), np.arange(n_rep))))
        steps.append(
            StepInnovations(
                base_keys=w_keys,
                replacement=BatchReplacement(
                    orig_x=orig.x,
                    orig_y=orig.y,
                    orig_t=orig.t,
                    new_x=xs.astype(np.float64),
                    new_y=v * fx,
                ),
            )
        )
        state = model.advance(state, xs)
    return InnovationBatch(space=model.space, n_replicas=n_rep, steps=steps)


def resimulate(model: ChainModel, innovations: InnovationBatch, n_steps: int | None = None) -> np.ndarray:
    """Run the coupling recursion on the innovations; recovers the source path."""
    n_steps = len(innovations.steps) if n_steps is None else n_steps
    n_rep = innovations.n_replicas
    state = model.init_state(n_rep)
    out = np.empty((n_rep, n_steps), dtype=model.path_dtype())
    discrete = isinstance(model.space, DiscreteSpace)
    for k in range(n_steps):
        res = innovations.query(k, [model.kernel_region(state)])[0]
        xs = res.x.astype(np.int64) if discrete else res.x
        out[:, k] = xs
        state = model.advance(state, xs)
    return out


@dataclass
class GoverningSequence:
    """Per-path innovations with the recursion check for every index."""

    model: ChainModel
    path: np.ndarray
    sources: list[SplicedSource]
    recursion_ok: np.ndarray

    @property
    def all_ok(self) -> bool:
        return bool(self.recursion_ok.all())


def extract_innovations(model: ChainModel, path, seed: int) -> GoverningSequence:
    """Innovations of a single observed path, with per-index recursion checks."""
    path = np.asarray(path, dtype=model.path_dtype())
    if path.ndim != 1 or len(path) == 0:
        raise DomainError("path must be a nonempty 1-d sequence")
    sources = []
    ok = np.zeros(len(path), dtype=bool)
    window: list = []
    from .ppp import first_point_in  # local import to avoid cycle noise

    for n, x in enumerate(path):
        density = model.kernel(window)
        fx = float(density.evaluate(np.array([x]))[0])
        if fx <= 0:
            raise InadmissiblePathError(n)
        w = PointProcessSource(model.space, key=fold(TAG_GOV_W, seed, n, 1))
        v = to_uniform(mix64(np.array([fold(TAG_GOV_V, seed, n, 1)], dtype=np.uint64)))[0]
        u = splice(w, Region(density), x if not isinstance(model.space, DiscreteSpace) else int(x), float(v))
        got = first_point_in(u, Region(density))
        ok[n] = got.x == (int(x) if isinstance(model.space, DiscreteSpace) else float(x))
        sources.append(u)
        window.append(x)
    return GoverningSequence(model=model, path=path, sources=sources, recursion_ok=ok)
