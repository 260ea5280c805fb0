"""Innovation extraction: exact recovery, splice locality, law checks."""

import numpy as np
import pytest
from scipy import stats

from ppcoupling.chain import (
    FiniteMarkovModel,
    GeometricBinaryModel,
    GeometricIntervalModel,
    IIDDiscreteModel,
    simulate_paths,
)
from ppcoupling.errors import InadmissiblePathError
from ppcoupling.governor import (
    extract_batch,
    extract_innovations,
    raw_innovations,
    resimulate,
)
from ppcoupling.measure import DiscreteSpace
from ppcoupling.ppp import batch_points_in_window

ALPHA = 1e-4


@pytest.fixture
def iid2():
    return IIDDiscreteModel(DiscreteSpace((1.0, 1.0)), (0.5, 0.5))


@pytest.fixture
def geo():
    return GeometricBinaryModel(0.3, 0.5)


def test_exact_recovery_binary(geo):
    paths = simulate_paths(geo, 7, 50, 300)
    innov = extract_batch(geo, paths, 99)
    assert np.array_equal(resimulate(geo, innov), paths)


def test_exact_recovery_continuous():
    model = GeometricIntervalModel(0.3, 0.5)
    paths = simulate_paths(model, 7, 10, 60)
    innov = extract_batch(model, paths, 99)
    assert np.array_equal(resimulate(model, innov), paths)


def test_recursion_checks_single_path(geo):
    path = simulate_paths(geo, 11, 1, 40)[0]
    gs = extract_innovations(geo, path, 123)
    assert gs.all_ok


def test_inadmissible_path_raises():
    rows = np.array([[1.0, 0.0], [0.0, 1.0]])  # deterministic kernel
    model = FiniteMarkovModel(DiscreteSpace((1.0, 1.0)), 1, rows)
    bad = np.array([[0, 1]])  # from state 0 the kernel forbids symbol 1
    with pytest.raises(InadmissiblePathError) as err:
        extract_batch(model, bad, 5)
    assert err.value.index == 1


def test_skip_steps_matches_suffix_kernels(geo):
    paths = simulate_paths(geo, 13, 20, 30)
    full = extract_batch(geo, paths, 55)
    skipped = extract_batch(geo, paths, 55, skip_steps=10)
    # same W streams and same kernels at aligned steps -> identical records
    a = full.steps[10]
    b = skipped.steps[0]
    assert np.array_equal(a.base_keys, b.base_keys)
    assert np.array_equal(a.replacement.orig_t, b.replacement.orig_t)
    assert np.array_equal(a.replacement.new_y, b.replacement.new_y)


def test_pooled_first_point_times_exponential(geo):
    paths = simulate_paths(geo, 17, 200, 50)
    innov = extract_batch(geo, paths, 77)
    ts = np.concatenate([s.replacement.orig_t for s in innov.steps])
    assert stats.kstest(ts, "expon").pvalue > ALPHA


def test_innovation_times_independent_of_lagged_path(geo):
    paths = simulate_paths(geo, 19, 100, 100)
    innov = extract_batch(geo, paths, 78)
    ts = np.stack([s.replacement.orig_t for s in innov.steps], axis=1)  # [N, T]
    t_flat = ts[:, 1:].ravel()
    x_flat = paths[:, :-1].ravel().astype(float)
    rho = np.corrcoef(t_flat, x_flat)[0, 1]
    assert abs(rho) < 4 / np.sqrt(len(t_flat))


def test_splice_locality_batch(geo):
    # points outside the kernel subgraph equal those of the raw W process
    paths = simulate_paths(geo, 23, 5, 3)
    innov = extract_batch(geo, paths, 81)
    step = innov.steps[0]
    raw = raw_innovations(geo.space, 81, 5, 1)  # same seed, step 0 -> same base keys
    assert np.array_equal(step.base_keys, raw.steps[0].base_keys)
    rep_v, x_v, y_v, t_v = batch_points_in_window(
        geo.space, step.base_keys, 4.0, 4.0, replacement=step.replacement
    )
    rep_b, x_b, y_b, t_b = batch_points_in_window(geo.space, step.base_keys, 4.0, 4.0)
    f0 = geo.kernel([])  # step-0 kernel is the empty-word density for every replica
    out_v = y_v > f0.values[x_v.astype(int)]
    out_b = y_b > f0.values[x_b.astype(int)]
    assert np.array_equal(rep_v[out_v], rep_b[out_b])
    assert np.array_equal(x_v[out_v], x_b[out_b])
    assert np.array_equal(y_v[out_v], y_b[out_b])
    assert np.array_equal(t_v[out_v], t_b[out_b])


def test_spliced_innovations_remain_poisson(iid2):
    # box counts of the spliced views pass the dispersion and independence checks
    n = 10_000
    paths = simulate_paths(iid2, 29, n, 1)
    innov = extract_batch(iid2, paths, 83)
    step = innov.steps[0]
    rep, x, y, t = batch_points_in_window(
        iid2.space, step.base_keys, 2.0, 2.0, replacement=step.replacement
    )
    box = (x.astype(int) * 2 + (y >= 1.0).astype(int)) * 2 + (t >= 1.0).astype(int)
    counts = np.zeros((n, 8), dtype=np.int64)
    np.add.at(counts, (rep, box), 1)
    mean = counts.mean(axis=0)
    assert np.all(np.abs(mean - 1.0) <= 4 * np.sqrt(1.0 / n))
    disp = counts.var(axis=0, ddof=1) / mean
    lo, hi = stats.chi2.ppf([1e-5, 1 - 1e-5], n - 1) / (n - 1)
    assert np.all((disp > lo) & (disp < hi))
    corr = np.corrcoef(counts.T)
    off = corr[~np.eye(8, dtype=bool)]
    assert np.all(np.abs(off) < 4 / np.sqrt(n))
