"""Reconstruction: exact propagation, law preservation, bounds, schedules."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ppcoupling.chain import (
    FiniteMarkovModel,
    GeometricBinaryModel,
    IIDDiscreteModel,
    as_probability,
    exact_prefix_law,
    simulate_paths,
)
from ppcoupling.errors import DomainError
from ppcoupling.governor import extract_batch
from ppcoupling.measure import DiscreteSpace
from ppcoupling.priming import certify, prime
from ppcoupling.reconstruct import (
    build_schedule,
    disagreement_experiment,
    reconstruct_forward,
    reconstruct_from_window,
    select_subsequence,
    successive_approximation,
    window_for_tail,
)

ALPHA = 1e-4


def test_iid_rebuild_equals_path_after_window():
    # a memoryless kernel makes the rebuild coincide with the path, per seed
    model = as_probability(IIDDiscreteModel(DiscreteSpace((1.0, 1.0)), (0.5, 0.5)))
    study = certify(model, ell=2, epsilon=0.5, n_replicas=400, seed=3, burn_in=0)
    paths = simulate_paths(model, 5, 400, 2 + 6)
    innov = extract_batch(model, paths, 7)
    run = reconstruct_from_window(model, innov, study.certificate, 0, 6, x_true=paths)
    assert np.array_equal(run.x_rebuilt[:, 2:], paths[:, 2:])


def test_markov_rebuild_propagates_exactly_once_window_matches():
    # once the last `order` symbols agree, the kernels coincide forever after
    rows = np.array([[0.8, 0.2], [0.3, 0.7]])
    model = as_probability(FiniteMarkovModel(DiscreteSpace((1.0, 1.0)), 1, rows))
    study = certify(model, ell=3, epsilon=0.4, n_replicas=500, seed=11, burn_in=0)
    paths = simulate_paths(model, 13, 500, 3 + 8)
    innov = extract_batch(model, paths, 17)
    run = reconstruct_from_window(model, innov, study.certificate, 0, 8, x_true=paths)
    window_match = np.all(run.z == paths[:, :3], axis=1)
    after = run.x_rebuilt[:, 3:] == paths[:, 3:]
    assert np.all(after[window_match])


def test_rebuilt_law_matches_chain_law():
    # length-4 suffix of the rebuilt path vs the enumerated chain law
    model = as_probability(GeometricBinaryModel(0.3, 0.5))
    ell, horizon = 8, 4
    study = certify(model, ell=ell, epsilon=0.5, n_replicas=20_000, seed=19, burn_in=40)
    innov_new = extract_batch(
        model,
        simulate_paths(model, 23, 100_000, 40 + ell + horizon),
        29,
        skip_steps=40,
    )
    z, h, _ = prime(model, innov_new, study.certificate)
    rebuilt = reconstruct_forward(model, innov_new, z, ell, horizon)
    law = exact_prefix_law(model, ell + horizon)
    suffix_law: dict[tuple, float] = {}
    for w, p in law.items():
        suffix_law[w[-horizon:]] = suffix_law.get(w[-horizon:], 0.0) + p
    words = sorted(suffix_law)
    idx = {w: i for i, w in enumerate(words)}
    got = np.zeros(len(words))
    for row in rebuilt[:, -horizon:]:
        got[idx[tuple(row)]] += 1
    expected = np.array([suffix_law[w] for w in words]) * rebuilt.shape[0]
    assert stats.chisquare(got, expected).pvalue > ALPHA


def test_disagreement_bound_chain():
    model = GeometricBinaryModel(0.3, 0.5)
    rep = disagreement_experiment(
        model, epsilon=0.15, horizon=6, n_replicas=20_000, seed=31, eta_replicas=5000
    )
    assert rep.ell == 2  # 0.6 * 0.5^L <= 0.15 at L = 2
    assert rep.n_h > 100
    assert np.all(np.diff(rep.rates) >= -1e-12)  # cumulative mismatch grows
    assert rep.checks()["per_step_increments_within_2eta"]
    assert rep.checks()["final_rate_within_3eps"]


def test_disagreement_iid_flat():
    model = IIDDiscreteModel(DiscreteSpace((1.0, 1.0)), (0.5, 0.5))
    rep = disagreement_experiment(
        model, epsilon=0.25, horizon=5, n_replicas=4000, seed=37, eta_replicas=500
    )
    # memoryless: no growth past the window
    assert np.all(rep.increments == 0.0)
    assert np.all(rep.eta_hat == 0.0)


def test_window_for_tail():
    model = GeometricBinaryModel(0.3, 0.5)
    assert window_for_tail(model, 0.15) == 2
    assert window_for_tail(model, 1.0) == 1
    with pytest.raises(DomainError):
        window_for_tail(model, 1e-30, max_len=8)


# -- subsequence selection -------------------------------------------------------------


def test_theta_zero_sequence_is_identity():
    theta = select_subsequence(np.zeros(10), np.ones(10))
    assert np.array_equal(theta, np.arange(10))


def test_theta_inverse_square_vs_inverse():
    n = np.arange(1, 10_001)
    theta = select_subsequence(1 / n**2, 1 / n)
    assert len(theta) > 5
    k = np.arange(len(theta))
    # greedy guarantee: a_theta(k) <= b_theta(k) / 2^k, so the sum converges
    assert np.all(1 / n[theta] ** 2 <= 1 / n[theta] / 2**k + 1e-18)
    assert (1 / n[theta] ** 2).sum() <= (1 / n[theta] / 2**k).sum() + 1e-12


def test_theta_forced_geometric_gaps():
    n = np.arange(1, 100_001)
    theta = select_subsequence(1 / n, np.ones(len(n)))
    assert np.all(theta[:6] == [0, 1, 3, 7, 15, 31])
    assert np.all(theta + 1 >= 2 ** np.arange(len(theta)))


def test_theta_empty_selection_reported():
    theta = select_subsequence(np.ones(5), np.ones(5) * 0.5)
    assert theta.size == 0


@settings(max_examples=80, derandomize=True)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60),
    st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60),
)
def test_theta_majorant_property(a, b):
    n = min(len(a), len(b))
    a, b = np.asarray(a[:n]), np.asarray(b[:n])
    theta = select_subsequence(a, b)
    k = np.arange(len(theta))
    assert np.all(a[theta] <= b[theta] / 2**k + 1e-15)
    assert np.all(np.diff(theta) > 0)


# -- schedules ----------------------------------------------------------------------------


def test_schedule_layout_and_sanity():
    model = GeometricBinaryModel(0.3, 0.5)
    sched = build_schedule(model, n_stages=5, n_replicas=4000, seed=41)
    # intervals partition a suffix of the negative axis
    t_prev = 0
    for s in sched.stages:
        assert s.t_start + s.length == t_prev
        t_prev = s.t_start
        assert s.length == sched.window_lengths[s.m]
    for m, M in sched.repetitions.items():
        assert M >= 1.0 / sched.alpha[m]  # expected successes per block >= 1
    # expected successful stages grow at least linearly in completed blocks
    running = 0.0
    for m in sorted(sched.repetitions):
        running += sched.repetitions[m] * sched.alpha[m]
        assert running >= m


def test_successive_approximation_bounds():
    model = GeometricBinaryModel(0.3, 0.5)
    sched = build_schedule(model, n_stages=4, n_replicas=4000, seed=43)
    rep = successive_approximation(model, sched, n_replicas=8000, seed=47)
    assert rep.checks()["stagewise_recovery_bounds"]
    for o in rep.stages:
        assert o.n_h > 0
        assert o.recovery_rate >= 0.5  # far above the (vacuous) early-stage bounds
    assert len(rep.theta) > 0
