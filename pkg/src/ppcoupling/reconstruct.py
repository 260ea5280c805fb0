"""Rebuilding the chain from innovations: bounds, schedules, subsequences.

A primed window Z seeds the coupling recursion driven by later innovations;
the rebuilt path X' sees no true-path values at any point (the measurability
firewall).  Conditionally on the priming event, the rebuilt path disagrees
with the truth at a rate controlled by the window quality plus twice the
average-influence tail: each step past the window adds at most
2 eta_{n-s}, for a total of 3 epsilon when the window length eats the tail.

The scheduling half splits the negative time axis into priming windows, with
lengths driven by the influence tail and repetition counts by the measured
priming success rate, and the greedy subsequence selector witnesses the
convergent-majorant / divergent-minorant split used to localize a recovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainModel, as_probability, eta_mc, simulate_paths
from .errors import DomainError, InsufficientReplicasError
from .governor import InnovationBatch, extract_batch
from .measure import DiscreteSpace
from .priming import PrimingCertificate, PrimingStudy, certify, prime
from .streams import fold


# -- rebuilding from a window -----------------------------------------------------


def reconstruct_forward(
    model: ChainModel,
    innovations: InnovationBatch,
    window_values: np.ndarray,
    start_step: int,
    n_steps: int,
) -> np.ndarray:
    """Continue the coupling recursion from a window, innovations only.

    `window_values` is [N, ell]; innovation steps start_step.. drive the
    recursion for n_steps further values.  Returns [N, ell + n_steps].
    """
    n_rep = innovations.n_replicas
    ell = window_values.shape[1]
    out = np.empty((n_rep, ell + n_steps), dtype=model.path_dtype())
    out[:, :ell] = window_values
    state = model.init_state(n_rep)
    for k in range(ell):
        state = model.advance(state, window_values[:, k])
    discrete = isinstance(model.space, DiscreteSpace)
    for j in range(n_steps):
        res = innovations.query(start_step + j, [model.kernel_region(state)])[0]
        xs = res.x.astype(np.int64) if discrete else res.x
        out[:, ell + j] = xs
        state = model.advance(state, xs)
    return out


@dataclass
class ReconstructionRun:
    """One window's rebuild: the primed word, the event, and the paths."""

    window: tuple[int, int]
    z: np.ndarray
    h: np.ndarray
    x_rebuilt: np.ndarray
    x_true: np.ndarray | None

    def first_disagreement(self) -> np.ndarray:
        """Per replica, the first index where the rebuilt path differs (-1: none)."""
        diff = self.x_rebuilt != self.x_true
        any_d = diff.any(axis=1)
        idx = np.where(any_d, diff.argmax(axis=1), -1)
        return idx


def reconstruct_from_window(
    model: ChainModel,
    innovations: InnovationBatch,
    certificate: PrimingCertificate,
    start_step: int,
    horizon: int,
    x_true: np.ndarray | None = None,
) -> ReconstructionRun:
    """Prime the window at start_step and continue the recursion for `horizon`.

    Sees only innovations (and optionally records the hidden truth for
    comparison); the rebuilt path's law agrees with the chain's on every
    finite horizon.
    """
    z, h, _ = prime(model, innovations, certificate, start_step=start_step)
    rebuilt = reconstruct_forward(
        model, innovations, z, start_step + certificate.ell, horizon
    )
    return ReconstructionRun(
        window=(start_step, start_step + certificate.ell - 1),
        z=z,
        h=h,
        x_rebuilt=rebuilt,
        x_true=x_true,
    )


# -- the disagreement experiment -----------------------------------------------------


@dataclass
class DisagreementReport:
    epsilon: float
    ell: int
    horizon: int
    n_h: int
    rates: np.ndarray          # P[X'_{s:n} != X_{s:n} | H], window first
    rate_stderr: np.ndarray
    increments: np.ndarray
    eta_hat: np.ndarray
    eta_stderr: np.ndarray
    increment_ok: np.ndarray
    cumulative_ok: np.ndarray
    final_ok: bool
    certificate: PrimingCertificate

    def checks(self) -> dict:
        return {
            "per_step_increments_within_2eta": bool(self.increment_ok.all()),
            "cumulative_within_eps_plus_2eta_tail": bool(self.cumulative_ok.all()),
            "final_rate_within_3eps": bool(self.final_ok),
        }


def disagreement_experiment(
    model: ChainModel,
    epsilon: float,
    horizon: int,
    n_replicas: int,
    seed: int,
    ell: int | None = None,
    burn_in: int = 40,
    eta_replicas: int = 20000,
) -> DisagreementReport:
    """Rebuild after a primed window and check the influence-driven bounds.

    The window length defaults to the smallest ell with analytic influence
    tail sum <= epsilon.  Per-step mismatch increments conditional on the
    priming event are compared against 2 eta_hat + 3 sigma and the final rate
    against 3 epsilon + 3 sigma.
    """
    model = as_probability(model)
    if ell is None:
        ell = window_for_tail(model, epsilon)
    study = certify(model, ell, epsilon, n_replicas, fold(seed, 0xC1), burn_in=burn_in)

    paths = simulate_paths(model, fold(seed, 0xC2), n_replicas, burn_in + ell + horizon)
    innovations = extract_batch(model, paths, fold(seed, 0xC3), skip_steps=burn_in)
    x_true = paths[:, burn_in:]
    z, h, _ = prime(model, innovations, study.certificate)
    n_h = int(h.sum())
    if n_h == 0:
        raise InsufficientReplicasError("no priming successes in the replica budget")
    rebuilt = reconstruct_forward(model, innovations, z, ell, horizon)

    sel = np.flatnonzero(h)
    mism = np.any(x_true[sel, :ell] != rebuilt[sel, :ell], axis=1)
    rates = [float(mism.mean())]
    for j in range(horizon):
        mism = mism | (x_true[sel, ell + j] != rebuilt[sel, ell + j])
        rates.append(float(mism.mean()))
    rates = np.array(rates)
    stderr = np.sqrt(np.clip(rates * (1 - rates), 1e-300, None) / n_h)
    increments = np.diff(rates)

    eta_hat = np.empty(horizon)
    eta_se = np.empty(horizon)
    for j in range(horizon):
        eta_hat[j], eta_se[j] = eta_mc(model, ell + j, eta_replicas, fold(seed, 0xC4, j))

    inc_se = np.sqrt(stderr[1:] ** 2 + stderr[:-1] ** 2 + (2 * eta_se) ** 2)
    increment_ok = increments <= 2 * eta_hat + 3 * inc_se
    # cumulative display: rate after j steps <= eps + 2 sum of eta over the tail
    eta_cum = np.concatenate([[0.0], np.cumsum(eta_hat)])
    cum_se = np.sqrt(stderr**2 + np.concatenate([[0.0], np.cumsum((2 * eta_se) ** 2)]))
    cumulative_ok = rates <= epsilon + 2 * eta_cum + 3 * cum_se
    final_ok = rates[-1] <= 3 * epsilon + 3 * stderr[-1]
    return DisagreementReport(
        epsilon=epsilon,
        ell=ell,
        horizon=horizon,
        n_h=n_h,
        rates=rates,
        rate_stderr=stderr,
        increments=increments,
        eta_hat=eta_hat,
        eta_stderr=eta_se,
        increment_ok=increment_ok,
        cumulative_ok=cumulative_ok,
        final_ok=final_ok,
        certificate=study.certificate,
    )


def window_for_tail(model: ChainModel, epsilon: float, max_len: int = 64) -> int:
    """Smallest window length >= 1 whose influence tail sum is <= epsilon."""
    for ell in range(1, max_len + 1):
        if model.delta_tail_sum(ell) <= epsilon:
            return ell
    raise DomainError("influence tail does not reach epsilon within the window budget")


# -- subsequence selection (convergent majorant / divergent minorant) ----------------


def select_subsequence(a, b) -> np.ndarray:
    """Greedy increasing index map theta with sum a_theta(k) <= sum b_theta(k)/2^k.

    Scans n in order and accepts when a_n <= b_n / 2^(number accepted so far);
    accepts infinitely many indices whenever a_n / b_n -> 0.  An empty
    selection on the given prefix is reported by an empty array, not an error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("sequences must be 1-d of equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("sequences must be nonnegative")
    out = []
    count = 0
    for n in range(len(a)):
        if a[n] <= b[n] / (2.0 ** count):
            out.append(n)
            count += 1
    return np.array(out, dtype=np.int64)


# -- schedules over the negative time axis ----------------------------------------


@dataclass
class ScheduleStage:
    index: int          # k >= 1
    m: int              # accuracy level 1/m
    t_start: int        # t_k (inclusive, negative)
    length: int         # ell_k = L_{m}
    epsilon: float      # 1/m

    @property
    def interval(self) -> tuple[int, int]:
        return (self.t_start, self.t_start + self.length - 1)


@dataclass
class ReconstructionSchedule:
    """Split of the negative axis into priming windows of increasing quality."""

    window_lengths: dict[int, int]        # m -> L_m
    repetitions: dict[int, int]           # m -> M_m
    alpha: dict[int, float]               # m -> measured priming success rate
    stages: list[ScheduleStage]
    certificates: dict[int, PrimingCertificate] = field(default_factory=dict)

    def total_span(self) -> int:
        return sum(s.length for s in self.stages)


def build_schedule(
    model: ChainModel,
    n_stages: int,
    n_replicas: int,
    seed: int,
    burn_in: int = 40,
    safety: float = 1.1,
    max_level: int = 8,
) -> ReconstructionSchedule:
    """Measure priming success rates and lay out the stage intervals.

    L_m is the smallest window with influence tail <= 1/m; M_m repetitions of
    that window are scheduled with M_m >= safety / alpha_m, alpha_m measured
    by a certification run at epsilon = 1/m.
    """
    model = as_probability(model)
    lengths: dict[int, int] = {}
    reps: dict[int, int] = {}
    alphas: dict[int, float] = {}
    certs: dict[int, PrimingCertificate] = {}
    stages: list[ScheduleStage] = []
    t = 0
    k = 0
    m = 0
    while len(stages) < n_stages and m < max_level:
        m += 1
        lengths[m] = window_for_tail(model, 1.0 / m)
        study = certify(model, lengths[m], 1.0 / m, n_replicas, fold(seed, 0xD0, m), burn_in=burn_in)
        alphas[m] = max(study.h_rate, 1.0 / n_replicas)
        reps[m] = int(math.ceil(safety / alphas[m]))
        certs[m] = study.certificate
        for _ in range(reps[m]):
            k += 1
            t -= lengths[m]
            stages.append(
                ScheduleStage(index=k, m=m, t_start=t, length=lengths[m], epsilon=1.0 / m)
            )
            if len(stages) >= n_stages:
                break
    return ReconstructionSchedule(
        window_lengths=lengths, repetitions=reps, alpha=alphas, stages=stages, certificates=certs
    )


@dataclass
class StageOutcome:
    stage: ScheduleStage
    h_rate: float
    n_h: int
    recovery_rate: float       # P[X^k_0 = X_0 | H_k]
    bound: float               # 1 - 3 eps_k
    ok: bool


@dataclass
class ApproximationReport:
    stages: list[StageOutcome]
    theta: np.ndarray
    per_replica_hits: np.ndarray   # [n_stages, N] bool: H_k and X^k_0 == X_0

    def checks(self) -> dict:
        return {"stagewise_recovery_bounds": bool(all(s.ok for s in self.stages))}


def successive_approximation(
    model: ChainModel,
    schedule: ReconstructionSchedule,
    n_replicas: int,
    seed: int,
    burn_in: int = 40,
) -> ApproximationReport:
    """Rebuild X_0 from each scheduled window and tally stagewise recovery.

    For every stage k the window J_k is primed from its innovations and the
    recursion is run forward to time 0; the paper's bound predicts recovery
    rate >= 1 - 3 eps_k conditionally on the stage's priming event.
    """
    model = as_probability(model)
    span = schedule.total_span()
    total = burn_in + span + 1  # through time 0
    paths = simulate_paths(model, fold(seed, 0xE1), n_replicas, total)
    innovations = extract_batch(model, paths, fold(seed, 0xE2), skip_steps=burn_in)
    x0 = paths[:, -1]

    outcomes: list[StageOutcome] = []
    hits = np.zeros((len(schedule.stages), n_replicas), dtype=bool)
    for i, stage in enumerate(schedule.stages):
        cert = schedule.certificates[stage.m]
        start = span + stage.t_start  # innovation step index of the window start
        z, h, _ = prime(model, innovations, cert, start_step=start)
        n_h = int(h.sum())
        forward = -stage.t_start - stage.length + 1  # steps from window end through 0
        rebuilt = reconstruct_forward(model, innovations, z, start + stage.length, forward)
        recovered = rebuilt[:, -1] == x0
        hits[i] = h & recovered
        if n_h == 0:
            outcomes.append(StageOutcome(stage, 0.0, 0, math.nan, 1 - 3 * stage.epsilon, True))
            continue
        rate = float(recovered[h].mean())
        se = math.sqrt(max(rate * (1 - rate), 1e-300) / n_h)
        bound = 1.0 - 3.0 * stage.epsilon
        outcomes.append(
            StageOutcome(stage, float(h.mean()), n_h, rate, bound, rate >= bound - 3 * se)
        )
    # a_k = P[miss at 0; H_k] must vanish relative to b_k = P[H_k]
    a_seq = np.array([o.h_rate * (1.0 - o.recovery_rate) if o.n_h else 0.0 for o in outcomes])
    b_seq = np.array([max(o.h_rate, 1e-12) for o in outcomes])
    theta = select_subsequence(a_seq, b_seq)
    return ApproximationReport(stages=outcomes, theta=theta, per_replica_hits=hits)
