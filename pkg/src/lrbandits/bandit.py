"""Online loop: epoch scheduling, greedy play, per-epoch re-estimation.

Epoch 1 is pure exploration (the estimate starts at zero, so arm choice is
uniformly random); every later epoch plays greedily against the estimate
fitted at the end of the previous epoch, using only that epoch's own data
for the refit. Regret is pseudo-regret: the gap between the best and the
chosen arm's expected reward within the offered arm set, noise ignored.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .environment import ProblemConfig
from .errors import DegenerateInputError, DivergenceError, ParameterError
from .estimators import (
    FactorEstimate,
    GdConfig,
    TaskBatch,
    altgd_baseline,
    altgdmin_epoch,
    min_w,
    mom_estimate,
    no_split,
    sample_split,
    spectral_init,
    truncation_threshold,
)
from .linalg import spectral_norm, subspace_error

__all__ = [
    "EpochSchedule",
    "epoch_schedule",
    "greedy_action",
    "RoundLog",
    "ExperimentTrace",
    "run_lrrl",
    "run_mom",
    "ThompsonPosterior",
    "run_thompson",
    "regret_of",
    "per_task_regret",
]

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EpochSchedule:
    """Strictly increasing grid [0, G_1, ..., N] of round indices."""

    grid: list[int]
    mode: str

    def __post_init__(self):
        if self.grid[0] != 0 or any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ParameterError(f"grid must be strictly increasing from 0, got {self.grid}")

    @property
    def epochs(self) -> int:
        return len(self.grid) - 1

    @property
    def N(self) -> int:
        return self.grid[-1]


def epoch_schedule(N: int, mode: str = "doubling", uniform_epochs: int | None = None) -> EpochSchedule:
    """Horizon partition.

    doubling: M = ceil(log2 log2 N) epochs with G_m = round(N^(1 - 2^-m)),
    de-duplicated to stay strictly increasing; needs N >= 4. uniform:
    equal-length epochs with any remainder assigned to the last one.
    """
    if mode == "doubling":
        if N < 4:
            raise ParameterError(f"doubling schedule needs N >= 4, got {N}")
        M = int(np.ceil(np.log2(np.log2(N))))
        grid = [0]
        for m in range(1, M):
            g = int(round(N ** (1.0 - 2.0**-m)))
            if grid[-1] < g < N:
                grid.append(g)
        grid.append(N)
        return EpochSchedule(grid=grid, mode=mode)
    if mode == "uniform":
        if uniform_epochs is None or uniform_epochs < 1:
            raise ParameterError("uniform schedule needs uniform_epochs >= 1")
        if N < uniform_epochs:
            raise ParameterError(f"N={N} is smaller than uniform_epochs={uniform_epochs}")
        base = N // uniform_epochs
        grid = [base * m for m in range(uniform_epochs)] + [N]
        return EpochSchedule(grid=grid, mode=mode)
    raise ParameterError(f"unknown schedule mode {mode!r}")


def greedy_action(arms: np.ndarray, theta_hat: np.ndarray) -> int:
    """Index of the arm maximizing phi^T theta_hat; ties go to the lowest index."""
    return int(np.argmax(arms @ theta_hat))


@dataclass(eq=False)
class RoundLog:
    """One (round, task) interaction, for replay-style auditing."""

    round: int
    task: int
    arm: int
    observed_reward: float
    oracle_expected: float
    chosen_expected: float


@dataclass(eq=False)
class ExperimentTrace:
    """Per-trial time series of regret and estimation quality.

    ``oracle_expected`` and ``chosen_expected`` are (N, T); cumulative regret
    is their gap summed over tasks, accumulated over rounds. Estimation
    diagnostics are empty when the environment has no planted truth (MNIST)
    or the algorithm does not estimate the shared matrix (Thompson).
    Epoch entry 0 of ``err_theta_epochs``/``se_epochs`` is the initialization
    point; entry m is the refit at the end of epoch m.
    """

    grid: list[int]
    oracle_expected: np.ndarray
    chosen_expected: np.ndarray
    cum_regret: np.ndarray = field(init=False)
    err_theta_epochs: list[float] = field(default_factory=list)
    se_epochs: list[float] = field(default_factory=list)
    err_iters: list[list[float]] = field(default_factory=list)
    se_iters: list[list[float]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def __post_init__(self):
        gaps = self.oracle_expected - self.chosen_expected
        if gaps.size and gaps.min() < -1e-9:
            raise ParameterError("oracle reward below chosen reward; oracle must maximize")
        self.cum_regret = np.cumsum(gaps.sum(axis=1))


def regret_of(trace: ExperimentTrace) -> float:
    """Total pseudo-regret over the horizon."""
    return float(trace.cum_regret[-1]) if trace.cum_regret.size else 0.0


def per_task_regret(trace: ExperimentTrace, T: int) -> float:
    return regret_of(trace) / T


def _play_epoch(env, theta_hat, n_start, n_stop, rng, explore):
    """Play rounds [n_start, n_stop) for all tasks; returns features/rewards/gaps."""
    T, d = env.T, env.d
    length = n_stop - n_start
    phis = np.empty((length, T, d))
    ys = np.empty((length, T))
    oracle = np.empty((length, T))
    chosen = np.empty((length, T))
    for i, n in enumerate(range(n_start, n_stop)):
        for t in range(T):
            arms = env.arm_set(n, t)
            expected = env.expected_rewards(n, t)
            if explore:
                k = int(rng.integers(env.K))
            else:
                k = greedy_action(arms, theta_hat[:, t])
            phis[i, t] = arms[k]
            ys[i, t] = env.observed_reward(n, t, k)
            oracle[i, t] = expected.max()
            chosen[i, t] = expected[k]
    return phis, ys, oracle, chosen


def _epoch_batches(phis, ys) -> list[TaskBatch]:
    T = phis.shape[1]
    return [TaskBatch(task_id=t, Phi=phis[:, t, :], y=ys[:, t]) for t in range(T)]


def _record_epoch_error(trace, env, B, W):
    if env.ground_truth is None:
        return
    truth = env.ground_truth
    trace.se_epochs.append(subspace_error(B, truth.B_star))
    trace.err_theta_epochs.append(
        float(np.linalg.norm(B @ W - truth.Theta_star) / np.linalg.norm(truth.Theta_star))
    )


def run_lrrl(cfg: ProblemConfig, gd: GdConfig, schedule: EpochSchedule, env, rng,
             method: str = "altgdmin") -> ExperimentTrace:
    """Greedy epoch-based play with per-epoch low-rank refits.

    Epoch 1: uniform-random arms, truncated spectral initialization, then the
    GD-minimization loop. Epochs m >= 2: greedy arms against the previous
    estimate, refit warm-started from the previous basis on this epoch's data
    only. ``method`` selects the refit: "altgdmin" (exact W minimization) or
    "altgd" (gradient steps on both factors). Estimation failures are logged
    and the previous estimate carried forward.
    """
    if method not in ("altgdmin", "altgd"):
        raise ParameterError(f"unknown method {method!r}")
    if schedule.N != env.N:
        raise ParameterError(f"schedule horizon {schedule.N} != environment horizon {env.N}")
    T, d = env.T, env.d
    truth = env.ground_truth
    theta_hat = np.zeros((d, T))
    B_prev = None
    W_prev = None
    oracle = np.zeros((env.N, T))
    chosen = np.zeros((env.N, T))
    epoch_err: list[list[float]] = []
    epoch_se: list[list[float]] = []
    epoch_secs: list[float] = []
    init_recorded = []

    for m in range(1, schedule.epochs + 1):
        t0 = time.perf_counter()
        lo, hi = schedule.grid[m - 1], schedule.grid[m]
        phis, ys, oracle[lo:hi], chosen[lo:hi] = _play_epoch(
            env, theta_hat, lo, hi, rng, explore=(m == 1)
        )
        batches = _epoch_batches(phis, ys)
        try:
            ref_b = truth.B_star if truth is not None else None
            ref_t = truth.Theta_star if truth is not None else None
            if B_prev is None:
                # Initialization epoch: threshold, spectral start, refit.
                if gd.sample_split:
                    split = sample_split(batches, 2 * gd.L + 1, include_init=True)
                    halves = sample_split(split.init_part, 2, include_init=False)
                    alpha = truncation_threshold(halves.gd_parts[0], gd.trunc_multiplier)
                    init = spectral_init(halves.gd_parts[1], alpha, cfg.r, rng=rng)
                    init_w = min_w(init.basis, halves.gd_parts[1])
                else:
                    split = no_split(batches)
                    alpha = truncation_threshold(batches, gd.trunc_multiplier)
                    init = spectral_init(batches, alpha, cfg.r, rng=rng)
                    init_w = min_w(init.basis, batches)
                init_recorded.append((init.basis, init_w))
                B0, sigma = init.basis, init.sigma_max_est
            else:
                split = (
                    sample_split(batches, 2 * gd.L, include_init=False)
                    if gd.sample_split
                    else no_split(batches)
                )
                B0, sigma = B_prev, spectral_norm(B_prev @ W_prev)
            if method == "altgdmin":
                est, diag = altgdmin_epoch(
                    B0, split, gd, sigma_max_hat=sigma, ref_basis=ref_b, ref_theta=ref_t
                )
            else:
                W0 = W_prev if B_prev is not None else min_w(B0, batches)
                est, diag = altgd_baseline(
                    B0, W0, batches, gd.c_gamma, gd.L,
                    sigma_max_hat=sigma, ref_basis=ref_b, ref_theta=ref_t,
                )
            B_prev, W_prev = est.B, est.W
            theta_hat = est.Theta
            epoch_se.append(diag.se)
            epoch_err.append(diag.err_theta)
        except (ParameterError, DegenerateInputError, DivergenceError) as e:
            log.warning("epoch %d estimation failed (%s); carrying forward previous estimate", m, e)
            epoch_se.append([])
            epoch_err.append([])
        epoch_secs.append(time.perf_counter() - t0)

    trace = ExperimentTrace(grid=list(schedule.grid), oracle_expected=oracle, chosen_expected=chosen)
    trace.se_iters = epoch_se
    trace.err_iters = epoch_err
    trace.epoch_seconds = epoch_secs
    if truth is not None:
        if init_recorded:
            _record_epoch_error(trace, env, *init_recorded[0])
        else:
            trace.se_epochs.append(float("nan"))
            trace.err_theta_epochs.append(float("nan"))
        for se_l, err_l in zip(epoch_se, epoch_err):
            trace.se_epochs.append(se_l[-1] if se_l else float("nan"))
            trace.err_theta_epochs.append(err_l[-1] if err_l else float("nan"))
    return trace


def run_mom(cfg: ProblemConfig, gd: GdConfig, schedule: EpochSchedule, env, rng) -> ExperimentTrace:
    """Method-of-moments play: estimate once after the exploration epoch.

    The epoch-1 estimate is reused greedily for the rest of the horizon (no
    re-estimation), which is the standard behavior of this baseline.
    """
    if schedule.N != env.N:
        raise ParameterError(f"schedule horizon {schedule.N} != environment horizon {env.N}")
    T, d = env.T, env.d
    theta_hat = np.zeros((d, T))
    oracle = np.zeros((env.N, T))
    chosen = np.zeros((env.N, T))
    epoch_secs = []
    est = None
    for m in range(1, schedule.epochs + 1):
        t0 = time.perf_counter()
        lo, hi = schedule.grid[m - 1], schedule.grid[m]
        phis, ys, oracle[lo:hi], chosen[lo:hi] = _play_epoch(
            env, theta_hat, lo, hi, rng, explore=(m == 1)
        )
        if m == 1:
            try:
                est, _ = mom_estimate(_epoch_batches(phis, ys), cfg.r, rng=rng)
                theta_hat = est.Theta
            except (ParameterError, DegenerateInputError) as e:
                log.warning("moment estimation failed (%s); playing with zero estimate", e)
        epoch_secs.append(time.perf_counter() - t0)
    trace = ExperimentTrace(grid=list(schedule.grid), oracle_expected=oracle, chosen_expected=chosen)
    trace.epoch_seconds = epoch_secs
    if env.ground_truth is not None and est is not None:
        for _ in range(schedule.epochs + 1):
            _record_epoch_error(trace, env, est.B, est.W)
    return trace


class ThompsonPosterior:
    """Gaussian posterior over one task's parameter under ridge regularization.

    The precision matrix ridge*I + sum phi phi^T is accumulated directly, so
    it is positive-definite by construction, and factored fresh per draw.
    ``mean()`` equals the ridge-regression solution on the observed pairs.
    """

    def __init__(self, d: int, ridge: float):
        if ridge <= 0:
            raise ParameterError("ridge must be > 0")
        self.precision = ridge * np.eye(d)
        self.moment = np.zeros(d)

    def update(self, phi: np.ndarray, y: float) -> None:
        self.precision += np.outer(phi, phi)
        self.moment += y * phi

    def mean(self) -> np.ndarray:
        L = np.linalg.cholesky(self.precision)
        return scipy.linalg.cho_solve((L, True), self.moment)

    def sample(self, rng, scale: float) -> np.ndarray:
        """Draw from N(mean, scale^2 * precision^{-1})."""
        L = np.linalg.cholesky(self.precision)
        mean = scipy.linalg.cho_solve((L, True), self.moment)
        z = rng.standard_normal(len(self.moment))
        return mean + scale * scipy.linalg.solve_triangular(L.T, z, lower=False)


def run_thompson(cfg: ProblemConfig, env, rng, prior_variance: float = 1.0,
                 ridge: float = 1.0) -> ExperimentTrace:
    """Independent per-task linear Thompson sampling.

    Each task keeps its own ridge posterior; actions maximize
    phi^T theta_tilde for a posterior draw scaled by sqrt(prior_variance).
    """
    if prior_variance <= 0:
        raise ParameterError("prior_variance must be > 0")
    T = env.T
    posteriors = [ThompsonPosterior(env.d, ridge) for _ in range(T)]
    oracle = np.zeros((env.N, T))
    chosen = np.zeros((env.N, T))
    scale = np.sqrt(prior_variance)
    for n in range(env.N):
        for t in range(T):
            arms = env.arm_set(n, t)
            expected = env.expected_rewards(n, t)
            theta_tilde = posteriors[t].sample(rng, scale)
            k = greedy_action(arms, theta_tilde)
            y = env.observed_reward(n, t, k)
            posteriors[t].update(arms[k], y)
            oracle[n, t] = expected.max()
            chosen[n, t] = expected[k]
    return ExperimentTrace(grid=[0, env.N], oracle_expected=oracle, chosen_expected=chosen)
