import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lrbandits.bandit as bandit_mod
from lrbandits import (
    EpochSchedule,
    ExperimentTrace,
    FactorEstimate,
    GdConfig,
    ParameterError,
    ProblemConfig,
    SyntheticEnvironment,
    ThompsonPosterior,
    epoch_schedule,
    greedy_action,
    per_task_regret,
    regret_of,
    rng_from,
    run_lrrl,
    run_mom,
    run_thompson,
)
from lrbandits.estimators import GdDiagnostics

from oracles import normal_equations_lsq

seeds = st.integers(0, 2**32 - 1)


def make_env(trial=0, **kw):
    base = dict(d=8, T=5, r=2, K=3, N=16, noise_variance=0.0, seed=13)
    base.update(kw)
    cfg = ProblemConfig(**base)
    env = SyntheticEnvironment(cfg, np.random.SeedSequence(cfg.seed, spawn_key=(0, trial, 0)))
    return cfg, env


class TestEpochSchedule:
    def test_doubling_16(self):
        assert epoch_schedule(16, "doubling").grid == [0, 4, 16]

    def test_doubling_256(self):
        assert epoch_schedule(256, "doubling").grid == [0, 16, 64, 256]

    def test_uniform_200_by_4(self):
        assert epoch_schedule(200, "uniform", uniform_epochs=4).grid == [0, 50, 100, 150, 200]

    def test_uniform_remainder_to_last(self):
        assert epoch_schedule(22, "uniform", uniform_epochs=4).grid == [0, 5, 10, 15, 22]

    def test_doubling_too_small(self):
        with pytest.raises(ParameterError):
            epoch_schedule(3, "doubling")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(4, 100_000))
    def test_doubling_recurrence(self, N):
        grid = epoch_schedule(N, "doubling").grid
        assert grid[0] == 0 and grid[-1] == N
        assert all(b > a for a, b in zip(grid, grid[1:]))
        for m in range(2, len(grid)):
            # G_m^2 >= G_{m-1} * N up to integer rounding of the grid points
            assert (grid[m] + 1) ** 2 >= grid[m - 1] * N * 0.9

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            epoch_schedule(16, "fibonacci")


class TestGreedyAction:
    def test_zero_estimate_takes_first(self):
        arms = rng_from(0).standard_normal((4, 3))
        assert greedy_action(arms, np.zeros(3)) == 0

    def test_picks_best_inner_product(self):
        arms = np.eye(2)
        assert greedy_action(arms, np.array([1.0, 5.0])) == 1

    @settings(max_examples=30, deadline=None)
    @given(seeds)
    def test_matches_linear_scan(self, seed):
        rng = rng_from(seed)
        arms = rng.standard_normal((100, 6))
        theta = rng.standard_normal(6)
        scores = [float(a @ theta) for a in arms]
        assert greedy_action(arms, theta) == int(np.argmax(scores))

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.floats(0.01, 100.0))
    def test_scale_invariant(self, seed, c):
        rng = rng_from(seed)
        arms = rng.standard_normal((7, 4))
        theta = rng.standard_normal(4)
        assert greedy_action(arms, theta) == greedy_action(arms, c * theta)


def default_gd(**kw):
    base = dict(L=20, c_gamma=0.4, sample_split=False)
    base.update(kw)
    return GdConfig(**base)


class TestRunLrrl:
    def test_single_arm_zero_regret(self):
        cfg, env = make_env(K=1)
        sched = epoch_schedule(16, "uniform", uniform_epochs=4)
        trace = run_lrrl(cfg, default_gd(), sched, env, rng_from(1))
        assert regret_of(trace) == 0.0

    def test_oracle_estimate_zeroes_regret_after_epoch_one(self, monkeypatch):
        cfg, env = make_env(N=40, T=6, d=10)
        truth = env.ground_truth

        def frozen_truth(B_in, split, gd, **kw):
            return FactorEstimate(truth.B_star, truth.W_star), GdDiagnostics()

        monkeypatch.setattr(bandit_mod, "altgdmin_epoch", frozen_truth)
        sched = epoch_schedule(40, "uniform", uniform_epochs=4)
        trace = run_lrrl(cfg, default_gd(), sched, env, rng_from(2))
        assert regret_of(trace) == pytest.approx(trace.cum_regret[sched.grid[1] - 1])
        gaps = trace.oracle_expected - trace.chosen_expected
        assert np.abs(gaps[sched.grid[1]:]).max() <= 1e-12

    def test_regret_nonnegative_nondecreasing(self):
        cfg, env = make_env(N=24, noise_variance=0.01)
        sched = epoch_schedule(24, "uniform", uniform_epochs=3)
        trace = run_lrrl(cfg, default_gd(), sched, env, rng_from(3))
        assert trace.cum_regret[0] >= 0.0
        assert (np.diff(trace.cum_regret) >= -1e-12).all()

    def test_reproducible_traces(self):
        for _ in range(2):
            results = []
            cfg, env = make_env(N=16, noise_variance=0.04)
            sched = epoch_schedule(16, "uniform", uniform_epochs=4)
            results.append(run_lrrl(cfg, default_gd(), sched, env, rng_from(4)))
        a = results[0]
        cfg, env = make_env(N=16, noise_variance=0.04)
        b = run_lrrl(cfg, default_gd(), sched, env, rng_from(4))
        assert a.cum_regret.tobytes() == b.cum_regret.tobytes()
        assert a.chosen_expected.tobytes() == b.chosen_expected.tobytes()
        assert a.se_epochs == b.se_epochs

    def test_estimation_failure_downgrades(self, caplog):
        # sample splitting needs 2L+1 parts but epochs only have 4 rounds
        cfg, env = make_env(N=16)
        sched = epoch_schedule(16, "uniform", uniform_epochs=4)
        gd = default_gd(L=50, sample_split=True)
        with caplog.at_level("WARNING"):
            trace = run_lrrl(cfg, gd, sched, env, rng_from(5))
        assert "carrying forward" in caplog.text
        assert np.isnan(trace.err_theta_epochs).all()
        assert regret_of(trace) >= 0.0

    def test_epoch_error_series_lengths(self):
        cfg, env = make_env(N=16, T=6, d=10, r=2)
        sched = epoch_schedule(16, "uniform", uniform_epochs=4)
        trace = run_lrrl(cfg, default_gd(L=12), sched, env, rng_from(6))
        assert len(trace.err_theta_epochs) == 5  # init + 4 epochs
        assert len(trace.se_epochs) == 5
        assert len(trace.se_iters) == 4
        assert all(len(it) == 12 for it in trace.se_iters)
        assert len(trace.epoch_seconds) == 4
        assert trace.err_theta_epochs[-1] <= trace.err_theta_epochs[0]

    def test_altgd_method(self):
        cfg, env = make_env(N=16, T=6, d=10)
        sched = epoch_schedule(16, "uniform", uniform_epochs=2)
        trace = run_lrrl(cfg, default_gd(L=30), sched, env, rng_from(7), method="altgd")
        assert len(trace.err_theta_epochs) == 3
        assert regret_of(trace) >= 0.0

    def test_unknown_method(self):
        cfg, env = make_env()
        sched = epoch_schedule(16, "uniform", uniform_epochs=4)
        with pytest.raises(ParameterError):
            run_lrrl(cfg, default_gd(), sched, env, rng_from(0), method="sgd")


class TestRunMom:
    def test_estimates_once_then_greedy(self):
        cfg, env = make_env(N=20, T=6, d=10, noise_variance=1e-6)
        sched = epoch_schedule(20, "uniform", uniform_epochs=4)
        trace = run_mom(cfg, default_gd(), sched, env, rng_from(8))
        # error trace is one constant value repeated for init + every epoch
        assert len(set(trace.err_theta_epochs)) == 1
        assert len(trace.err_theta_epochs) == 5
        assert regret_of(trace) >= 0.0


class TestThompson:
    def test_single_arm_zero_regret(self):
        cfg, env = make_env(K=1, noise_variance=0.01)
        trace = run_thompson(cfg, env, rng_from(9))
        assert regret_of(trace) == 0.0

    def test_posterior_mean_matches_ridge_oracle(self):
        rng = rng_from(10)
        post = ThompsonPosterior(d=6, ridge=2.5)
        phis = rng.standard_normal((30, 6))
        ys = rng.standard_normal(30)
        for phi, y in zip(phis, ys):
            post.update(phi, y)
        direct = np.linalg.solve(phis.T @ phis + 2.5 * np.eye(6), phis.T @ ys)
        assert np.allclose(post.mean(), direct, atol=1e-8)

    def test_regret_grows_with_dimension(self):
        totals = {}
        for d in (10, 100):
            vals = []
            for trial in range(5):
                cfg, env = make_env(trial=trial, d=d, T=4, N=30, K=4, noise_variance=1.0, seed=77)
                vals.append(regret_of(run_thompson(cfg, env, rng_from((d, trial)))))
            totals[d] = np.mean(vals)
        assert totals[100] > totals[10]

    def test_invalid_hyperparameters(self):
        cfg, env = make_env()
        with pytest.raises(ParameterError):
            run_thompson(cfg, env, rng_from(0), prior_variance=0.0)
        with pytest.raises(ParameterError):
            ThompsonPosterior(3, ridge=-1.0)


class TestRegretAccounting:
    def test_empty_trace(self):
        trace = ExperimentTrace(grid=[0], oracle_expected=np.zeros((0, 3)),
                                chosen_expected=np.zeros((0, 3)))
        assert regret_of(trace) == 0.0

    def test_hand_built_two_rounds(self):
        trace = ExperimentTrace(
            grid=[0, 2],
            oracle_expected=np.array([[1.0], [0.5]]),
            chosen_expected=np.array([[0.5], [0.25]]),
        )
        assert regret_of(trace) == pytest.approx(0.75)
        assert per_task_regret(trace, 1) == pytest.approx(0.75)

    def test_matches_replay_recomputation(self):
        cfg, env = make_env(N=16, noise_variance=0.09)
        sched = epoch_schedule(16, "uniform", uniform_epochs=4)
        trace = run_lrrl(cfg, default_gd(), sched, env, rng_from(11))
        replay = 0.0
        for n in range(16):
            for t in range(cfg.T):
                replay += trace.oracle_expected[n, t] - trace.chosen_expected[n, t]
        assert regret_of(trace) == pytest.approx(replay, rel=1e-12)

    def test_oracle_invariant_enforced(self):
        with pytest.raises(ParameterError):
            ExperimentTrace(grid=[0, 1], oracle_expected=np.array([[0.0]]),
                            chosen_expected=np.array([[1.0]]))
