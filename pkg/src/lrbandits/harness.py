"""Multi-trial experiment orchestration and CSV emission.

Each (sweep point, trial) job builds one environment from a spawn-keyed seed
stream and runs every configured algorithm against it, so algorithms are
compared on identical arm sets and noise. Aggregation is a deterministic
two-pass fold in trial order; CSVs are byte-stable for a fixed config.
"""

from __future__ import annotations

import json
import logging
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandit import epoch_schedule, run_lrrl, run_mom, run_thompson
from .config import ExperimentConfig
from .environment import ProblemConfig, SyntheticEnvironment, rng_from
from .errors import ParameterError
from .mnist import MnistEnvironment, load_mnist_idx

__all__ = ["AggregateResult", "TooManyFailures", "run_experiment", "write_csv", "CSV_KINDS"]

log = logging.getLogger(__name__)

CSV_KINDS = ("regret", "err_theta", "se_iter")

# Fraction of failed trials above which the whole experiment is fatal.
_FATAL_FAILURE_FRACTION = 0.10

_worker_world = None


@dataclass(eq=False)
class AggregateResult:
    """Across-trial mean and sample variance, keyed by (algorithm, T, r).

    regret entries hold per-round series, err_theta per-epoch series (entry
    0 is the initialization), se_iter per-(epoch, iteration) matrices.
    ``n`` inside each entry is the number of completed trials aggregated.
    """

    trials: int
    regret: dict = field(default_factory=dict)
    err_theta: dict = field(default_factory=dict)
    se_iter: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


class TooManyFailures(RuntimeError):
    """More than the tolerated fraction of trials raised."""


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _mean_var(rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.stack(rows)
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0, ddof=1) if len(rows) > 1 else np.zeros_like(mean)
    return mean, var


def _trial_job(cfg: ExperimentConfig, point_idx: int, T: int, r: int, trial: int):
    """Run every algorithm for one (sweep point, trial); returns raw series."""
    base = cfg.problem
    problem = ProblemConfig(
        d=base.d, T=T, r=r, K=base.K, N=base.N,
        noise_variance=base.noise_variance, seed=base.seed,
    )
    env_ss = np.random.SeedSequence(base.seed, spawn_key=(point_idx, trial, 0))
    if cfg.mnist is not None:
        world = _worker_world if _worker_world is not None else load_mnist_idx(
            cfg.mnist.images, cfg.mnist.labels
        )
        env = MnistEnvironment(world, N=base.N, T=T,
                               noise_variance=base.noise_variance, seed_seq=env_ss)
    else:
        env = SyntheticEnvironment(problem, env_ss)
    schedule = epoch_schedule(
        base.N, cfg.schedule_mode,
        uniform_epochs=cfg.schedule_epochs if cfg.schedule_mode == "uniform" else None,
    )
    out = {}
    for ai, alg in enumerate(cfg.algorithms):
        rng = rng_from(np.random.SeedSequence(base.seed, spawn_key=(point_idx, trial, 1 + ai)))
        if alg == "lrrl-altgdmin":
            trace = run_lrrl(problem, cfg.gd, schedule, env, rng, method="altgdmin")
        elif alg == "lrrl-altgd":
            trace = run_lrrl(problem, cfg.gd, schedule, env, rng, method="altgd")
        elif alg == "mom":
            trace = run_mom(problem, cfg.gd, schedule, env, rng)
        elif alg == "thompson":
            trace = run_thompson(problem, env, rng,
                                 prior_variance=cfg.thompson_prior_variance,
                                 ridge=cfg.thompson_ridge)
        else:  # pragma: no cover - guarded by config validation
            raise ParameterError(f"unknown algorithm {alg!r}")
        series = {"regret": trace.cum_regret}
        if trace.err_theta_epochs:
            series["err_theta"] = np.asarray(trace.err_theta_epochs)
        if any(len(it) for it in trace.se_iters):
            epochs, L = len(trace.se_iters), cfg.gd.L
            se = np.full((epochs, L), np.nan)
            err = np.full((epochs, L), np.nan)
            for e, (se_l, err_l) in enumerate(zip(trace.se_iters, trace.err_iters)):
                se[e, : len(se_l)] = se_l
                err[e, : len(err_l)] = err_l
            series["se_iter"] = se
            series["err_iter"] = err
        out[alg] = series
    return out


def _init_worker(mnist_paths):
    global _worker_world
    if mnist_paths is not None:
        _worker_world = load_mnist_idx(mnist_paths.images, mnist_paths.labels)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> AggregateResult:
    """Run the full sweep and write CSVs into ``cfg.output_dir``.

    Per-trial failures are recorded (with the spawn key needed to replay
    them) and tolerated up to 10% of all jobs; beyond that TooManyFailures
    is raised after writing whatever aggregated safely.
    """
    if workers is None:
        workers = int(os.environ.get("LRBANDITS_WORKERS", "1"))
    points = cfg.sweep_points()
    jobs = [(pi, T, r, trial) for pi, (T, r) in enumerate(points) for trial in range(cfg.trials)]

    results: dict[tuple, dict | None] = {}
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(cfg.mnist,)
        ) as pool:
            futures = {job: pool.submit(_trial_job, cfg, *job) for job in jobs}
            for job, fut in futures.items():
                try:
                    results[job] = fut.result()
                except Exception as e:  # noqa: BLE001 - trial isolation
                    results[job] = None
                    log.warning("trial %s failed: %s", job, e)
    else:
        for job in jobs:
            try:
                results[job] = _trial_job(cfg, *job)
            except Exception as e:  # noqa: BLE001 - trial isolation
                results[job] = None
                log.warning("trial %s failed: %s", job, e)

    agg = AggregateResult(trials=cfg.trials)
    for pi, (T, r) in enumerate(points):
        per_alg: dict[str, dict[str, list]] = {a: {} for a in cfg.algorithms}
        for trial in range(cfg.trials):
            res = results[(pi, T, r, trial)]
            if res is None:
                agg.failures.append(
                    {"point": {"T": T, "r": r}, "trial": trial,
                     "seed": cfg.problem.seed, "spawn_key": [pi, trial, 0]}
                )
                continue
            for alg, series in res.items():
                for kind, arr in series.items():
                    per_alg[alg].setdefault(kind, []).append(arr)
        for alg in cfg.algorithms:
            key = (alg, T, r)
            kinds = per_alg[alg]
            if "regret" in kinds:
                mean, var = _mean_var(kinds["regret"])
                agg.regret[key] = {"mean": mean, "var": var, "n": len(kinds["regret"])}
            if "err_theta" in kinds:
                mean, var = _mean_var(kinds["err_theta"])
                agg.err_theta[key] = {"mean": mean, "var": var, "n": len(kinds["err_theta"])}
            if "se_iter" in kinds:
                mean_se, _ = _mean_var(kinds["se_iter"])
                mean_err, var_err = _mean_var(kinds["err_iter"])
                agg.se_iter[key] = {
                    "mean_se": mean_se, "mean_err": mean_err, "var_err": var_err,
                    "n": len(kinds["se_iter"]),
                }

    os.makedirs(cfg.output_dir, exist_ok=True)
    tables = {"regret": agg.regret, "err_theta": agg.err_theta, "se_iter": agg.se_iter}
    for kind in CSV_KINDS:
        if tables[kind]:
            write_csv(agg, kind, os.path.join(cfg.output_dir, f"{kind}.csv"), seed=cfg.problem.seed)
    if agg.failures:
        with open(os.path.join(cfg.output_dir, "failures.json"), "w", encoding="utf-8") as f:
            json.dump(agg.failures, f, indent=2)
    if len(agg.failures) > _FATAL_FAILURE_FRACTION * len(jobs):
        raise TooManyFailures(
            f"{len(agg.failures)} of {len(jobs)} trials failed "
            f"(tolerance {_FATAL_FAILURE_FRACTION:.0%}); see failures.json"
        )
    return agg


def _fmt(x: float) -> str:
    """Scientific notation, 6 significant digits, the one format everywhere."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.5e}"


def write_csv(result: AggregateResult, kind: str, path, seed: int = 0) -> None:
    """Emit one aggregate table; schema is fixed per kind.

    regret:    algorithm,T,r,round,mean_cum_regret,var
    err_theta: algorithm,T,r,epoch,mean_err,var
    se_iter:   algorithm,T,r,epoch,gd_iter,mean_se,mean_err_theta,var_err_theta
    """
    if kind not in CSV_KINDS:
        raise ParameterError(f"unknown csv kind {kind!r}")
    table = {"regret": result.regret, "err_theta": result.err_theta, "se_iter": result.se_iter}[kind]
    if not table:
        raise ParameterError(f"no rows to write for kind {kind!r}")
    lines = [
        f"# seed={seed}",
        f"# git-describe={_git_describe()}",
        f"# trials={result.trials}",
    ]
    if kind == "regret":
        lines.append("algorithm,T,r,round,mean_cum_regret,var")
        for (alg, T, r) in sorted(table):
            entry = table[(alg, T, r)]
            for i, (m, v) in enumerate(zip(entry["mean"], entry["var"]), start=1):
                lines.append(f"{alg},{T},{r},{i},{_fmt(m)},{_fmt(v)}")
    elif kind == "err_theta":
        lines.append("algorithm,T,r,epoch,mean_err,var")
        for (alg, T, r) in sorted(table):
            entry = table[(alg, T, r)]
            for e, (m, v) in enumerate(zip(entry["mean"], entry["var"])):
                lines.append(f"{alg},{T},{r},{e},{_fmt(m)},{_fmt(v)}")
    else:
        lines.append("algorithm,T,r,epoch,gd_iter,mean_se,mean_err_theta,var_err_theta")
        for (alg, T, r) in sorted(table):
            entry = table[(alg, T, r)]
            epochs, L = entry["mean_se"].shape
            for e in range(epochs):
                for l in range(L):
                    lines.append(
                        f"{alg},{T},{r},{e + 1},{l + 1},{_fmt(entry['mean_se'][e, l])},"
                        f"{_fmt(entry['mean_err'][e, l])},{_fmt(entry['var_err'][e, l])}"
                    )
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
