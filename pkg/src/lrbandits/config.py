"""Experiment configuration: YAML schema, validation, round-trip serialization.

The file is a small tree; unknown keys anywhere are rejected so typos fail
loudly. Defaults: c_gamma=0.4, trials=100, uniform schedule with 4 epochs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from .environment import ProblemConfig
from .errors import ConfigError, ParameterError
from .estimators import GdConfig

__all__ = ["ALGORITHMS", "MnistPaths", "ExperimentConfig", "load_config", "config_to_dict", "dump_config"]

ALGORITHMS = ("lrrl-altgdmin", "lrrl-altgd", "mom", "thompson")

_PROBLEM_KEYS = {"d", "T", "r", "K", "N", "noise_variance", "seed"}
_GD_KEYS = {"L", "c_gamma", "trunc_multiplier", "sample_split"}
_SCHEDULE_KEYS = {"mode", "epochs"}
_THOMPSON_KEYS = {"prior_variance", "ridge"}
_SWEEP_KEYS = {"T", "r"}
_TOP_KEYS = {"problem", "gd", "schedule", "thompson", "algorithms", "trials", "output_dir", "dataset", "sweep"}


@dataclass
class MnistPaths:
    images: str
    labels: str


@dataclass(eq=False)
class ExperimentConfig:
    problem: ProblemConfig
    gd: GdConfig
    schedule_mode: str = "uniform"
    schedule_epochs: int = 4
    thompson_prior_variance: float = 1.0
    thompson_ridge: float = 1.0
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    trials: int = 100
    output_dir: str = "out"
    mnist: MnistPaths | None = None
    sweep_T: list[int] | None = None
    sweep_r: list[int] | None = None

    def sweep_points(self) -> list[tuple[int, int]]:
        """Cartesian (T, r) grid; the base problem's values when no sweep."""
        Ts = self.sweep_T or [self.problem.T]
        rs = self.sweep_r or [self.problem.r]
        return [(T, r) for T in Ts for r in rs]


def _require_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _coerce(section: dict, key: str, kind, where: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {key!r} in {where}")
        return default
    value = section[key]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}.{key} must be a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key} must be a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}.{key} must be a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _int_list(value, where: str) -> list[int]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where} must be a non-empty list")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where} entries must be integers, got {v!r}")
    return list(value)


def from_dict(tree: dict) -> ExperimentConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    _require_keys(tree, _TOP_KEYS, "top level")

    prob = tree.get("problem")
    if not isinstance(prob, dict):
        raise ConfigError("missing or malformed 'problem' section")
    _require_keys(prob, _PROBLEM_KEYS, "problem")
    try:
        problem = ProblemConfig(
            d=_coerce(prob, "d", int, "problem", required=True),
            T=_coerce(prob, "T", int, "problem", required=True),
            r=_coerce(prob, "r", int, "problem", required=True),
            K=_coerce(prob, "K", int, "problem", required=True),
            N=_coerce(prob, "N", int, "problem", required=True),
            noise_variance=_coerce(prob, "noise_variance", float, "problem", default=0.0),
            seed=_coerce(prob, "seed", int, "problem", default=0),
        )
    except ParameterError as e:
        raise ConfigError(f"problem: {e}") from e

    gd_tree = tree.get("gd", {})
    if not isinstance(gd_tree, dict):
        raise ConfigError("'gd' must be a mapping")
    _require_keys(gd_tree, _GD_KEYS, "gd")
    try:
        gd = GdConfig(
            L=_coerce(gd_tree, "L", int, "gd", default=100),
            c_gamma=_coerce(gd_tree, "c_gamma", float, "gd", default=0.4),
            trunc_multiplier=_coerce(gd_tree, "trunc_multiplier", float, "gd", default=9.0),
            sample_split=_coerce(gd_tree, "sample_split", bool, "gd", default=True),
        )
    except ParameterError as e:
        raise ConfigError(f"gd: {e}") from e

    sched = tree.get("schedule", {})
    if not isinstance(sched, dict):
        raise ConfigError("'schedule' must be a mapping")
    _require_keys(sched, _SCHEDULE_KEYS, "schedule")
    mode = _coerce(sched, "mode", str, "schedule", default="uniform")
    if mode not in ("uniform", "doubling"):
        raise ConfigError(f"schedule.mode must be 'uniform' or 'doubling', got {mode!r}")
    epochs = _coerce(sched, "epochs", int, "schedule", default=4)
    if mode == "uniform" and epochs < 1:
        raise ConfigError("schedule.epochs must be >= 1")

    ts = tree.get("thompson", {})
    if not isinstance(ts, dict):
        raise ConfigError("'thompson' must be a mapping")
    _require_keys(ts, _THOMPSON_KEYS, "thompson")
    prior_variance = _coerce(ts, "prior_variance", float, "thompson", default=1.0)
    ridge = _coerce(ts, "ridge", float, "thompson", default=1.0)
    if prior_variance <= 0 or ridge <= 0:
        raise ConfigError("thompson.prior_variance and thompson.ridge must be > 0")

    algorithms = tree.get("algorithms", list(ALGORITHMS))
    if not isinstance(algorithms, list) or not algorithms:
        raise ConfigError("'algorithms' must be a non-empty list")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; choose from {list(ALGORITHMS)}")

    trials = _coerce(tree, "trials", int, "top level", default=100)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    output_dir = _coerce(tree, "output_dir", str, "top level", default="out")

    dataset = tree.get("dataset", "synthetic")
    mnist = None
    if isinstance(dataset, str):
        if dataset != "synthetic":
            raise ConfigError(f"dataset must be 'synthetic' or a mnist mapping, got {dataset!r}")
    elif isinstance(dataset, dict):
        _require_keys(dataset, {"mnist"}, "dataset")
        sub = dataset.get("mnist")
        if not isinstance(sub, dict):
            raise ConfigError("dataset.mnist must be a mapping with images/labels paths")
        _require_keys(sub, {"images", "labels"}, "dataset.mnist")
        mnist = MnistPaths(
            images=_coerce(sub, "images", str, "dataset.mnist", required=True),
            labels=_coerce(sub, "labels", str, "dataset.mnist", required=True),
        )
        if problem.d != 784:
            raise ConfigError("mnist dataset requires problem.d = 784")
        if problem.K != 2:
            raise ConfigError("mnist dataset requires problem.K = 2")
    else:
        raise ConfigError("dataset must be 'synthetic' or {mnist: {images, labels}}")

    sweep_T = sweep_r = None
    sweep = tree.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ConfigError("'sweep' must be a mapping")
        _require_keys(sweep, _SWEEP_KEYS, "sweep")
        if "T" in sweep:
            sweep_T = _int_list(sweep["T"], "sweep.T")
        if "r" in sweep:
            sweep_r = _int_list(sweep["r"], "sweep.r")

    cfg = ExperimentConfig(
        problem=problem,
        gd=gd,
        schedule_mode=mode,
        schedule_epochs=epochs,
        thompson_prior_variance=prior_variance,
        thompson_ridge=ridge,
        algorithms=list(algorithms),
        trials=trials,
        output_dir=output_dir,
        mnist=mnist,
        sweep_T=sweep_T,
        sweep_r=sweep_r,
    )
    for T, r in cfg.sweep_points():
        if T < 1 or r < 1 or r > min(problem.d, T):
            raise ConfigError(f"sweep point (T={T}, r={r}) violates r <= min(d={problem.d}, T)")
        if mnist is not None and T > 45:
            raise ConfigError(f"mnist supports at most 45 tasks, sweep asks for T={T}")
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config; failures carry location."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            tree = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"YAML parse error{where}: {e}") from e
    if tree is None:
        raise ConfigError("config file is empty")
    cfg = from_dict(tree)
    override = os.environ.get("LRBANDITS_OUTPUT_DIR")
    if override:
        cfg.output_dir = override
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Inverse of from_dict (environment overrides excluded)."""
    tree = {
        "problem": {
            "d": cfg.problem.d,
            "T": cfg.problem.T,
            "r": cfg.problem.r,
            "K": cfg.problem.K,
            "N": cfg.problem.N,
            "noise_variance": cfg.problem.noise_variance,
            "seed": cfg.problem.seed,
        },
        "gd": {
            "L": cfg.gd.L,
            "c_gamma": cfg.gd.c_gamma,
            "trunc_multiplier": cfg.gd.trunc_multiplier,
            "sample_split": cfg.gd.sample_split,
        },
        "schedule": {"mode": cfg.schedule_mode, "epochs": cfg.schedule_epochs},
        "thompson": {"prior_variance": cfg.thompson_prior_variance, "ridge": cfg.thompson_ridge},
        "algorithms": list(cfg.algorithms),
        "trials": cfg.trials,
        "output_dir": cfg.output_dir,
    }
    if cfg.mnist is not None:
        tree["dataset"] = {"mnist": {"images": cfg.mnist.images, "labels": cfg.mnist.labels}}
    else:
        tree["dataset"] = "synthetic"
    if cfg.sweep_T is not None or cfg.sweep_r is not None:
        sweep = {}
        if cfg.sweep_T is not None:
            sweep["T"] = list(cfg.sweep_T)
        if cfg.sweep_r is not None:
            sweep["r"] = list(cfg.sweep_r)
        tree["sweep"] = sweep
    return tree


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)
