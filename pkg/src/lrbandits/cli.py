"""Command-line interface.

Exit codes: 0 success, 1 config error, 2 runtime failure threshold exceeded.
Environment overrides: LRBANDITS_OUTPUT_DIR (output directory),
LRBANDITS_WORKERS (trial worker pool size).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bandit import epoch_schedule
from .config import load_config
from .errors import ConfigError, IdxParseError, ParameterError
from .harness import TooManyFailures, run_experiment
from .mnist import load_mnist_idx


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        agg = run_experiment(cfg)
    except TooManyFailures as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    print(f"wrote results for {len(cfg.sweep_points())} sweep point(s) "
          f"x {cfg.trials} trial(s) to {cfg.output_dir}")
    if agg.failures:
        print(f"warning: {len(agg.failures)} trial(s) failed; see failures.json", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    points = ", ".join(f"(T={T}, r={r})" for T, r in cfg.sweep_points())
    print(f"ok: {len(cfg.algorithms)} algorithm(s), {cfg.trials} trial(s), sweep {points}")
    return 0


def _cmd_schedule(args) -> int:
    try:
        sched = epoch_schedule(args.n, args.mode, uniform_epochs=args.epochs)
    except ParameterError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    print(" ".join(str(g) for g in sched.grid))
    return 0


def _cmd_mnist_check(args) -> int:
    try:
        world = load_mnist_idx(args.images, args.labels)
    except (IdxParseError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    sizes = ", ".join(f"{k}:{len(p)}" for k, p in enumerate(world.digit_pools))
    print(f"{world.total_images} images across pools ({sizes}); "
          f"{len(world.task_pairs)} task pairs")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="lrbandits",
                                     description="Low-rank multi-task bandit experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="validate an experiment config")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)

    p_sched = sub.add_parser("schedule", help="print an epoch grid")
    p_sched.add_argument("--n", type=int, required=True)
    p_sched.add_argument("--mode", choices=["doubling", "uniform"], default="doubling")
    p_sched.add_argument("--epochs", type=int, default=None,
                         help="epoch count (uniform mode)")
    p_sched.set_defaults(fn=_cmd_schedule)

    p_mnist = sub.add_parser("mnist-check", help="parse and summarize an IDX pair")
    p_mnist.add_argument("images")
    p_mnist.add_argument("labels")
    p_mnist.set_defaults(fn=_cmd_mnist_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
