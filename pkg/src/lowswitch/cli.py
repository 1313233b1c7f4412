"""Command line entry point.

Exit codes: 0 success, 2 configuration/validation failure, 3 check-suite failure.
"""
from __future__ import annotations

import argparse
import inspect
import json
import sys
from pathlib import Path

from .checks import run_checks
from .envs import env_registry
from .harness import (
    ConfigError,
    ExperimentConfig,
    InsufficientDataError,
    run_experiment,
    summarize,
    write_results,
    write_summary,
)
from .mdp import MdpValidationError

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 2, 3


def _out_dir(cfg: ExperimentConfig, override: str | None, config_path: str) -> Path:
    if override:
        return Path(override)
    if cfg.out:
        return Path(cfg.out)
    return Path(config_path).with_suffix("").parent / f"{Path(config_path).stem}_out"


def cmd_run(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _out_dir(cfg, args.out, args.config)
    results = run_experiment(cfg, workers=1)
    for p in write_results(results, out):
        print(p)
    if len(cfg.K) >= 2:
        print(write_summary(summarize(results), cfg, out))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _out_dir(cfg, args.out, args.config)
    results = run_experiment(cfg, workers=args.workers)
    write_results(results, out)
    path = write_summary(summarize(results), cfg, out)
    print(path)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    report = run_checks(budget=args.budget, seed=args.seed)
    print(json.dumps(report, indent=1))
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_envs(args: argparse.Namespace) -> int:
    for name, fn in sorted(env_registry().items()):
        print(f"{name}{inspect.signature(fn)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowswitch", description="Low-switching optimistic RL experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment sequentially")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run an experiment grid in parallel and summarise it")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=None, help="process count (default: all cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the oracle/property suite")
    p.add_argument("--budget", type=int, default=10, help="random instances per check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("envs", help="list registered environments")
    p.set_defaults(func=cmd_envs)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MdpValidationError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
