"""Command-line entry points for the experiment pipeline."""

from __future__ import annotations

import argparse
import sys

import torch

from .config import ExperimentConfig
from .errors import DependencyError, DivergenceError, ParameterError
from .pipeline import (
    run_attack_eval,
    run_defense,
    run_full,
    run_report,
    run_synth_data,
    run_train_clean,
    run_train_injector,
    run_train_victim,
)


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqdoor",
        description="Frequency-injection backdoor experiments on a toy restoration model",
    )
    parser.add_argument("--config", type=str, default=None, help="YAML config path")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", type=str, default=None, help="override output directory")
    parser.add_argument("--workers", type=int, default=1, help="compute threads (1 = bitwise reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (
        "synth-data",
        "train-injector",
        "train-clean",
        "train-victim",
        "eval",
        "defend-prune",
        "defend-strip",
        "report",
        "full",
    ):
        sub.add_parser(name)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args)
    torch.set_num_threads(max(1, args.workers))
    try:
        if args.command == "synth-data":
            run_synth_data(cfg)
        elif args.command == "train-injector":
            run_train_injector(cfg, args.workers)
        elif args.command == "train-clean":
            run_train_clean(cfg, args.workers)
        elif args.command == "train-victim":
            run_train_victim(cfg, args.workers)
        elif args.command == "eval":
            run_attack_eval(cfg, args.workers)
        elif args.command == "defend-prune":
            run_defense(cfg, "prune", args.workers)
        elif args.command == "defend-strip":
            run_defense(cfg, "strip", args.workers)
        elif args.command == "report":
            run_report(cfg)
        elif args.command == "full":
            run_full(cfg, args.workers)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (DependencyError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
