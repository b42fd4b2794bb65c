"""Command-line entry point: ``orpco <subcommand> --config run.yaml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional

from . import experiments
from .config import EVALUATOR_TAGS, BEHAVIOR_TAGS, ExperimentConfig, load_config
from .errors import OrpcoError
from .logging_config import get_logger, setup_logging


logger = get_logger("cli")


def _add_common(s: argparse.ArgumentParser) -> None:
    s.add_argument("--config", type=str, default=None, help="YAML experiment config")
    s.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable), e.g. ensemble.members=3 or runs_dir=out",
    )
    s.add_argument(
        "--runs-dir",
        type=str,
        default=None,
        help="output root for run folders (ORPCO_RUNS_DIR still wins)",
    )
    s.add_argument("--seed", type=int, default=None, help="fix a single seed")
    s.add_argument("--smoke", action="store_true", help="scale K, M, N and epochs down")
    s.add_argument("--debug", action="store_true", help="enable debug logging")
    s.add_argument("--log-file", type=str, default=None, help="also log to this file")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="orpco",
        description="Offline reliable process-control optimization with penalized CGAN ensembles",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("train-dynamics", help="train and calibrate a CGAN or GPN ensemble")
    _add_common(s)
    s.add_argument("--kind", choices=["cgan", "gpn"], default=None)

    s = sub.add_parser("eval-reward", help="penalized reward and intermediates per input row")
    _add_common(s)
    s.add_argument("--ensemble", required=True, help="ensemble checkpoint folder")
    s.add_argument("--data", required=True, help="CSV of (x, u) rows")
    s.add_argument("--evaluator", choices=EVALUATOR_TAGS, default=None)

    s = sub.add_parser("optimize", help="Bayesian optimization of u for given conditionals")
    _add_common(s)
    s.add_argument("--ensemble", required=True, help="ensemble checkpoint folder")
    group = s.add_mutually_exclusive_group(required=True)
    group.add_argument("--x", type=float, nargs="+", help="one conditional vector")
    group.add_argument("--data", help="CSV whose conditional columns are the queries")
    s.add_argument("--evaluator", choices=EVALUATOR_TAGS, default=None)

    s = sub.add_parser("train-policy", help="offline DDPG inside the learned model")
    _add_common(s)
    s.add_argument("--ensemble", required=True, help="ensemble checkpoint folder")
    s.add_argument("--data", required=True, help="trajectory CSV with a time column")
    s.add_argument("--evaluator", choices=EVALUATOR_TAGS, default=None)
    s.add_argument("--seeds", type=int, default=None, help="train seeds 0..n-1")

    s = sub.add_parser("simulate", help="roll out a behavior policy on the surrogate environment")
    _add_common(s)
    s.add_argument("--policy", choices=BEHAVIOR_TAGS, required=True)
    s.add_argument("--n-traj", type=int, default=None)
    s.add_argument("--length", type=int, default=None)
    s.add_argument("--out", required=True, help="output folder")

    s = sub.add_parser("ope", help="DM / IPS / WIS / DR for the ensemble-backed policy")
    _add_common(s)
    s.add_argument("--policy", required=True, help="ensemble checkpoint folder of the policy")
    s.add_argument("--test", default=None, help="test CSV (default: the configured split)")
    s.add_argument("--train", default=None, help="CSV for the propensity and reward models")
    s.add_argument("--evaluator", choices=EVALUATOR_TAGS, default=None)

    for name, text in (
        ("report-ood", "uncertainty curves, histograms and AUROC on randomized inputs"),
        ("experiment-discrete", "the discrete case study with the OPE table"),
        ("experiment-continuous", "the continuous case study on the surrogate environment"),
    ):
        s = sub.add_parser(name, help=text)
        _add_common(s)
    return p


def _overrides(args: argparse.Namespace) -> List[str]:
    """Flag values expressed as config overrides, applied after ``--set``."""
    extra = list(args.overrides)
    if args.runs_dir is not None:
        extra.append(f"runs_dir={json.dumps(args.runs_dir)}")
    if args.smoke:
        extra.append("smoke=true")
    if args.seed is not None:
        extra.append(f"seeds=[{args.seed}]")
    if getattr(args, "evaluator", None):
        extra.append(f"evaluator={args.evaluator}")
    if getattr(args, "kind", None):
        extra.append(f"ensemble.kind={args.kind}")
    if getattr(args, "seeds", None) is not None:
        extra.append(f"seeds=[{', '.join(str(i) for i in range(args.seeds))}]")
    if getattr(args, "n_traj", None) is not None:
        extra.append(f"continuous.n_traj={args.n_traj}")
    if getattr(args, "length", None) is not None:
        extra.append(f"continuous.length={args.length}")
    return extra


def dispatch(args: argparse.Namespace, config: ExperimentConfig) -> None:
    cmd = args.cmd
    if cmd == "train-dynamics":
        experiments.cmd_train_dynamics(config)
    elif cmd == "eval-reward":
        experiments.cmd_eval_reward(config, args.ensemble, args.data)
    elif cmd == "optimize":
        experiments.cmd_optimize(config, args.ensemble, data_path=args.data, x=args.x)
    elif cmd == "train-policy":
        experiments.cmd_train_policy(config, args.ensemble, args.data)
    elif cmd == "simulate":
        experiments.cmd_simulate(config, args.policy, args.out, seed=args.seed)
    elif cmd == "ope":
        experiments.cmd_ope(config, args.policy, test_path=args.test, train_path=args.train)
    elif cmd == "report-ood":
        experiments.cmd_report_ood(config)
    elif cmd == "experiment-discrete":
        experiments.cmd_experiment_discrete(config)
    elif cmd == "experiment-continuous":
        experiments.cmd_experiment_continuous(config)
    else:
        raise ValueError(f"unknown command '{cmd}'")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=logging.DEBUG if args.debug else logging.INFO, log_file=args.log_file)
    try:
        config = load_config(args.config, _overrides(args))
        dispatch(args, config)
    except OrpcoError as e:
        logger.error(f"{args.cmd} failed: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
