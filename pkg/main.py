"""
Main Application Entry Point

Command-line surface of the tracker. Exit codes:

    0  success
    2  configuration error
    3  invariant violation (frozen contract, acceptance gate, failed gradient check)
    4  numerical failure (NaN or infinite loss)

Environment variables are never consulted.
"""

import argparse
import logging
import sys
from typing import List, Optional

import yaml
from pydantic import ValidationError

from commands import (
    ABLATION_VARIANTS,
    cmd_ablate,
    cmd_eval,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_pretrain,
    cmd_route_report,
    cmd_train,
)
from meme.errors import ConfigurationError, InvariantViolation, NumericalFailure
from models.config import load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat YAML configuration file")
    common.add_argument("--seed", type=int, help="Override the configured seed")
    common.add_argument("--out", help="Override the output directory")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="meme", description="Mixture of modal experts RGB-X tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="Generate the synthetic RGB-X dataset")
    sub.add_parser("pretrain", parents=[common], help="Pretrain and freeze the RGB backbone")
    sub.add_parser("train", parents=[common], help="Train the modal branch")

    evaluate = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint against the RGB baseline")
    evaluate.add_argument("--checkpoint", help="Tracker checkpoint (default: <out>/meme.pt)")
    evaluate.add_argument("--split", default="test", choices=["test", "ood"])

    routes = sub.add_parser("route-report", parents=[common], help="Expert selection per modality and layer")
    routes.add_argument("--checkpoint", help="Tracker checkpoint (default: <out>/meme.pt)")
    routes.add_argument("--untrained", action="store_true", help="Report a freshly initialized router")
    routes.add_argument("--split", default="test", choices=["test", "ood"])

    sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suite")

    ablate = sub.add_parser("ablate", parents=[common], help="Train and compare ablation variants")
    ablate.add_argument("--variant", action="append", dest="variants",
                        help=f"Repeatable; one of {', '.join(ABLATION_VARIANTS)} (default: all)")
    return parser


def run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    except (ValidationError, ValueError, OSError, yaml.YAMLError) as e:
        print(f"❌ Invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG

    logger.debug(f"Running {args.command} with {args.config or 'default configuration'}")
    try:
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "pretrain":
            cmd_pretrain(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, checkpoint=args.checkpoint, split=args.split)
        elif args.command == "route-report":
            cmd_route_report(cfg, checkpoint=args.checkpoint, untrained=args.untrained, split=args.split)
        elif args.command == "gradcheck":
            cmd_gradcheck(cfg)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.variants or list(ABLATION_VARIANTS))
    except NumericalFailure as e:
        print(f"❌ Numerical failure (batch seed {e.batch_seed}): {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvariantViolation as e:
        print(f"❌ Invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigurationError, ValidationError) as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
