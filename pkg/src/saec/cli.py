"""Command-line entry point: ``saec train | eval | export-samples``."""

from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .run import export_samples, run_eval, run_train
from .trainer import NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saec", description="Stochastic actor-executor-critic inpainting.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "export-samples"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed)")
        p.add_argument("--checkpoint", help="checkpoint to resume from (train) or evaluate (eval)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, out_dir=args.out, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.command == "train":
            run_train(cfg, resume=args.checkpoint)
        elif args.command == "eval":
            if not args.checkpoint:
                print("eval requires --checkpoint", file=sys.stderr)
                return EXIT_CONFIG
            summary = run_eval(cfg, args.checkpoint)
            print(" ".join(f"{k}={v:.6g}" for k, v in summary.items()))
        else:
            export_samples(cfg)
    except NumericalError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ConfigError) as exc:
        print(f"incompatible input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
