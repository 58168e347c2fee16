"""Command-line entry point.

Verbs:
    jscc train --config run.cfg --out results/run1
    jscc eval --checkpoint ckpt.pt --config eval.cfg --out sweep.csv
    jscc dump-constellation --checkpoint ckpt.pt --config eval.cfg --out points.csv

Set JSCC_DEVICE to pick the compute device (default cpu). Exit codes:
0 success, 2 config error, 3 data error, 4 checkpoint error, 5 training
diverged, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError
from .data import DataError
from .harness import dump_constellation, run_eval, run_train
from .training import TrainingDiverged

EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    CheckpointError: 4,
    TrainingDiverged: 5,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jscc",
        description="Train and evaluate constellation-constrained image transmission models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True, help="flat key=value config file")
    p_train.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="sweep a checkpoint over test SNRs")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--out", required=True, help="output CSV path")
    p_eval.add_argument(
        "--plot", action="store_true", help="also render a PNG next to the CSV"
    )

    p_dump = sub.add_parser(
        "dump-constellation", help="export constellation points and usage probabilities"
    )
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--config", required=True)
    p_dump.add_argument("--out", required=True, help="output CSV path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            paths = run_train(args.config, args.out)
            for name, path in paths.items():
                print(f"{name}: {path}")
        elif args.command == "eval":
            print(f"sweep: {run_eval(args.checkpoint, args.config, args.out, plot=args.plot)}")
        else:
            print(f"constellation: {dump_constellation(args.checkpoint, args.config, args.out)}")
        return 0
    except tuple(EXIT_CODES) as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        for etype, code in EXIT_CODES.items():
            if isinstance(exc, etype):
                return code
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
