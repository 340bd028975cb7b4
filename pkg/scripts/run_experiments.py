#!/usr/bin/env python3
"""Run the packaged seeded studies and print their headline numbers.

Each study builds its own synthetic corpus in memory, so nothing needs to
be downloaded. Results land under --out as experiment_<name>/result.json,
the same layout the `verbfocus experiment` subcommand produces, and the
attraction_point and shortcut studies also leave their trained checkpoints
there for inspection.
"""

import argparse
import sys

from verbfocus.cli import main as cli_main
from verbfocus.experiments import EXPERIMENT_NAMES


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("names", nargs="*", metavar="name",
                        help="studies to run (default: all three)")
    parser.add_argument("--out", default="runs/experiments")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    for name in args.names:
        if name not in EXPERIMENT_NAMES:
            parser.error(f"unknown study {name!r} "
                         f"(choose from {', '.join(EXPERIMENT_NAMES)})")
    for name in args.names or EXPERIMENT_NAMES:
        print(f"== {name} ==")
        code = cli_main(["experiment", name,
                         "--out", args.out, "--seed", str(args.seed)])
        if code:
            return code
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
