"""Run the acceptance criteria through the command line pipeline.

Usage: python3 scripts/run_acceptance.py [--only A1,A2] [--out DIR]
"""

import argparse
import sys
from pathlib import Path

from kwcopt.cli import main

CONFIG = Path(__file__).resolve().parent / "configs" / "check.json"


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", help="comma-separated subset of criteria")
    ap.add_argument("--out", default="kwcopt-acceptance", help="output directory")
    args = ap.parse_args(argv)
    cli_args = ["check", "--config", str(CONFIG), "--out", args.out]
    if args.only:
        cli_args += ["--only", args.only]
    return main(cli_args)


if __name__ == "__main__":
    sys.exit(run())
