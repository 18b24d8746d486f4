"""Run the example configurations shipped in scripts/configs.

Usage: python3 scripts/run_examples.py [NAME ...] [--out DIR]

Known names: reference (solve-ocp), gradcheck, eps-sweep, stationary
(solve-state), bump2d (solve-state).
"""

import argparse
import sys
from pathlib import Path

from kwcopt.cli import main

CONFIGS = Path(__file__).resolve().parent / "configs"
EXAMPLES = {
    "stationary": ("solve-state", "stationary.json"),
    "bump2d": ("solve-state", "bump2d.json"),
    "reference": ("solve-ocp", "reference.json"),
    "gradcheck": ("gradcheck", "gradcheck.json"),
    "eps-sweep": ("eps-sweep", "reference.json"),
}


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=list(EXAMPLES), help="examples to run (default: all)")
    ap.add_argument("--out", default="kwcopt-examples", help="parent output directory")
    args = ap.parse_args(argv)
    unknown = [n for n in args.names if n not in EXAMPLES]
    if unknown:
        ap.error(f"unknown examples: {', '.join(unknown)}")
    worst = 0
    for name in args.names:
        sub, cfg = EXAMPLES[name]
        code = main([sub, "--config", str(CONFIGS / cfg), "--out", str(Path(args.out) / name)])
        print(f"{name}: {sub} exit {code}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(run())
