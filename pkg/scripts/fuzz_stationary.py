"""Fuzz the index equality on random stationary spacetimes.

Thin wrapper over ``submaslov fuzz``; failing cases leave ``*.repro.ini`` files in
the output directory that ``submaslov run`` replays.
"""

import argparse
import sys
from pathlib import Path

from submaslov import cli


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="random stationary scenarios")
    ap.add_argument("n", type=int, nargs="?", default=50, help="number of cases (default 50)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--out", type=Path, default=Path("fuzz_out"))
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    return cli.fuzz(args.n, args.seed, args.out, steps=args.steps)


if __name__ == "__main__":
    sys.exit(main())
