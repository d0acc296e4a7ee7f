"""Verify every built-in scenario and print a one-line summary per scenario.

Usage: python3 scripts/run_scenarios.py [--steps N] [--only NAME ...] [--json PATH]
"""

import argparse
import json
import sys
from pathlib import Path

from submaslov.scenarios import SCENARIOS, get_scenario, verify_main_theorem


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000, help="grid size per geodesic (default 2000)")
    ap.add_argument("--only", nargs="*", choices=sorted(SCENARIOS), help="subset of scenarios")
    ap.add_argument("--no-frames", action="store_true", help="skip the trivialization invariance check")
    ap.add_argument("--json", type=Path, help="write all results to this file")
    args = ap.parse_args(argv)

    results, ok = {}, True
    for name in args.only or sorted(SCENARIOS):
        res = verify_main_theorem(get_scenario(name, steps=args.steps), frames=not args.no_frames, counts=True)
        ok &= res.passed
        status = "pass" if res.passed else "FAIL " + ",".join(res.failed_checks())
        print(f"{name:18s} i(gamma)={res.index_total} i(x)={res.index_base} "
              f"instants={len(res.report_total.instants)} {res.elapsed:6.1f}s  {status}")
        results[name] = res.to_dict()
    if args.json:
        args.json.write_text(json.dumps(results, indent=2, sort_keys=True, default=str) + "\n")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
