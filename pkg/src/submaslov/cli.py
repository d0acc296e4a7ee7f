"""Command-line front end.

Subcommands::

    submaslov run <config> [--out DIR]     verify one scenario, write CSV/summary/JSON
    submaslov check <config>               validate a configuration only
    submaslov list-scenarios               built-in scenarios
    submaslov fuzz <n> --seed <s>          random stationary scenarios

Exit status: 0 all checks pass, 1 a check failed, 2 configuration or usage
error, 3 numerical failure.  Tolerances can be overridden with
``SUBMASLOV_<KNOB>`` environment variables (e.g. ``SUBMASLOV_SYMPL_TOL=1e-9``).
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import RunConfig, build_scenario, dump_config, parse_config
from .errors import (
    NUMERICAL_ERRORS,
    ConfigError,
    IncompatibleSeed,
    InvalidArgument,
    InvalidBoundaryData,
    InvalidKKData,
    InvalidStationaryData,
    SubmaslovError,
)
from .scenarios import SCENARIOS, ScenarioResult, get_scenario, random_stationary_scenario, verify_main_theorem
from .tolerances import Tolerances

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
CSV_COLUMNS = ("t_focal", "kernel_dim", "contribution_num", "contribution_den", "level", "flags")
USAGE_ERRORS = (ConfigError, InvalidStationaryData, InvalidKKData, InvalidBoundaryData,
                IncompatibleSeed, InvalidArgument)
# checks that decide a fuzz case: equality of the two indices
FUZZ_CHECKS = ("index_equality", "index_equality_closed")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, USAGE_ERRORS):
        return EXIT_USAGE
    if isinstance(exc, NUMERICAL_ERRORS):
        return EXIT_NUMERICAL
    if isinstance(exc, SubmaslovError):
        return EXIT_NUMERICAL
    raise exc


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def csv_report(result: ScenarioResult) -> str:
    """Focal instants of both levels; rows ordered by level (total, base) then t."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for report in (result.report_total, result.report_base):
        if report is None:
            continue
        for inst in sorted(report.instants, key=lambda i: i.t):
            c = Fraction(inst.contribution)
            buf.write(",".join([_fmt(inst.t), str(inst.kernel_dim), str(c.numerator),
                                str(c.denominator), report.level, ";".join(inst.flags)]) + "\n")
    return buf.getvalue()


def summary_text(result: ScenarioResult, cfg: RunConfig | None = None) -> str:
    lines = [f"scenario: {result.name}"]
    if result.report_total is not None:
        lines.append(f"interval: [{_fmt(result.report_total.interval[0])}, {_fmt(result.report_total.interval[1])}]")
        lines.append(f"convention: {result.report_total.convention}")
    lines.append(f"maslov index (total, gamma): {result.index_total}")
    lines.append(f"maslov index (base, x):      {result.index_base}")
    for report in (result.report_total, result.report_base):
        if report is None:
            continue
        lines.append(f"{report.level} focal instants: {len(report.instants)}")
        for inst in report.instants:
            flags = f"  [{', '.join(inst.flags)}]" if inst.flags else ""
            lines.append(f"  t = {_fmt(inst.t)}  kernel {inst.kernel_dim}  contribution {inst.contribution}{flags}")
    lines.append("residuals:")
    for key in sorted(result.residuals):
        lines.append(f"  {key}: {float(result.residuals[key]):.3e}")
    lines.append("checks:")
    for key, ok in result.checks.items():
        lines.append(f"  {key}: {'pass' if ok else 'FAIL'}")
    for note in result.notes:
        lines.append(f"note: {note}")
    lines.append(f"status: {'PASS' if result.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _paths(cfg: RunConfig, name: str, out: Path) -> dict:
    o = cfg.outputs
    return {
        "csv": out / o.get("csv", f"{name}.csv"),
        "summary": out / o.get("summary", f"{name}.summary.txt"),
        "json": out / o.get("json", f"{name}.json"),
        "repro": out / o.get("repro_dir", ".") / f"{name}.repro.ini",
    }


def run(cfg: RunConfig, out: Path, stream=sys.stdout) -> int:
    """Verify the configured scenario and write the artifacts; returns the exit status."""
    scenario = build_scenario(cfg)
    paths = _paths(cfg, scenario.name, out)
    result = verify_main_theorem(scenario, cfg.tolerances, frames=cfg.frames, seed=cfg.seed,
                                 counts=cfg.counts, convention=cfg.convention)
    write_atomic(paths["csv"], csv_report(result))
    write_atomic(paths["summary"], summary_text(result, cfg))
    write_atomic(paths["json"], json.dumps(_jsonable(result.to_dict()), indent=2, sort_keys=True) + "\n")
    stream.write(summary_text(result, cfg))
    if result.passed:
        return EXIT_OK
    write_atomic(paths["repro"], cfg.text if cfg.text else dump_config(scenario.inputs))
    stream.write(f"failed checks: {', '.join(result.failed_checks())}\n")
    stream.write(f"reproduction config: {paths['repro']}\n")
    return EXIT_CHECK


def fuzz(n: int, seed: int, out: Path, steps: int = 2000, tol: Tolerances | None = None,
         stream=sys.stdout) -> int:
    """Run ``n`` random stationary scenarios; failing cases dump reproduction configs."""
    tol = tol or Tolerances.from_env()
    rng = np.random.default_rng(seed)
    failures, lines = 0, []
    for k in range(n):
        sc = random_stationary_scenario(rng, steps=steps)
        name = f"fuzz_{seed}_{k:03d}"
        try:
            res = verify_main_theorem(sc, tol, frames=False, counts=False)
            ok = all(res.checks.get(c, False) for c in FUZZ_CHECKS)
            line = f"{name}: index total {res.index_total} base {res.index_base} {'pass' if ok else 'FAIL'}"
            extra = [c for c in res.failed_checks() if c not in FUZZ_CHECKS]
            if extra:
                line += f" (other failed checks: {', '.join(extra)})"
        except SubmaslovError as exc:
            ok, line = False, f"{name}: error {exc}"
        if not ok:
            failures += 1
            repro = out / f"{name}.repro.ini"
            write_atomic(repro, dump_config(sc.inputs))
            line += f"; reproduction config: {repro}"
        lines.append(line)
        stream.write(line + "\n")
        stream.flush()
    lines.append(f"{n - failures}/{n} passed")
    stream.write(lines[-1] + "\n")
    write_atomic(out / f"fuzz_{seed}.summary.txt", "\n".join(lines) + "\n")
    return EXIT_OK if failures == 0 else EXIT_CHECK


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="submaslov", description="Maslov index checks for semi-Riemannian submersions")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="verify the scenario described by a configuration file")
    p.add_argument("config")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p = sub.add_parser("check", help="validate a configuration file without running it")
    p.add_argument("config")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    p = sub.add_parser("fuzz", help="random stationary scenarios")
    p.add_argument("n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--out", default=".", help="directory for summaries and reproduction configs")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "list-scenarios":
            for name in sorted(SCENARIOS):
                print(f"{name:18s} {get_scenario(name).description}")
            return EXIT_OK
        if args.command == "check":
            cfg = parse_config(_read(args.config))
            print(f"{args.config}: ok (scenario {cfg.scenario})")
            return EXIT_OK
        if args.command == "run":
            cfg = parse_config(_read(args.config))
            return run(cfg, Path(args.out))
        if args.command == "fuzz":
            if args.n < 1 or args.steps < 8 or args.steps % 2:
                print("error: n must be positive and steps an even number >= 8", file=sys.stderr)
                return EXIT_USAGE
            try:
                tol = Tolerances.from_env()
            except ValueError as exc:
                raise ConfigError(f"bad tolerance override in the environment: {exc}") from None
            return fuzz(args.n, args.seed, Path(args.out), steps=args.steps, tol=tol)
    except SubmaslovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
