"""Run configuration files.

The format is INI (``configparser``): ``[section]`` headers followed by
``key = value`` lines; ``#`` and ``;`` start comment lines.  Recognised sections
and keys::

    [run]          scenario, steps, convention, frames, counts, seed
    [seed]         point, base_velocity, interval        (comma-separated numbers)
    [submanifold]  tangent, shape                          (rows separated by ';')
    [stationary]   dim, domain, beta, g0[i][j], delta[i]
    [custom]       dim, base_dim, index, base_index, domain, base_domain,
                   g[i][j], h[i][j], pi[i]
    [tolerances]   any field of Tolerances (rank_tol, sympl_tol, ...)
    [output]       csv, summary, json, repro_dir

``scenario`` is a built-in name (see ``submaslov list-scenarios``), ``stationary``
(data from the ``[stationary]`` section, coordinates ``x0 .. x{dim-1}`` on S and
``x{dim}`` for time) or ``custom`` (total coordinates ``x0 ..``, base coordinates
``y0 ..``, projection components ``pi[i]``).  Expressions use numbers, the
coordinate names, ``pi``, ``E``, ``+ - * / **`` and elementary functions.
A ``domain`` is ``x0: lo .. hi; x2: lo .. hi``.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import sympy as sp

from .errors import ConfigError, InvalidStationaryData, SubmaslovError
from .expr import parse_expression
from .geometry import MetricField
from .jacobi_maslov import CONVENTIONS
from .scenarios import SCENARIOS, BoxDomain, Scenario, get_scenario, stationary_from_strings
from .submersion import SubmanifoldData, SubmersionSpec
from .tolerances import DEFAULT, Tolerances

SECTIONS = {
    "run": {"scenario", "steps", "convention", "frames", "counts", "seed"},
    "seed": {"point", "base_velocity", "interval"},
    "submanifold": {"tangent", "shape"},
    "stationary": {"dim", "domain", "beta"},
    "custom": {"dim", "base_dim", "index", "base_index", "domain", "base_domain"},
    "tolerances": set(Tolerances.__dataclass_fields__),
    "output": {"csv", "summary", "json", "repro_dir"},
}
# indexed keys, e.g. g0[0][1]
PATTERNS = {
    "stationary": [re.compile(r"g0\[\d+\]\[\d+\]"), re.compile(r"delta\[\d+\]")],
    "custom": [re.compile(r"g\[\d+\]\[\d+\]"), re.compile(r"h\[\d+\]\[\d+\]"), re.compile(r"pi\[\d+\]")],
}


@dataclass
class RunConfig:
    scenario: str
    steps: int = 2000
    convention: str = "open"
    frames: bool = True
    counts: bool = True
    seed: int = 0
    point: Optional[np.ndarray] = None
    base_velocity: Optional[np.ndarray] = None
    interval: Optional[tuple] = None
    tangent: Optional[np.ndarray] = None
    shape: Optional[np.ndarray] = None
    stationary: dict = field(default_factory=dict)
    custom: dict = field(default_factory=dict)
    tolerances: Tolerances = DEFAULT
    outputs: dict = field(default_factory=dict)
    text: str = ""


def _line_of(text: str, section: str, key: str):
    """(line, column) of ``key`` inside ``[section]`` for error messages."""
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return no, line.index(key) + 1
    return None, None


def _err(text, section, key, msg):
    line, col = _line_of(text, section, key) if key else (None, None)
    return ConfigError(msg, key=f"{section}.{key}" if key else section, line=line, column=col)


def _numbers(text, section, key, raw, size=None):
    try:
        vals = np.array([float(x) for x in raw.split(",") if x.strip()], dtype=float)
    except ValueError:
        raise _err(text, section, key, f"expected comma-separated numbers, got {raw!r}") from None
    if size is not None and vals.size != size:
        raise _err(text, section, key, f"expected {size} numbers, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise _err(text, section, key, "numbers must be finite")
    return vals


def _matrix(text, section, key, raw):
    rows = [r for r in raw.split(";") if r.strip()]
    mats = [_numbers(text, section, key, r) for r in rows]
    if len({m.size for m in mats}) > 1:
        raise _err(text, section, key, "rows have different lengths")
    return np.array(mats, dtype=float)


def _bool(text, section, key, raw):
    low = raw.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise _err(text, section, key, f"expected yes/no, got {raw!r}")


def _int(text, section, key, raw, lo=None):
    try:
        val = int(raw)
    except ValueError:
        raise _err(text, section, key, f"expected an integer, got {raw!r}") from None
    if lo is not None and val < lo:
        raise _err(text, section, key, f"must be >= {lo}")
    return val


def parse_domain(raw: str, dim: int, prefix: str = "x") -> BoxDomain:
    """``x0: 0.1 .. 3.0; x2: -1 .. 1`` -> :class:`BoxDomain`."""
    bounds = [None] * dim
    for part in raw.split(";"):
        if not part.strip():
            continue
        m = re.fullmatch(rf"\s*{prefix}(\d+)\s*:\s*(\S+)\s*\.\.\s*(\S+)\s*", part)
        if not m:
            raise ValueError(f"cannot parse domain clause {part.strip()!r}")
        i = int(m.group(1))
        if i >= dim:
            raise ValueError(f"coordinate {prefix}{i} out of range")
        lo, hi = float(m.group(2)), float(m.group(3))
        if not lo < hi:
            raise ValueError(f"empty range for {prefix}{i}")
        bounds[i] = (lo, hi)
    return BoxDomain(tuple(bounds))


def parse_config(text: str, environ=None) -> RunConfig:
    """Parse and validate a configuration document.

    Tolerances: defaults, then ``[tolerances]``, then ``SUBMASLOV_<KNOB>`` environment
    variables.  Scenario data are built and evaluated at the seed point, so any
    error in the formulas surfaces here.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("document must start with a [section] header", line=exc.lineno, column=1) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(str(exc).split(":")[0], line=getattr(exc, "lineno", None), column=1) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line=line, column=1) from None
    for section in parser.sections():
        if section not in SECTIONS:
            line = None
            for no, ln in enumerate(text.splitlines(), start=1):
                if ln.strip() == f"[{section}]":
                    line = no
            raise ConfigError(f"unknown section [{section}]", key=section, line=line, column=1)
        for key in parser[section]:
            if key in SECTIONS[section]:
                continue
            if any(p.fullmatch(key) for p in PATTERNS.get(section, [])):
                continue
            raise _err(text, section, key, f"unknown key {key!r}")
    if not parser.has_section("run") or "scenario" not in parser["run"]:
        raise ConfigError("missing run.scenario", key="run.scenario")
    run = parser["run"]
    cfg = RunConfig(scenario=run["scenario"].strip(), text=text)
    known = set(SCENARIOS) | {"stationary", "custom"}
    if cfg.scenario not in known:
        raise _err(text, "run", "scenario",
                   f"unknown scenario {cfg.scenario!r}; available: {', '.join(sorted(known))}")
    if "steps" in run:
        cfg.steps = _int(text, "run", "steps", run["steps"], lo=8)
        if cfg.steps % 2:
            raise _err(text, "run", "steps", "steps must be even (Simpson quadrature)")
    if "convention" in run:
        cfg.convention = run["convention"].strip()
        if cfg.convention not in CONVENTIONS:
            raise _err(text, "run", "convention", f"convention must be one of {CONVENTIONS}")
    if "frames" in run:
        cfg.frames = _bool(text, "run", "frames", run["frames"])
    if "counts" in run:
        cfg.counts = _bool(text, "run", "counts", run["counts"])
    if "seed" in run:
        cfg.seed = _int(text, "run", "seed", run["seed"], lo=0)
    if parser.has_section("seed"):
        sd = parser["seed"]
        if "point" in sd:
            cfg.point = _numbers(text, "seed", "point", sd["point"])
        if "base_velocity" in sd:
            cfg.base_velocity = _numbers(text, "seed", "base_velocity", sd["base_velocity"])
        if "interval" in sd:
            iv = _numbers(text, "seed", "interval", sd["interval"], size=2)
            if not iv[0] < iv[1]:
                raise _err(text, "seed", "interval", "interval must satisfy a < b")
            cfg.interval = (float(iv[0]), float(iv[1]))
    if parser.has_section("submanifold"):
        sm = parser["submanifold"]
        if "tangent" in sm:
            cfg.tangent = _matrix(text, "submanifold", "tangent", sm["tangent"])
        if "shape" in sm:
            cfg.shape = _matrix(text, "submanifold", "shape", sm["shape"])
    for name in ("stationary", "custom"):
        if parser.has_section(name):
            setattr(cfg, name, dict(parser[name]))
    tol = DEFAULT
    if parser.has_section("tolerances"):
        changes = {}
        for key, raw in parser["tolerances"].items():
            try:
                changes[key] = float(raw)
            except ValueError:
                raise _err(text, "tolerances", key, f"expected a number, got {raw!r}") from None
            if not changes[key] > 0:
                raise _err(text, "tolerances", key, "tolerances must be positive")
        tol = tol.replace(**changes)
    try:
        cfg.tolerances = Tolerances.from_env(tol, environ)
    except ValueError as exc:
        raise ConfigError(f"bad tolerance override in the environment: {exc}", key="environment") from None
    if parser.has_section("output"):
        cfg.outputs = dict(parser["output"])
    try:
        build_scenario(cfg)   # validation: names resolve, dimensions agree, formulas evaluate
    except ConfigError as exc:
        if exc.line is None and exc.key and "." in exc.key:
            section, key = exc.key.split(".", 1)
            exc.line, col = _line_of(text, section, key)
            if exc.line is not None and exc.column:
                # expression columns are relative to the value; shift to the file line
                src = text.splitlines()[exc.line - 1]
                eq = re.search(r"[=:]\s*", src[col - 1:])
                exc.column += col - 1 + eq.end()
            else:
                exc.column = col
            exc.context.update(line=exc.line, column=exc.column)
        raise
    return cfg


def _beta_samples(spec, point, per_axis: int = 7) -> np.ndarray:
    """Seed point plus a grid over the bounded part of the base domain."""
    m = spec.m
    dom = getattr(spec.base, "domain", None)
    bounds = getattr(dom, "bounds", None) or (None,) * m
    axes = []
    for i in range(m):
        b = bounds[i] if i < len(bounds) else None
        if b is None:
            axes.append(point[i] + np.linspace(-1.0, 1.0, per_axis))
        else:
            axes.append(np.linspace(b[0], b[1], per_axis + 2)[1:-1])
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    return np.vstack([point[:m], grid])


def _custom_spec(cfg: RunConfig) -> SubmersionSpec:
    text, data = cfg.text, cfg.custom
    for key in ("dim", "base_dim"):
        if key not in data:
            raise _err(text, "custom", key, f"missing custom.{key}")
    n = _int(text, "custom", "dim", data["dim"], lo=2)
    m = _int(text, "custom", "base_dim", data["base_dim"], lo=1)
    if m >= n:
        raise _err(text, "custom", "base_dim", "base dimension must be smaller than dim")
    idx = _int(text, "custom", "index", data.get("index", "0"), lo=0)
    bidx = _int(text, "custom", "base_index", data.get("base_index", "0"), lo=0)
    xs = sp.symbols(f"x0:{n}")
    ys = sp.symbols(f"y0:{m}")

    def matrix(letter, size, syms):
        names = {str(s): s for s in syms}
        mat = sp.zeros(size, size)
        for key, raw in data.items():
            mm = re.fullmatch(rf"{letter}\[(\d+)\]\[(\d+)\]", key)
            if not mm:
                continue
            i, j = int(mm.group(1)), int(mm.group(2))
            if i >= size or j >= size:
                raise _err(text, "custom", key, f"index out of range for a {size}x{size} metric")
            val = parse_expression(raw, names, key=f"custom.{key}")
            other = f"{letter}[{j}][{i}]"
            if i != j and other in data and sp.simplify(val - parse_expression(data[other], names)) != 0:
                raise _err(text, "custom", key, f"{key} and {other} differ")
            mat[i, j] = mat[j, i] = val
        return mat

    gm, hm = matrix("g", n, xs), matrix("h", m, ys)
    names = {str(s): s for s in xs}
    proj = []
    for i in range(m):
        key = f"pi[{i}]"
        if key not in data:
            raise _err(text, "custom", key, f"missing custom.{key}")
        proj.append(parse_expression(data[key], names, key=f"custom.{key}"))
    for key in data:
        mm = re.fullmatch(r"pi\[(\d+)\]", key)
        if mm and int(mm.group(1)) >= m:
            raise _err(text, "custom", key, "projection component out of range")
    try:
        dom = parse_domain(data["domain"], n, "x") if "domain" in data else None
        bdom = parse_domain(data["base_domain"], m, "y") if "base_domain" in data else None
    except ValueError as exc:
        raise _err(text, "custom", "domain", str(exc)) from None
    total = MetricField.from_sympy(gm, xs, idx, domain=dom, name="custom")
    base = MetricField.from_sympy(hm, ys, bidx, domain=bdom, name="custom-base")
    return SubmersionSpec.from_sympy(total, base, proj, name="custom")


def _stationary_spec(cfg: RunConfig) -> SubmersionSpec:
    text, data = cfg.text, cfg.stationary
    if "dim" not in data:
        raise _err(text, "stationary", "dim", "missing stationary.dim")
    dim = _int(text, "stationary", "dim", data["dim"], lo=1)
    try:
        dom = parse_domain(data["domain"], dim, "x") if "domain" in data else None
    except ValueError as exc:
        raise _err(text, "stationary", "domain", str(exc)) from None
    exprs = {k: v for k, v in data.items() if k not in ("dim", "domain")}
    try:
        return stationary_from_strings(dim, exprs, domain=dom)
    except InvalidStationaryData as exc:
        key = exc.context.get("key", "stationary.beta").split(".", 1)[1]
        line, col = _line_of(text, "stationary", key)
        exc.context.update(line=line, column=col)
        raise


def build_scenario(cfg: RunConfig) -> Scenario:
    """Scenario described by ``cfg``; raises ConfigError / data errors on inconsistencies."""
    text = cfg.text
    if cfg.scenario in SCENARIOS:
        sc = get_scenario(cfg.scenario, steps=cfg.steps)
        spec = sc.spec
        point = sc.point if cfg.point is None else cfg.point
        u = sc.base_velocity if cfg.base_velocity is None else cfg.base_velocity
        interval = sc.interval if cfg.interval is None else cfg.interval
        overridden = cfg.point is not None or cfg.base_velocity is not None or cfg.interval is not None
        oracle = None if overridden else sc.base_instants
        name, desc = sc.name, sc.description
    else:
        spec = _stationary_spec(cfg) if cfg.scenario == "stationary" else _custom_spec(cfg)
        for key, val in (("point", cfg.point), ("base_velocity", cfg.base_velocity),
                         ("interval", cfg.interval)):
            if val is None:
                raise _err(text, "seed", key, f"seed.{key} is required for scenario {cfg.scenario!r}")
        point, u, interval = cfg.point, cfg.base_velocity, cfg.interval
        oracle, name, desc = None, cfg.scenario, "from configuration"
    if point.size != spec.n:
        raise _err(text, "seed", "point", f"point has {point.size} coordinates, total space has {spec.n}")
    if u.size != spec.m:
        raise _err(text, "seed", "base_velocity", f"base_velocity has {u.size} components, base has {spec.m}")
    if not spec.total.inside(point):
        raise _err(text, "seed", "point", "seed point lies outside the coordinate domain")
    try:
        g = spec.total.eval(point)
        h = spec.base.eval(spec.project(point))
    except Exception as exc:  # noqa: BLE001 - formula evaluation failures
        raise _err(text, cfg.scenario if cfg.scenario in ("custom", "stationary") else "seed", None,
                   f"formulas cannot be evaluated at the seed point: {exc}") from None
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise _err(text, "seed", "point", "metric is not finite at the seed point")
    if spec.symbolic and "beta" in spec.symbolic:
        from .scenarios import check_stationary_beta
        try:
            check_stationary_beta(spec, _beta_samples(spec, np.asarray(point, float)))
        except InvalidStationaryData as exc:
            line, col = _line_of(text, "stationary", "beta")
            exc.context.update(key="stationary.beta", line=line, column=col)
            raise
    try:
        spec.check_point(point)
    except SubmaslovError as exc:
        raise _err(text, "seed", "point", f"not a semi-Riemannian submersion at the seed point: {exc}") from None
    sub = None
    if cfg.tangent is not None:
        t = cfg.tangent.T   # rows in the file are tangent vectors
        if t.shape[0] != spec.m:
            raise _err(text, "submanifold", "tangent", f"tangent vectors need {spec.m} components")
        k = t.shape[1]
        shape = np.zeros((k, k)) if cfg.shape is None else cfg.shape
        if shape.shape != (k, k):
            raise _err(text, "submanifold", "shape", f"shape must be {k}x{k}")
        if np.max(np.abs(shape - shape.T)) > 1e-12:
            raise _err(text, "submanifold", "shape", "shape must be symmetric")
        sub = SubmanifoldData(spec.project(point), t, u, shape)
    elif cfg.shape is not None:
        raise _err(text, "submanifold", "shape", "shape given without tangent vectors")
    inputs = config_inputs(cfg)
    return Scenario(name, spec, np.asarray(point, float), np.asarray(u, float), tuple(interval),
                    submanifold=sub, steps=cfg.steps, base_instants=oracle, description=desc,
                    inputs=inputs)


def config_inputs(cfg: RunConfig) -> dict:
    """Section -> key -> string view of the configuration (reproduction data)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(cfg.text)
    return {s: dict(parser[s]) for s in parser.sections()}


def dump_config(sections: dict) -> str:
    """Serialize ``{section: {key: value}}`` deterministically."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, items in sections.items():
        parser[section] = {k: str(v) for k, v in items.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
