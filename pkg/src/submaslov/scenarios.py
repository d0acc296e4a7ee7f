"""Built-in submersions and end-to-end checks of the index correspondence.

Each :class:`Scenario` bundles a submersion, a horizontal geodesic seed and a
submanifold of the base through the initial point.  :func:`verify_main_theorem`
integrates the geodesic upstairs and its projection downstairs independently,
computes both Maslov indices and focal reports, and records a pass/fail
verdict per check in a :class:`ScenarioResult`.

Parameters (radii, intervals, seeds) are chosen so that closed-form Jacobi
fields exist for the base whenever possible: the equator of ``S^2(1/2)`` has
conjugate instants at ``k pi/2`` and the equator of ``S^2(1)`` at ``k pi``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
import sympy as sp

from .errors import IncompatibleSeed, InvalidKKData, InvalidStationaryData, PatchExit
from .expr import format_number, parse_expression
from .geometry import (
    FieldAlongCurve,
    GeodesicPath,
    MetricField,
    christoffel,
    integrate_geodesic,
    jacobi_field_direct,
    orthonormal_basis,
    parallel_transport_frame,
    random_smooth_frame,
    rotating_frame,
)
from .jacobi_maslov import (
    BoundaryData,
    FocalReport,
    causal_character,
    causal_index,
    conjugate_counts,
    detect_focal_instants,
    jacobi_system,
    q_maslov_index,
    verify_index_identity,
)
from .submersion import (
    SubmanifoldData,
    SubmersionSpec,
    derived_field,
    horizontal_lift,
    horizontal_lift_curve,
    lift_field_D_zero,
    lift_geodesic_check,
    lifted_boundary_shape,
    project_field,
    projectors,
    second_fundamental_form_distribution,
    tensor_A,
    tensor_T,
)
from .symplectic import SymmetricForm
from .tolerances import DEFAULT, Tolerances

INSTANT_TOL = 1e-6


@dataclass(frozen=True)
class BoxDomain:
    """Coordinate box; ``bounds[i]`` is ``(lo, hi)`` or ``None`` for an unbounded axis."""

    bounds: tuple

    def __call__(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        for xi, b in zip(x, self.bounds):
            if b is not None and not b[0] < xi < b[1]:
                return False
        return True

    def lifted(self, extra: int) -> "BoxDomain":
        """Same box on the base coordinates, unbounded on ``extra`` trailing ones."""
        return BoxDomain(tuple(self.bounds) + (None,) * extra)


# ---------------------------------------------------------------------------
# builders


def flat_product(n: int = 3, m: int = 2) -> SubmersionSpec:
    """Euclidean ``R^n -> R^m`` forgetting the last ``n - m`` coordinates."""
    xs = sp.symbols(f"x0:{n}")
    total = MetricField.from_sympy(sp.eye(n), xs, 0, name="flat")
    base = MetricField.from_sympy(sp.eye(m), xs[:m], 0, name="flat-base")
    return SubmersionSpec.from_sympy(total, base, list(xs[:m]), name="flat")


def hopf_fibration() -> SubmersionSpec:
    """``S^3(1) -> S^2(1/2)`` in Hopf coordinates.

    Total coordinates ``(eta, xi1, xi2)`` with ``g = d eta^2 + sin^2 eta d xi1^2 +
    cos^2 eta d xi2^2``; base ``(theta, phi)`` with ``h = (d theta^2 + sin^2 theta d phi^2)/4``;
    ``pi = (2 eta, xi1 - xi2)``.  Fibers are the great circles ``xi1 + xi2`` varying.
    """
    eta, x1, x2 = sp.symbols("eta xi1 xi2")
    th, ph = sp.symbols("theta phi")
    total = MetricField.from_sympy(sp.diag(1, sp.sin(eta) ** 2, sp.cos(eta) ** 2), [eta, x1, x2], 0,
                                   domain=BoxDomain(((0.05, np.pi / 2 - 0.05), None, None)), name="S3")
    base = MetricField.from_sympy(sp.diag(sp.Rational(1, 4), sp.sin(th) ** 2 / 4), [th, ph], 0,
                                  domain=BoxDomain(((0.1, np.pi - 0.1), None)), name="S2(1/2)")
    return SubmersionSpec.from_sympy(total, base, [2 * eta, x1 - x2], name="hopf")


def stationary_spacetime(g0: MetricField, beta, delta, time_name: str = "t") -> SubmersionSpec:
    """Standard stationary spacetime ``S x R`` over ``(S, g0)``.

    ``g((xi, tau), (xi, tau)) = g0(xi, xi) + 2 tau g0(delta, xi) - beta tau^2``; the base
    metric of the projection to ``S`` is ``g0 + (1/beta) g0(delta, .)^2``.  ``beta`` and the
    components of ``delta`` are sympy expressions (or numbers) in the coordinates of ``g0``.
    """
    if g0.symbolic is None:
        raise InvalidStationaryData("g0 must be built from symbolic expressions")
    if g0.index != 0:
        raise InvalidStationaryData("g0 must be Riemannian")
    mat, coords = g0.symbolic
    m = len(coords)
    beta = sp.sympify(beta)
    delta = sp.Matrix([sp.sympify(d) for d in delta])
    if delta.shape != (m, 1):
        raise InvalidStationaryData(f"delta needs {m} components")
    if beta.is_number and float(beta) <= 0:
        raise InvalidStationaryData(f"beta must be positive, got {float(beta)}")
    if not beta.free_symbols <= set(coords) or not delta.free_symbols <= set(coords):
        raise InvalidStationaryData("beta and delta may only depend on the coordinates of S")
    tau = sp.Symbol(time_name)
    gd = mat * delta
    total_mat = sp.zeros(m + 1, m + 1)
    total_mat[:m, :m] = mat
    total_mat[:m, m] = gd
    total_mat[m, :m] = gd.T
    total_mat[m, m] = -beta
    base_mat = mat + (gd * gd.T) / beta
    dom = g0.domain
    tdom = dom.lifted(1) if isinstance(dom, BoxDomain) else (
        None if dom is None else (lambda x: dom(np.asarray(x)[:m])))
    total = MetricField.from_sympy(total_mat, list(coords) + [tau], 1, domain=tdom,
                                   name="stationary")
    base = MetricField.from_sympy(base_mat, coords, 0, domain=dom, name="stationary-base")
    spec = SubmersionSpec.from_sympy(total, base, list(coords), name="stationary",
                                     extra={"beta": beta, "delta": list(delta)})
    return spec


def check_stationary_beta(spec: SubmersionSpec, points) -> None:
    """Raise :class:`InvalidStationaryData` unless ``beta > 0`` at every point of S."""
    beta = spec.symbolic["beta"]
    coords = spec.base.symbolic[1]
    f = sp.lambdify(coords, beta, modules="numpy")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.broadcast_to(np.asarray(f(*pts[:, : len(coords)].T), dtype=float), (pts.shape[0],))
    if np.any(vals <= 0):
        k = int(np.argmin(vals))
        raise InvalidStationaryData(f"beta = {vals[k]:.4g} <= 0 at {pts[k].tolist()}")


def kaluza_klein_toy(base: MetricField, fiber_scale: float, tilt, fiber_name: str = "y") -> SubmersionSpec:
    """``g = h + s^2 (dy + theta)^2`` over a Lorentzian base ``(B, h)``.

    ``tilt`` lists the components of the connection one-form ``theta`` in the base
    coordinates; the fibers are lines (or circles) in ``y`` with length scale ``s``.
    """
    if base.symbolic is None:
        raise InvalidKKData("base metric must be symbolic")
    if base.index != 1:
        raise InvalidKKData(f"base must be Lorentzian (index 1), got index {base.index}")
    s = float(fiber_scale)
    if not s > 0:
        raise InvalidKKData("fiber scale must be positive")
    mat, coords = base.symbolic
    m = len(coords)
    th = sp.Matrix([sp.sympify(c) for c in tilt])
    if th.shape != (m, 1):
        raise InvalidKKData(f"tilt needs {m} components")
    taken = {str(c) for c in coords}
    while fiber_name in taken:
        fiber_name += "_"
    y = sp.Symbol(fiber_name)
    s2 = sp.Float(s) ** 2
    total_mat = sp.zeros(m + 1, m + 1)
    total_mat[:m, :m] = mat + s2 * th * th.T
    total_mat[:m, m] = s2 * th
    total_mat[m, :m] = s2 * th.T
    total_mat[m, m] = s2
    dom = base.domain
    tdom = dom.lifted(1) if isinstance(dom, BoxDomain) else None
    total = MetricField.from_sympy(total_mat, list(coords) + [y], 1, domain=tdom, name="kk")
    return SubmersionSpec.from_sympy(total, base, list(coords), name="kk",
                                     extra={"fiber_scale": s, "tilt": list(th)})


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: SubmersionSpec
    point: np.ndarray          # gamma(a) in the total space
    base_velocity: np.ndarray  # x'(a); gamma'(a) is its horizontal lift
    interval: tuple
    submanifold: Optional[SubmanifoldData] = None   # P through x(a); a point by default
    steps: int = 2000
    base_instants: Optional[tuple] = None           # closed-form conjugate instants of x
    description: str = ""
    inputs: dict = field(default_factory=dict, compare=False)

    @property
    def velocity(self) -> np.ndarray:
        return horizontal_lift(self.spec, self.point, self.base_velocity)

    @property
    def base_point(self) -> np.ndarray:
        return self.spec.project(self.point)

    def pdata(self) -> SubmanifoldData:
        if self.submanifold is not None:
            return self.submanifold
        return SubmanifoldData.point_submanifold(self.base_point, self.base_velocity)


def _seed_inputs(name, point, u, interval, steps):
    return {
        "run": {"scenario": name, "steps": str(steps)},
        "seed": {
            "point": ", ".join(format_number(x) for x in point),
            "base_velocity": ", ".join(format_number(x) for x in u),
            "interval": ", ".join(format_number(x) for x in interval),
        },
    }


def flat_scenario(steps: int = 2000) -> Scenario:
    spec = flat_product()
    p, u, iv = np.zeros(3), np.array([1.0, 0.5]), (0.0, 3.0)
    return Scenario("flat", spec, p, u, iv, steps=steps, base_instants=(),
                    description="Euclidean R^3 -> R^2, straight line; no conjugate points",
                    inputs=_seed_inputs("flat", p, u, iv, steps))


def hopf_scenario(steps: int = 2000, interval=(0.0, np.pi + 0.2)) -> Scenario:
    spec = hopf_fibration()
    p = np.array([np.pi / 4, 0.0, 0.0])
    u = np.array([0.0, 2.0])   # unit speed on S^2(1/2) along the equator
    iv = tuple(float(x) for x in interval)
    oracle = tuple(k * np.pi / 2 for k in range(1, 8) if iv[0] < k * np.pi / 2 <= iv[1])
    return Scenario("hopf", spec, p, u, iv, steps=steps, base_instants=oracle,
                    description="Hopf fibration S^3(1) -> S^2(1/2), horizontal great circle",
                    inputs=_seed_inputs("hopf", p, u, iv, steps))


def _round_sphere(name="S2"):
    th, ph = sp.symbols("theta phi")
    return MetricField.from_sympy(sp.diag(1, sp.sin(th) ** 2), [th, ph], 0,
                                  domain=BoxDomain(((0.1, np.pi - 0.1), None)), name=name), th, ph


def stationary_s2_scenario(steps: int = 2000) -> Scenario:
    """Static spacetime over the round sphere with a non-constant lapse ``beta``."""
    g0, th, ph = _round_sphere()
    spec = stationary_spacetime(g0, 1 + sp.Rational(3, 10) * sp.cos(ph), [0, 0])
    p = np.array([np.pi / 2, 0.0, 0.0])
    u = np.array([0.0, 1.0])
    iv = (0.0, 2 * np.pi + 0.3)
    return Scenario("stationary_s2", spec, p, u, iv, steps=steps, base_instants=(np.pi, 2 * np.pi),
                    description="S^2(1) x R with beta = 1 + 0.3 cos(phi), delta = 0",
                    inputs=_seed_inputs("stationary_s2", p, u, iv, steps))


def stationary_tilted_scenario(steps: int = 2000) -> Scenario:
    """Stationary spacetime over the round sphere with a nonzero shift ``delta``."""
    g0, th, ph = _round_sphere()
    beta = 1 + sp.Rational(1, 5) * sp.sin(th) * sp.cos(ph)
    delta = [sp.Rational(3, 20) * sp.cos(ph), sp.Rational(3, 10)]
    spec = stationary_spacetime(g0, beta, delta)
    p = np.array([np.pi / 2, 0.0, 0.0])
    u = np.array([0.3, 0.9])
    iv = (0.0, 2 * np.pi)
    return Scenario("stationary_tilted", spec, p, u, iv, steps=steps,
                    description="S^2(1) x R with delta = (0.15 cos phi, 0.3), beta = 1 + 0.2 sin theta cos phi",
                    inputs=_seed_inputs("stationary_tilted", p, u, iv, steps))


def kk_scenario(steps: int = 2000, fiber_scale: float = 0.8, eps: float = 0.5) -> Scenario:
    """Kaluza-Klein metric over ``R x S^2`` with a timelike horizontal geodesic."""
    tau, th, ph = sp.symbols("tau theta phi")
    base = MetricField.from_sympy(sp.diag(-1, 1, sp.sin(th) ** 2), [tau, th, ph], 1,
                                  domain=BoxDomain((None, (0.1, np.pi - 0.1), None)), name="RxS2")
    spec = kaluza_klein_toy(base, fiber_scale, [0, 0, sp.Float(eps) * sp.cos(th)])
    p = np.array([0.0, np.pi / 2, 0.0, 0.0])
    u = np.array([1.25, 0.0, 0.75])
    iv = (0.0, 9.0)
    oracle = tuple(k * np.pi / 0.75 for k in (1, 2))
    return Scenario("kk", spec, p, u, iv, steps=steps, base_instants=oracle,
                    description="Kaluza-Klein toy over R x S^2, eps = 0.5, timelike geodesic",
                    inputs=_seed_inputs("kk", p, u, iv, steps))


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "flat": flat_scenario,
    "hopf": hopf_scenario,
    "kk": kk_scenario,
    "stationary_s2": stationary_s2_scenario,
    "stationary_tilted": stationary_tilted_scenario,
}


def get_scenario(name: str, **kwargs) -> Scenario:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}")
    return SCENARIOS[name](**kwargs)


# ---------------------------------------------------------------------------
# random stationary data


def _rnd(rng, lo, hi):
    return round(float(rng.uniform(lo, hi)), 6)


def random_stationary_scenario(rng: np.random.Generator, steps: int = 2000) -> Scenario:
    """Stationary spacetime over a perturbed round sphere with random lapse and shift.

    The perturbation of ``g0`` in an orthonormal coframe is at most 0.1, ``beta`` stays
    in ``[0.5, 2]`` and ``|delta|_{g0} <= 0.5`` (up to the perturbation).  All data are
    expression strings, so the scenario can be written out as a config.
    """
    def wave(amp):
        a = _rnd(rng, -amp, amp)
        k1, k2 = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        c = _rnd(rng, 0, 6.283185)
        return f"{a}*sin({k1}*x0 + {k2}*x1 + {c})"

    g00 = f"1 + {wave(0.05)}"
    g01 = f"({wave(0.05)})*sin(x0)"
    g11 = f"sin(x0)**2*(1 + {wave(0.05)})"
    b0 = _rnd(rng, 0.9, 1.6)
    beta = f"{b0} + {wave(min(b0 - 0.5, 2.0 - b0))}"
    d0 = f"{wave(0.3)}"
    d1 = f"({wave(0.3)})/sin(x0)"
    theta0 = _rnd(rng, np.pi / 2 - 0.3, np.pi / 2 + 0.3)
    phi0 = _rnd(rng, 0, 6.283185)
    ang = _rnd(rng, 0, 6.283185)
    length = _rnd(rng, 4.0, 7.0)
    exprs = {"g0[0][0]": g00, "g0[0][1]": g01, "g0[1][1]": g11, "beta": beta,
             "delta[0]": d0, "delta[1]": d1}
    spec = stationary_from_strings(2, exprs, domain=BoxDomain(((0.15, np.pi - 0.15), None)))
    point = np.array([theta0, phi0, 0.0])
    h = spec.base.eval(point[:2])
    e = orthonormal_basis(spec.base, point[:2])
    u = e @ np.array([np.cos(ang), np.sin(ang)])
    u = np.round(u, 9)
    u = u / np.sqrt(u @ h @ u)
    iv = (0.0, length)
    inputs = _seed_inputs("stationary", point, u, iv, steps)
    inputs["stationary"] = {"dim": "2", "domain": "x0: 0.15 .. 2.991593", **exprs}
    return Scenario("stationary_random", spec, point, u, iv, steps=steps,
                    description="random stationary data over a perturbed sphere", inputs=inputs)


def stationary_from_strings(dim: int, exprs: dict, domain=None, key_prefix: str = "stationary"
                            ) -> SubmersionSpec:
    """Build a stationary spacetime from ``g0[i][j]``, ``beta``, ``delta[i]`` strings.

    Coordinates on S are ``x0 .. x{dim-1}``; the time coordinate is ``x{dim}``.
    Missing ``g0`` entries are zero (the lower triangle mirrors the upper one).
    """
    xs = sp.symbols(f"x0:{dim}")
    names = {str(x): x for x in xs}
    mat = sp.zeros(dim, dim)
    for i in range(dim):
        for j in range(i, dim):
            key = f"g0[{i}][{j}]"
            alt = f"g0[{j}][{i}]"
            text = exprs.get(key, exprs.get(alt))
            if text is not None:
                val = parse_expression(text, names, key=f"{key_prefix}.{key}")
                mat[i, j] = mat[j, i] = val
    beta_text = exprs.get("beta")
    if beta_text is None:
        raise InvalidStationaryData("missing beta", key=f"{key_prefix}.beta")
    beta = parse_expression(beta_text, names, key=f"{key_prefix}.beta")
    delta = [parse_expression(exprs.get(f"delta[{i}]", "0"), names, key=f"{key_prefix}.delta[{i}]")
             for i in range(dim)]
    try:
        g0 = MetricField.from_sympy(mat, xs, 0, domain=domain, name="g0")
        return stationary_spacetime(g0, beta, delta, time_name=f"x{dim}")
    except InvalidStationaryData as exc:
        exc.context.setdefault("key", f"{key_prefix}.beta")
        raise


# ---------------------------------------------------------------------------
# verification


@dataclass
class ScenarioResult:
    name: str
    inputs: dict
    report_total: Optional[FocalReport]
    report_base: Optional[FocalReport]
    index_total: Optional[Fraction]
    index_base: Optional[Fraction]
    residuals: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def failed_checks(self) -> list:
        return [k for k, v in self.checks.items() if not v]

    def to_dict(self) -> dict:
        def rep(r):
            if r is None:
                return None
            return {
                "interval": list(r.interval),
                "total_index": str(r.total_index),
                "initial_contribution": str(r.initial_contribution),
                "instants": [{"t": i.t, "kernel_dim": i.kernel_dim,
                              "contribution": str(i.contribution), "flags": list(i.flags)}
                             for i in r.instants],
            }
        return {
            "name": self.name,
            "passed": self.passed,
            "index_total": None if self.index_total is None else str(self.index_total),
            "index_base": None if self.index_base is None else str(self.index_base),
            "focal_total": rep(self.report_total),
            "focal_base": rep(self.report_base),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "checks": dict(self.checks),
            "notes": list(self.notes),
            "inputs": self.inputs,
        }


def _pair_instants(rq: FocalReport, rp: FocalReport):
    """Match instants by time; returns (matched, max |dt|, contributions agree)."""
    tq, tp = rq.instants, rp.instants
    if len(tq) != len(tp):
        return False, np.inf, False
    dt, same = 0.0, True
    for a, b in zip(tq, tp):
        dt = max(dt, abs(a.t - b.t))
        if a.kernel_dim != b.kernel_dim:
            same = False
        if not (a.degenerate or b.degenerate) and a.contribution != b.contribution:
            same = False
    return dt <= INSTANT_TOL, dt, same


def _flow_vs_direct(metric, curve, rng) -> float:
    """Relative gap between a Jacobi field from the symplectic flow and one from direct RK4."""
    system = jacobi_system(metric, curve, BoundaryData.point(metric.dim))
    n = metric.dim
    p = system.frame.frames
    j0, w0 = rng.normal(size=n), rng.normal(size=n)
    g = metric.eval(curve.points[0])
    state0 = np.concatenate([np.linalg.solve(p[0], j0), p[0].T @ g @ w0])
    states = system.flow.phi @ state0
    via_flow = np.einsum("nij,nj->ni", p, states[:, :n])
    direct = jacobi_field_direct(metric, curve, j0, w0).values
    return float(np.max(np.linalg.norm(via_flow - direct, axis=1)) / max(1.0, np.max(np.linalg.norm(direct, axis=1))))


def integrate_pair(scenario: Scenario, tol: Tolerances = DEFAULT):
    """Horizontal geodesic upstairs and the base geodesic with matching data, on a common interval."""
    spec = scenario.spec
    q0, v0 = scenario.point, scenario.velocity
    ver, _ = projectors(spec, q0)
    if np.linalg.norm(ver @ v0) > 1e-10 * max(1.0, np.linalg.norm(v0)):
        raise IncompatibleSeed("initial velocity is not horizontal")
    notes = []
    gamma = integrate_geodesic(spec.total, q0, v0, scenario.interval, scenario.steps, tol, allow_partial=True)
    if gamma.t_exit is not None:
        notes.append(f"total geodesic leaves the patch; interval shortened to [{gamma.a}, {gamma.b}]")
    steps = len(gamma) - 1
    steps -= steps % 2
    if steps < 8:
        raise PatchExit("geodesic leaves the patch almost immediately", t=gamma.b)
    iv = (gamma.a, float(gamma.times[steps]))
    if steps != len(gamma) - 1:
        gamma = integrate_geodesic(spec.total, q0, v0, iv, steps, tol)
    base = integrate_geodesic(spec.base, spec.project(q0), scenario.base_velocity, iv, steps, tol,
                              allow_partial=True)
    if base.t_exit is not None:
        notes.append(f"base geodesic leaves the patch at t={base.t_exit:.6g}")
        steps = len(base) - 1
        steps -= steps % 2
        iv = (gamma.a, float(base.times[steps]))
        gamma = integrate_geodesic(spec.total, q0, v0, iv, steps, tol)
        base = integrate_geodesic(spec.base, spec.project(q0), scenario.base_velocity, iv, steps, tol)
    return gamma, base, notes


def verify_main_theorem(scenario: Scenario, tol: Tolerances = DEFAULT, frames: bool = True,
                        seed: int = 0, counts: bool = True, convention: str = "open") -> ScenarioResult:
    """Run every end-to-end check of the scenario.

    Checks: equality of the Q- and P-Maslov indices (open and closed endpoint
    conventions), pairwise agreement of focal instants and contributions,
    frame independence, additivity of contributions, symplectic drift,
    flow/direct Jacobi agreement, horizontality of the geodesic, closed-form
    base instants when known, and for causal Lorentzian runs the inequality
    ``i(x) >= i(gamma) + omega_n(gamma)``.  ``convention`` selects the endpoint
    convention of the reported focal instants and indices.
    """
    start = time.perf_counter()
    spec = scenario.spec
    rng = np.random.default_rng(seed)
    gamma, base, notes = integrate_pair(scenario, tol)
    if spec.symbolic and "beta" in spec.symbolic:
        check_stationary_beta(spec, gamma.points)
    pdata = scenario.pdata()
    frame_q, shape_q = lifted_boundary_shape(spec, pdata, gamma.points[0], gamma.velocities[0])
    bd_q = BoundaryData(frame_q, SymmetricForm(shape_q))
    bd_p = BoundaryData.from_submanifold(pdata, base.velocities[0])
    sys_q = jacobi_system(spec.total, gamma, bd_q, None, tol)
    sys_p = jacobi_system(spec.base, base, bd_p, None, tol)
    rq = detect_focal_instants(spec.total, gamma, bd_q, convention=convention, tol=tol, system=sys_q,
                               level="total")
    rp = detect_focal_instants(spec.base, base, bd_p, convention=convention, tol=tol, system=sys_p,
                               level="base")
    res = ScenarioResult(scenario.name, scenario.inputs, rq, rp, rq.total_index, rp.total_index, notes=notes)
    ch, rs = res.checks, res.residuals
    ch["index_equality"] = rq.total_index == rp.total_index
    closed_q = q_maslov_index(spec.total, gamma, bd_q, convention="closed", tol=tol, system=sys_q)
    closed_p = q_maslov_index(spec.base, base, bd_p, convention="closed", tol=tol, system=sys_p)
    ch["index_equality_closed"] = closed_q == closed_p
    matched, dt, same = _pair_instants(rq, rp)
    rs["instant_dt"] = dt if np.isfinite(dt) else -1.0
    ch["instant_correspondence"] = matched and same
    for r, lvl in ((rq, "total"), (rp, "base")):
        if not r.any_degenerate:
            ch[f"contributions_sum_{lvl}"] = r.consistent
        if any("chart-mismatch" in i.flags for i in r.instants):
            notes.append(f"{lvl}: local chart index differs from the signature at some instant")
    if scenario.base_instants is not None:
        want = np.array(scenario.base_instants)
        got = rp.times()
        ok = want.size == got.size and (want.size == 0 or np.max(np.abs(want - got)) <= INSTANT_TOL)
        rs["oracle_dt"] = float(np.max(np.abs(want - got))) if ok and want.size else 0.0
        ch["base_oracle"] = bool(ok)
    rs["drift_total"] = sys_q.flow.max_drift
    rs["drift_base"] = sys_p.flow.max_drift
    ch["symplectic_drift"] = max(rs["drift_total"], rs["drift_base"]) < tol.sympl_tol
    rs["flow_vs_direct_total"] = _flow_vs_direct(spec.total, gamma, rng)
    rs["flow_vs_direct_base"] = _flow_vs_direct(spec.base, base, rng)
    ch["flow_vs_direct"] = max(rs["flow_vs_direct_total"], rs["flow_vs_direct_base"]) < tol.resid_tol
    diag = lift_geodesic_check(spec, gamma)
    rs["max_vertical"] = diag.max_vertical
    rs["projection_gap"] = float(np.max(np.linalg.norm(spec.project(gamma.points) - base.points, axis=1)))
    ch["horizontal"] = rs["max_vertical"] < 1e-7 and rs["projection_gap"] < 1e-6
    if frames:
        idx_q, idx_p = [], []
        for fq, fp in _frame_family(spec, gamma, base, sys_q.frame, sys_p.frame, rng):
            idx_q.append(q_maslov_index(spec.total, gamma, bd_q, frame=fq, convention=convention, tol=tol))
            idx_p.append(q_maslov_index(spec.base, base, bd_p, frame=fp, convention=convention, tol=tol))
        ch["frame_invariance"] = all(v == rq.total_index for v in idx_q) and \
            all(v == rp.total_index for v in idx_p)
    kind = causal_character(spec.total, gamma)
    if counts:
        cc = conjugate_counts(spec, gamma, tol, base_curve=base)
        rs["omega"], rs["omega_delta"], rs["omega_n"] = cc.omega, cc.omega_delta, cc.omega_n
        rq.counts = {"omega": cc.omega, "omega_delta": cc.omega_delta, "omega_n": cc.omega_n}
        if cc.omega_delta_base is not None:
            ch["omega_delta_cross_check"] = cc.omega_delta == cc.omega_delta_base
        if spec.total.index == 1 and spec.base.index == 1 and kind != "spacelike":
            i_gamma = causal_index(spec.total, gamma, tol)
            i_x = causal_index(spec.base, base, tol,
                               report=rp if pdata.codim_free_dim == 0 else None)
            rs["i_gamma"], rs["i_x"] = i_gamma, i_x
            ch["lorentz_inequality"] = i_x >= i_gamma + cc.omega_n
    res.elapsed = time.perf_counter() - start
    return res


def _frame_family(spec, gamma, base, par_q, par_p, rng):
    """Orthonormal rotating and random smooth frames on both levels."""
    n, m = spec.n, spec.m
    yield (rotating_frame(spec.total, par_q, rng.normal(size=(n, n))),
           rotating_frame(spec.base, par_p, rng.normal(size=(m, m))))
    yield random_smooth_frame(par_q, rng), random_smooth_frame(par_p, rng)


def run_scenario(name: str, tol: Tolerances = DEFAULT, **kwargs) -> ScenarioResult:
    steps = kwargs.pop("steps", 2000)
    return verify_main_theorem(get_scenario(name, steps=steps), tol, **kwargs)


# ---------------------------------------------------------------------------
# structural identities on random samples


def _sample_points(scenario: Scenario, gamma: GeodesicPath, rng, count: int):
    """Points near the geodesic (inside the patch) for pointwise identities."""
    out = []
    dom = scenario.spec.total.domain
    while len(out) < count:
        p = gamma.points[rng.integers(len(gamma))] + 0.2 * rng.normal(size=gamma.dim)
        if dom is None or dom(p):
            out.append(p)
    return out


def structural_residuals(scenario: Scenario, samples: int = 100, seed: int = 0,
                         gamma: Optional[GeodesicPath] = None, h: float = 1e-4) -> dict:
    """Maximum residuals of pointwise submersion identities over random samples.

    * ``covariant_h`` / ``covariant_v``: horizontal and vertical parts of ``DE/dt``
      along the straight coordinate curve ``alpha(s) = p + s u`` for the linear
      field ``E(s) = e0 + s e1``, against the splitting through ``DE_*/dt``, A and T
      (derivatives along the curve by central differences of step ``h``).
    * ``skew_T``, ``skew_A``: ``g(T_e f, w) + g(f, T_e w)`` and likewise for A.
    * ``T_symmetric``, ``A_alternating``: on vertical resp. horizontal pairs.
    * ``sff_distribution``: ``V nabla_v W`` for a non-constant horizontal extension
      ``W`` (by differences along ``v``) against ``A_v w + T_v w``.
    * ``varpi_relation``: ``gtilde' - (gtilde varpi + varpi^T gtilde)`` on a random frame.

    Residuals are relative to ``max(1, |terms|)``.
    """
    spec = scenario.spec
    rng = np.random.default_rng(seed)
    if gamma is None:
        gamma, _, _ = integrate_pair(scenario)
    out = dict.fromkeys(["covariant_h", "covariant_v", "skew_T", "skew_A", "T_symmetric",
                         "A_alternating", "sff_distribution"], 0.0)
    n = spec.n
    for p in _sample_points(scenario, gamma, rng, samples):
        u, e0, e1, w, f = rng.normal(size=(5, n))
        g = spec.total.eval(p)
        ver, hor = projectors(spec, p)
        gam = christoffel(spec.total, p)
        alpha = lambda s: p + s * u  # noqa: E731
        fd = lambda fn: (fn(h) - fn(-h)) / (2 * h)  # noqa: E731
        de = e1 + np.einsum("kij,i,j->k", gam, u, e0)
        estar = lambda s: spec.differential(alpha(s)) @ (e0 + s * e1)  # noqa: E731
        xb, xd = spec.project(p), spec.differential(p) @ u
        de_star = fd(estar) + np.einsum("kij,i,j->k", christoffel(spec.base, xb), xd, estar(0.0))
        vfield = lambda s: projectors(spec, alpha(s))[0] @ (e0 + s * e1)  # noqa: E731
        vv, hh = ver @ e0, hor @ e0
        dv = fd(vfield) + np.einsum("kij,i,j->k", gam, u, vv)
        uh, uv = hor @ u, ver @ u
        rhs_h = horizontal_lift(spec, p, de_star) + tensor_A(spec, p, hh, uv) \
            + tensor_A(spec, p, uh, vv) + tensor_T(spec, p, uv, vv)
        rhs_v = tensor_A(spec, p, uh, hh) + tensor_T(spec, p, uv, hh) + ver @ dv
        scale = max(1.0, np.linalg.norm(de))
        out["covariant_h"] = max(out["covariant_h"], np.linalg.norm(hor @ de - rhs_h) / scale)
        out["covariant_v"] = max(out["covariant_v"], np.linalg.norm(ver @ de - rhs_v) / scale)
        t_ef, t_ew = tensor_T(spec, p, e0, f), tensor_T(spec, p, e0, w)
        a_ef, a_ew = tensor_A(spec, p, e0, f), tensor_A(spec, p, e0, w)
        sc = max(1.0, np.linalg.norm(f) * np.linalg.norm(w) * np.abs(g).max())
        out["skew_T"] = max(out["skew_T"], abs(t_ef @ g @ w + f @ g @ t_ew) / sc)
        out["skew_A"] = max(out["skew_A"], abs(a_ef @ g @ w + f @ g @ a_ew) / sc)
        v1, v2 = ver @ f, ver @ w
        h1, h2 = hor @ f, hor @ w
        out["T_symmetric"] = max(out["T_symmetric"], np.linalg.norm(
            tensor_T(spec, p, v1, v2) - tensor_T(spec, p, v2, v1)) / sc)
        out["A_alternating"] = max(out["A_alternating"], np.linalg.norm(
            tensor_A(spec, p, h1, h2) + tensor_A(spec, p, h2, h1)) / sc)
        # horizontal extension W(y) = H(y) (w0 + M (y - p)) of w = H(p) w0
        mm = rng.normal(size=(n, n))
        wext = lambda s: projectors(spec, p + s * u)[1] @ (w + s * mm @ u)  # noqa: E731
        nab = fd(wext) + np.einsum("kij,i,j->k", gam, u, hor @ w)
        sff = second_fundamental_form_distribution(spec, p, u, hor @ w)
        out["sff_distribution"] = max(out["sff_distribution"],
                                      np.linalg.norm(ver @ nab - sff) / max(1.0, np.linalg.norm(nab)))
    frame = random_smooth_frame(parallel_transport_frame(
        spec.total, gamma, orthonormal_basis(spec.total, gamma.points[0])), rng)
    from .geometry import symplectic_system_data
    data = symplectic_system_data(spec.total, gamma, frame)
    out["varpi_relation"] = data.compatibility_residual() / max(1.0, float(np.abs(data.gtilde).max()))
    return out


# ---------------------------------------------------------------------------
# infinitesimally horizontal variations


def _fiber_point(spec: SubmersionSpec, guess, target, iters: int = 20):
    """Newton solve ``pi(q) = target`` starting at ``guess`` (minimum-norm corrections)."""
    q = np.array(guess, dtype=float)
    for _ in range(iters):
        r = spec.project(q) - target
        if np.linalg.norm(r) < 1e-14 * max(1.0, np.linalg.norm(target)):
            break
        q = q - np.linalg.pinv(spec.differential(q)) @ r
    return q


def horizontal_variation_check(scenario: Scenario, seed: int = 0, h: float = 1e-4, samples: int = 3,
                               gamma: Optional[GeodesicPath] = None) -> dict:
    """``D(E)`` for variational fields of families of horizontal geodesics.

    Base geodesics with perturbed initial data are lifted horizontally through
    points moved along the fiber and along the lifted base perturbation; ``E`` is
    the central difference of the family.  Also checks that
    ``lift_field_D_zero(E_*, E(a))`` projects back to ``E_*`` and reproduces ``E``.
    """
    spec = scenario.spec
    rng = np.random.default_rng(seed)
    if gamma is None:
        gamma, _, _ = integrate_pair(scenario)
    steps = len(gamma) - 1
    q0 = gamma.points[0]
    x0, u0 = spec.project(q0), scenario.base_velocity
    ver, _ = projectors(spec, q0)
    vbasis = np.linalg.svd(ver)[0][:, : spec.n - spec.m]
    out = {"max_D": 0.0, "roundtrip_projection": 0.0, "roundtrip_field": 0.0}
    for _ in range(samples):
        w0, w1 = rng.normal(size=(2, spec.m)) * 0.5
        z = vbasis @ rng.normal(size=vbasis.shape[1])

        def member(s):
            xs = x0 + s * w0
            base = integrate_geodesic(spec.base, xs, u0 + s * w1, (gamma.a, gamma.b), steps, richardson=False)
            guess = q0 + s * (horizontal_lift(spec, q0, w0) + z)
            return horizontal_lift_curve(spec, base, _fiber_point(spec, guess, xs)).points

        vals = (member(h) - member(-h)) / (2 * h)
        E = FieldAlongCurve(gamma, vals)
        scale = max(1.0, float(np.max(np.linalg.norm(vals, axis=1))))
        d = derived_field(spec, gamma, E).values
        out["max_D"] = max(out["max_D"], float(np.max(np.linalg.norm(d, axis=1))) / scale)
        P = project_field(spec, gamma, E)
        lifted = lift_field_D_zero(spec, gamma, P, vals[0])
        back = project_field(spec, gamma, lifted).values
        out["roundtrip_projection"] = max(out["roundtrip_projection"],
                                          float(np.max(np.abs(back - P.values))) / scale)
        out["roundtrip_field"] = max(out["roundtrip_field"],
                                     float(np.max(np.abs(lifted.values - vals))) / scale)
    return out


# ---------------------------------------------------------------------------
# index-form identity on random admissible fields


def random_admissible_field(gamma: GeodesicPath, tangent: np.ndarray, rng, modes: int = 3) -> FieldAlongCurve:
    """``E(t) = (b - t)/(b - a) [tau c + (t - a) w(t)]`` with random trigonometric ``w``."""
    ts = gamma.times
    a, b = ts[0], ts[-1]
    s = (ts - a) / (b - a)
    c = rng.normal(size=tangent.shape[1])
    amp = rng.normal(size=(modes, gamma.dim))
    freq = rng.uniform(0.3, 2.0, size=modes)
    phase = rng.uniform(0, 2 * np.pi, size=modes)
    w = np.sin(np.outer(ts, freq) + phase) @ amp
    vals = (1 - s)[:, None] * ((tangent @ c)[None, :] + (ts - a)[:, None] * w)
    return FieldAlongCurve(gamma, vals)


def index_identity_residuals(scenario: Scenario, pairs: int = 20, seed: int = 0,
                             gamma: Optional[GeodesicPath] = None, base: Optional[GeodesicPath] = None,
                             tol: Tolerances = DEFAULT) -> list:
    """``(residual, |LHS|)`` of the index-form identity for random admissible pairs."""
    spec = scenario.spec
    rng = np.random.default_rng(seed)
    if gamma is None:
        gamma, base, _ = integrate_pair(scenario, tol)
    pdata = scenario.pdata()
    frame_q, _ = lifted_boundary_shape(spec, pdata, gamma.points[0], gamma.velocities[0])
    out = []
    for _ in range(pairs):
        E = random_admissible_field(gamma, frame_q, rng)
        F = random_admissible_field(gamma, frame_q, rng)
        r = verify_index_identity(spec, gamma, pdata, E, F, tol, base_curve=base)
        out.append((r.residual, abs(r.lhs)))
    return out
