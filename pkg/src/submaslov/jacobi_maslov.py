"""Jacobi fields with submanifold boundary conditions and their Maslov index.

A geodesic ``gamma: [a, b] -> M`` with a frame ``p(t)`` along it gives the
symplectic system of :mod:`submaslov.geometry`, whose state ``(v, alpha)``
encodes a Jacobi field as ``J = p v`` and ``alpha = p^T g DJ/dt``.  For a
submanifold Q through ``gamma(a)`` orthogonal to ``gamma'(a)`` the initial data
of Q-Jacobi fields form the Lagrangian ``L_Q``; the Q-Maslov index of ``gamma``
is the Maslov index of ``t -> Phi(t) L_Q`` relative to ``L0 = {0} + R^n*``.

Q-focal instants (where a nonzero Q-Jacobi field vanishes) are located as the
zeros of the smallest singular value of the ``v`` block of an orthonormal
frame of ``Phi(t) L_Q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize_scalar

from ._util import null_space
from .errors import InvalidArgument, InvalidBoundaryData, InvalidField
from .geometry import (
    FieldAlongCurve,
    FlowResult,
    FrameField,
    GeodesicPath,
    MetricField,
    _curvature_many,
    assemble_symplectic_system,
    flow,
    jacobi_field_direct,
    parallel_transport_frame,
    orthonormal_basis,
    symplectic_system_data,
)
from .submersion import (
    SubmanifoldData,
    SubmersionSpec,
    derived_field,
    jets,
    lift_field_D_zero,
    lifted_boundary_shape,
    project_curve,
    project_field,
)
from .symplectic import (
    LagrangianFrame,
    LagrangianPath,
    SymmetricForm,
    maslov_index,
    signature,
)
from .tolerances import DEFAULT, Tolerances

CONVENTIONS = ("open", "closed")

# grid minima of the smallest singular value below this are refined
SCAN_THRESHOLD = 0.25
# samples on each side of an instant used for the local chart cross-check
LOCAL_WINDOW = 4


# ---------------------------------------------------------------------------
# boundary data


@dataclass(frozen=True)
class BoundaryData:
    """Tangent frame of a submanifold at ``gamma(a)`` and its shape along ``gamma'(a)``.

    ``tangent_frame`` has shape (n, k) in manifold coordinates; ``shape[i, j]`` is
    ``g(S(tau_i, gamma'(a)), tau_j)``.  A point submanifold has ``k = 0``.
    """

    tangent_frame: np.ndarray
    shape: SymmetricForm

    def __post_init__(self):
        t = np.asarray(self.tangent_frame, dtype=float)
        if t.ndim != 2:
            raise InvalidBoundaryData("tangent frame must be a 2-d array (n, k)")
        s = self.shape
        if not isinstance(s, SymmetricForm):
            s = np.asarray(s, dtype=float)
            if s.size != t.shape[1] ** 2:
                raise InvalidBoundaryData(f"shape has {s.size} entries but the frame has {t.shape[1]} columns")
            s = SymmetricForm(s.reshape(t.shape[1], t.shape[1])) if t.shape[1] else SymmetricForm(np.zeros((0, 0)))
        if s.n != t.shape[1]:
            raise InvalidBoundaryData(f"shape is {s.n}x{s.n} but the frame has {t.shape[1]} columns")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "tangent_frame", t)
        object.__setattr__(self, "shape", s)

    @property
    def dim(self) -> int:
        return self.tangent_frame.shape[1]

    @classmethod
    def point(cls, n: int) -> "BoundaryData":
        return cls(np.zeros((n, 0)), SymmetricForm(np.zeros((0, 0))))

    @classmethod
    def from_submanifold(cls, sub: SubmanifoldData, velocity) -> "BoundaryData":
        """Rescale the shape of ``sub`` (given along ``sub.normal``) to ``velocity``.

        ``velocity`` must be parallel to the stored normal.
        """
        velocity = np.asarray(velocity, dtype=float)
        nrm = sub.normal
        if sub.codim_free_dim == 0:
            return cls.point(velocity.size)
        denom = float(nrm @ nrm)
        if denom == 0.0:
            raise InvalidBoundaryData("submanifold data carries a zero normal")
        scale = float(velocity @ nrm) / denom
        if np.linalg.norm(velocity - scale * nrm) > 1e-8 * max(1.0, np.linalg.norm(velocity)):
            raise InvalidBoundaryData("velocity is not parallel to the normal of the submanifold data")
        return cls(sub.tangent_frame, SymmetricForm(scale * sub.shape))

    def validate(self, metric: MetricField, point, velocity, tol: float = 1e-8) -> None:
        g = metric.eval(np.asarray(point, dtype=float))
        t = self.tangent_frame
        if t.shape[0] != metric.dim:
            raise InvalidBoundaryData(f"tangent frame has {t.shape[0]} rows, metric has dim {metric.dim}")
        if self.dim == 0:
            return
        v = np.asarray(velocity, dtype=float)
        scale = max(1.0, np.abs(g).max()) * max(1.0, np.abs(t).max()) * max(1.0, np.linalg.norm(v))
        if np.linalg.norm(t.T @ g @ v) > tol * scale:
            raise InvalidBoundaryData("gamma'(a) is not orthogonal to the submanifold")
        if np.linalg.matrix_rank(t, tol=tol * max(1.0, np.abs(t).max())) < self.dim:
            raise InvalidBoundaryData("tangent frame columns are dependent")
        lam = np.linalg.eigvalsh(t.T @ g @ t)
        if np.min(np.abs(lam)) <= tol * max(1.0, np.max(np.abs(lam))):
            raise InvalidBoundaryData("metric restricted to the submanifold is degenerate")

    def shape_vectors(self, metric: MetricField, point) -> np.ndarray:
        """Columns ``S(tau_i, gamma'(a))`` in manifold coordinates."""
        t = self.tangent_frame
        if self.dim == 0:
            return t
        g = metric.eval(np.asarray(point, dtype=float))
        return t @ np.linalg.solve(t.T @ g @ t, self.shape.entries)


def lagrangian_LQ(bd: BoundaryData, frame: FrameField, metric: MetricField,
                  tol: float = 1e-8) -> LagrangianFrame:
    """Initial data ``(v, alpha)`` at ``t = a`` of the Q-Jacobi fields.

    Tangent directions ``tau`` give ``(p^-1 tau, p^T g S(tau))``; directions ``nu``
    g-orthogonal to the submanifold give ``(0, p^T g nu)``.
    """
    x, v = frame.curve.points[0], frame.curve.velocities[0]
    bd.validate(metric, x, v, tol)
    p = frame.frames[0]
    g = metric.eval(x)
    n = metric.dim
    t = bd.tangent_frame
    normals = null_space(t.T @ g) if bd.dim else np.eye(n)
    top = np.hstack([np.linalg.solve(p, t), np.zeros((n, normals.shape[1]))])
    bottom = np.hstack([p.T @ g @ bd.shape_vectors(metric, x), p.T @ g @ normals])
    return LagrangianFrame(np.vstack([top, bottom]), tol=max(tol, 1e-10))


# ---------------------------------------------------------------------------
# the Lagrangian path of a geodesic


@dataclass(frozen=True)
class JacobiSystem:
    """Flow of the Jacobi symplectic system and the path ``Phi(t) L_Q``."""

    metric: MetricField
    curve: GeodesicPath
    frame: FrameField
    bd: BoundaryData
    flow: FlowResult
    LQ: LagrangianFrame
    tol: Tolerances = DEFAULT

    @property
    def n(self) -> int:
        return self.metric.dim

    @property
    def times(self) -> np.ndarray:
        return self.curve.times

    def columns(self) -> np.ndarray:
        """``Phi(t_i) L_Q`` on the grid, shape (N, 2n, n)."""
        return self.flow.phi @ self.LQ.columns

    def columns_at(self, t: float) -> np.ndarray:
        return self.flow.phi_at(t) @ self.LQ.columns

    def path(self, start: int = 0) -> LagrangianPath:
        return LagrangianPath.from_arrays(self.times[start:], self.columns()[start:], tol=1e-6)

    def v_block_singular_values(self, t: Optional[float] = None) -> np.ndarray:
        """Singular values (descending) of the v block of an orthonormal frame of ``Phi L_Q``."""
        cols = self.columns() if t is None else self.columns_at(t)[None]
        q, _ = np.linalg.qr(cols)
        return np.linalg.svd(q[:, : self.n, :], compute_uv=False)


def jacobi_system(metric: MetricField, curve: GeodesicPath, bd: BoundaryData,
                  frame: Optional[FrameField] = None, tol: Tolerances = DEFAULT) -> JacobiSystem:
    """Assemble and integrate the symplectic system along ``curve``.

    Without a frame the parallel transport of an orthonormal basis is used.
    """
    if frame is None:
        frame = parallel_transport_frame(metric, curve, orthonormal_basis(metric, curve.points[0]))
    coeff = assemble_symplectic_system(symplectic_system_data(metric, curve, frame))
    fl = flow(coeff, curve.times, tol)
    lq = lagrangian_LQ(bd, frame, metric, tol.rank_tol)
    return JacobiSystem(metric, curve, frame, bd, fl, lq, tol)


def _check_convention(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise InvalidArgument(f"convention must be one of {CONVENTIONS}, got {convention!r}")


def _path_index(system: JacobiSystem, convention: str) -> Fraction:
    _check_convention(convention)
    start = 1 if convention == "open" else 0
    tol = system.tol
    return maslov_index(system.path(start), LagrangianFrame.vertical(system.n),
                        trans_tol=tol.trans_tol)


def q_maslov_index(metric: MetricField, gamma: GeodesicPath, bd: BoundaryData,
                   frame: Optional[FrameField] = None, convention: str = "open",
                   tol: Tolerances = DEFAULT, system: Optional[JacobiSystem] = None) -> Fraction:
    """Maslov index of ``t -> Phi(t) L_Q`` relative to ``{0} + R^n*``.

    ``convention="open"`` starts the path at the first grid point after ``a``
    (``L_Q`` always meets ``L0`` at ``a``); ``"closed"`` includes the initial
    half contribution.
    """
    system = system or jacobi_system(metric, gamma, bd, frame, tol)
    return _path_index(system, convention)


# ---------------------------------------------------------------------------
# focal instants


@dataclass(frozen=True)
class FocalInstant:
    t: float
    kernel_dim: int
    contribution: Fraction
    flags: tuple = ()
    local_index: Optional[Fraction] = None   # chart-based index over a small window
    sigma: float = 0.0                       # smallest singular value at t

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags


@dataclass
class FocalReport:
    interval: tuple
    instants: list
    total_index: Fraction
    convention: str = "open"
    initial_contribution: Fraction = Fraction(0)
    level: str = "total"
    counts: Optional[dict] = None            # omega, omega_delta, omega_n when computed
    flags: tuple = field(default=())

    @property
    def any_degenerate(self) -> bool:
        return any(i.degenerate for i in self.instants)

    def contribution_sum(self) -> Fraction:
        return self.initial_contribution + sum((i.contribution for i in self.instants), Fraction(0))

    @property
    def consistent(self) -> bool:
        """Sum of contributions equals the path index (meaningful without degenerate instants)."""
        return self.contribution_sum() == self.total_index

    def times(self) -> np.ndarray:
        return np.array([i.t for i in self.instants])

    def multiplicity(self, lo: Optional[float] = None, hi: Optional[float] = None) -> int:
        """Sum of kernel dimensions of instants in the open interval ``(lo, hi)``."""
        lo = self.interval[0] if lo is None else lo
        hi = self.interval[1] if hi is None else hi
        return sum(i.kernel_dim for i in self.instants if lo < i.t < hi)


@dataclass(frozen=True)
class JacobiEvaluation:
    """``J[t0] = {J(t0)}`` for Q-Jacobi fields ``J`` and its g-orthogonal complement."""

    t: float
    space: np.ndarray        # (n, r) basis in manifold coordinates
    complement: np.ndarray   # (n, n - r)
    form: SymmetricForm      # g restricted to the complement
    degenerate: bool

    @property
    def kernel_dim(self) -> int:
        return self.complement.shape[1]

    @property
    def contribution(self) -> int:
        p, m, _ = signature(self.form)
        return p - m


def jacobi_space_evaluation(system: JacobiSystem, t0: float, kernel_dim: Optional[int] = None
                            ) -> JacobiEvaluation:
    """Evaluate the Q-Jacobi fields at ``t0``.

    ``kernel_dim`` fixes the codimension of ``J[t0]``; otherwise singular values of
    the v block below ``kernel_tol`` (relative) decide it.
    """
    a, b = system.curve.a, system.curve.b
    if not a < t0 <= b:
        raise InvalidArgument(f"t0={t0} outside (a, b]")
    tol = system.tol
    cols = system.columns_at(t0)
    q, _ = np.linalg.qr(cols)
    n = system.n
    vblock = q[:n]
    u, s, _ = np.linalg.svd(vblock)
    if kernel_dim is None:
        kernel_dim = int(np.sum(s < tol.kernel_tol))
    r = n - kernel_dim
    x, _ = system.curve.at(t0)
    p, _ = system.frame.at(t0)
    g = system.metric.eval(x)
    space = p @ u[:, :r]
    comp = null_space(space.T @ g, tol.rank_tol) if r else np.eye(n)
    if comp.shape[1] != kernel_dim:
        # the complement of a degenerate subspace can have the wrong size
        comp = comp[:, :kernel_dim] if comp.shape[1] > kernel_dim else comp
    gw = comp.T @ g @ comp
    lam = np.linalg.eigvalsh(gw) if gw.size else np.zeros(0)
    deg = bool(lam.size and np.min(np.abs(lam)) <= tol.kernel_tol * max(1.0, np.abs(g).max()))
    deg = deg or comp.shape[1] != kernel_dim
    return JacobiEvaluation(float(t0), space, comp, SymmetricForm(gw, tol=tol.kernel_tol), deg)


def _refine(system: JacobiSystem, lo: float, hi: float, t_tol: float):
    fn = lambda t: float(system.v_block_singular_values(t)[0, -1])  # noqa: E731
    res = minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                          options={"xatol": t_tol, "maxiter": 200})
    t, val = float(res.x), float(res.fun)
    for edge in (lo, hi):
        ev = fn(edge)
        if ev < val:
            t, val = edge, ev
    return t, val


def _candidates(sig: np.ndarray) -> list:
    """Grid indices (>= 1) of local minima of the smallest singular value below threshold."""
    m = sig.size
    out = []
    for k in range(1, m):
        left = sig[k - 1]
        right = sig[k + 1] if k + 1 < m else np.inf
        if sig[k] <= left and sig[k] <= right and sig[k] < SCAN_THRESHOLD:
            out.append(k)
    return out


def _local_index(system: JacobiSystem, k: int, L0: LagrangianFrame) -> Optional[Fraction]:
    lo = max(1, k - LOCAL_WINDOW)
    hi = min(len(system.times) - 1, k + LOCAL_WINDOW)
    if hi - lo < 2:
        return None
    cols = system.columns()[lo : hi + 1]
    try:
        path = LagrangianPath.from_arrays(system.times[lo : hi + 1], cols, tol=1e-6)
        return maslov_index(path, L0, trans_tol=system.tol.trans_tol)
    except Exception:  # noqa: BLE001 - the cross-check is advisory
        return None


def detect_focal_instants(metric: MetricField, gamma: GeodesicPath, bd: BoundaryData,
                          frame: Optional[FrameField] = None, convention: str = "open",
                          tol: Tolerances = DEFAULT, system: Optional[JacobiSystem] = None,
                          level: str = "total") -> FocalReport:
    """Locate Q-focal instants in ``(a, b]`` with kernel dimensions and contributions.

    Interior instants contribute the signature of g on ``J[t0]^perp``; an instant
    at ``b`` contributes half of it.  Flags: ``degenerate`` (g degenerate on the
    complement), ``cluster`` (another instant within ``t_tol``), ``endpoint`` and
    ``chart-mismatch`` (local chart index disagrees with the signature).
    """
    _check_convention(convention)
    system = system or jacobi_system(metric, gamma, bd, frame, tol)
    ts = system.times
    a, b = float(ts[0]), float(ts[-1])
    t_tol = tol.t_tol_rel * (b - a)
    sig = system.v_block_singular_values()[:, -1]
    L0 = LagrangianFrame.vertical(system.n)
    found = []
    for k in _candidates(sig):
        lo = ts[k - 1]
        hi = ts[k + 1] if k + 1 < ts.size else ts[k]
        if k == 1:
            lo = 0.5 * (ts[0] + ts[1])
        t0, val = _refine(system, lo, hi, t_tol)
        if val >= tol.focal_tol:
            continue
        found.append((t0, val, k))
    instants = []
    for idx, (t0, val, k) in enumerate(found):
        flags = []
        s_all = system.v_block_singular_values(t0)[0]
        kdim = max(1, int(np.sum(s_all < tol.kernel_tol)))
        ev = jacobi_space_evaluation(system, t0, kdim)
        if ev.degenerate:
            flags.append("degenerate")
        neighbours = [u for j, (u, _, _) in enumerate(found) if j != idx]
        if any(abs(u - t0) < t_tol for u in neighbours):
            flags.append("cluster")
        at_end = b - t0 <= max(t_tol, 1e-12)
        contrib = Fraction(ev.contribution)
        if at_end:
            flags.append("endpoint")
            contrib = Fraction(ev.contribution, 2)
        local = _local_index(system, k, L0)
        if local is not None and local != contrib and not ev.degenerate:
            flags.append("chart-mismatch")
        instants.append(FocalInstant(t0, kdim, contrib, tuple(flags), local, val))
    total = _path_index(system, convention)
    initial = Fraction(0)
    if convention == "closed":
        hi = min(LOCAL_WINDOW, ts.size - 1)
        path = LagrangianPath.from_arrays(ts[: hi + 1], system.columns()[: hi + 1], tol=1e-6)
        initial = maslov_index(path, L0, trans_tol=tol.trans_tol)
    return FocalReport((a, b), instants, total, convention, initial, level)


# ---------------------------------------------------------------------------
# conjugate counts


@dataclass(frozen=True)
class ConjugateCounts:
    omega: int
    omega_delta: int
    omega_n: int
    omega_delta_base: Optional[int] = None   # cross-check through lifted base fields
    uncertain: bool = False


def _rank(m: np.ndarray, tol: float):
    s = np.linalg.svd(m, compute_uv=False) if m.size else np.zeros(0)
    scale = max(1.0, float(s[0])) if s.size else 1.0
    rank = int(np.sum(s > tol * scale))
    uncertain = bool(np.any((s > tol * scale / 100) & (s < tol * scale * 100)))
    return rank, uncertain


def conjugate_counts(spec: SubmersionSpec, gamma: GeodesicPath, tol: Tolerances = DEFAULT,
                     base_curve: Optional[GeodesicPath] = None, cross_check: bool = True
                     ) -> ConjugateCounts:
    """``omega = dim{J : J(a) = J(b) = 0}`` and its D-horizontal part ``omega_delta``.

    Jacobi fields with ``J(a) = 0`` have ``alpha(a) = p^T g DJ(a)``; the ones in the
    delta family have ``DJ(a)`` horizontal.  ``J(b) = 0`` is the kernel of the upper
    right block of ``Phi(b)`` applied to those ``alpha``.
    """
    metric = spec.total
    n, m = spec.n, spec.m
    system = jacobi_system(metric, gamma, BoundaryData.point(n), None, tol)
    phi_b = system.flow.phi[-1]
    block = phi_b[:n, n:]
    p = system.frame.frames[0]
    g = metric.eval(gamma.points[0])
    rank, unc1 = _rank(block, tol.kernel_tol)
    omega = n - rank
    jt = jets(spec, gamma.points[:1])
    hbasis = jt.lift[0]                           # columns span the horizontal space
    alphas = p.T @ g @ hbasis
    rank_d, unc2 = _rank(block @ alphas, tol.kernel_tol)
    omega_delta = m - rank_d
    base_delta = None
    if cross_check:
        base_delta = _omega_delta_via_base(spec, gamma, tol, base_curve)
    return ConjugateCounts(omega, omega_delta, omega - omega_delta, base_delta, unc1 or unc2)


def _omega_delta_via_base(spec, gamma, tol, base_curve):
    """Base Jacobi fields vanishing at both ends, lifted with ``D(E) = 0``, ``E(a) = 0``."""
    base = base_curve or project_curve(spec, gamma)
    m = spec.m
    bsys = jacobi_system(spec.base, base, BoundaryData.point(m), None, tol)
    block = bsys.flow.phi[-1][:m, m:]
    ker = null_space(block, tol.kernel_tol)
    if ker.shape[1] == 0:
        return 0
    p = bsys.frame.frames[0]
    h = spec.base.eval(base.points[0])
    ends = []
    for c in ker.T:
        w = np.linalg.solve(p.T @ h, c)          # DP(a) from alpha = p^T h DP(a)
        field_ = jacobi_field_direct(spec.base, base, np.zeros(m), w)
        lifted = lift_field_D_zero(spec, gamma, field_, np.zeros(spec.n))
        ends.append(lifted.values[-1] / max(1.0, np.linalg.norm(w)))
    rank, _ = _rank(np.column_stack(ends), 1e-4)
    return ker.shape[1] - rank


def causal_character(metric: MetricField, gamma: GeodesicPath, tol: float = 1e-9) -> str:
    e = metric.inner(gamma.points[0], gamma.velocities[0], gamma.velocities[0])
    scale = max(1.0, float(np.linalg.norm(gamma.velocities[0]) ** 2))
    if e < -tol * scale:
        return "timelike"
    if e <= tol * scale:
        return "lightlike"
    return "spacelike"


def causal_index(metric: MetricField, gamma: GeodesicPath, tol: Tolerances = DEFAULT,
                 report: Optional[FocalReport] = None) -> int:
    """Number of conjugate instants in ``(a, b)`` counted with multiplicity.

    For a causal geodesic every Jacobi field vanishing at ``a`` and at a later
    instant is orthogonal to ``gamma'`` (and the lightlike quotient by
    ``gamma'`` adds no kernel), so the count equals the index of the index form
    on orthogonal fields.
    """
    kind = causal_character(metric, gamma)
    if kind == "spacelike":
        raise InvalidArgument("the causal index is defined for timelike or lightlike geodesics")
    report = report or detect_focal_instants(metric, gamma, BoundaryData.point(metric.dim), tol=tol)
    a, b = report.interval
    t_tol = tol.t_tol_rel * (b - a)
    return sum(i.kernel_dim for i in report.instants if a < i.t < b - t_tol)


# ---------------------------------------------------------------------------
# index forms


@dataclass(frozen=True)
class IndexFormContext:
    metric: MetricField
    curve: GeodesicPath
    bd: BoundaryData
    tol: Tolerances = DEFAULT

    def __post_init__(self):
        if self.bd.tangent_frame.shape[0] != self.metric.dim or self.curve.dim != self.metric.dim:
            raise InvalidArgument("boundary data, curve and metric dimensions differ")
        if (len(self.curve) - 1) % 2:
            raise InvalidArgument("Simpson quadrature needs an even number of grid steps")

    @property
    def grid(self) -> np.ndarray:
        return self.curve.times


def _check_admissible(ctx: IndexFormContext, E: FieldAlongCurve, name: str) -> np.ndarray:
    if E.curve.times.shape != ctx.grid.shape or np.max(np.abs(E.curve.times - ctx.grid)) > 1e-12:
        raise InvalidField(f"{name} is sampled on a different grid")
    vals = E.values
    scale = max(1.0, float(np.max(np.linalg.norm(vals, axis=1))))
    tol = ctx.tol.fd_tol
    if np.linalg.norm(vals[-1]) > tol * scale:
        raise InvalidField(f"{name}(b) is not zero")
    t = ctx.bd.tangent_frame
    if t.shape[1] == 0:
        if np.linalg.norm(vals[0]) > tol * scale:
            raise InvalidField(f"{name}(a) is not zero (point submanifold)")
        return np.zeros(0)
    coeff, *_ = np.linalg.lstsq(t, vals[0], rcond=None)
    if np.linalg.norm(t @ coeff - vals[0]) > tol * scale:
        raise InvalidField(f"{name}(a) is not tangent to the submanifold")
    return coeff


def index_form(ctx: IndexFormContext, E: FieldAlongCurve, F: FieldAlongCurve) -> float:
    """``int [g(DE, DF) - g(R E, F)] dt + g(S(E(a), gamma'(a)), F(a))``.

    ``R E = R(E, gamma') gamma'`` is the Jacobi curvature operator, so the integrand
    equals ``g(DE, DF) + g(R(gamma', E) gamma', F)``.  Composite Simpson on the grid.
    """
    ce = _check_admissible(ctx, E, "E")
    cf = _check_admissible(ctx, F, "F")
    metric, curve = ctx.metric, ctx.curve
    de = E.covariant_derivative(metric)
    df = F.covariant_derivative(metric)
    g = metric.eval(curve.points) if metric.batched else np.stack([metric.eval(x) for x in curve.points])
    r = _curvature_many(metric, curve.points, curve.velocities)
    re = np.einsum("nij,nj->ni", r, E.values)
    integrand = np.einsum("ni,nij,nj->n", de, g, df) - np.einsum("ni,nij,nj->n", re, g, F.values)
    boundary = float(ce @ ctx.bd.shape.entries @ cf) if ce.size else 0.0
    return float(simpson(integrand, x=curve.times)) + boundary


@dataclass(frozen=True)
class IndexIdentity:
    lhs: float          # I_{gamma, Q}(E, F)
    base: float         # I_{x, P}(E_*, F_*)
    correction: float   # int g(D(E), D(F)) dt
    residual: float


def verify_index_identity(spec: SubmersionSpec, gamma: GeodesicPath, Pdata: SubmanifoldData,
                          E: FieldAlongCurve, F: FieldAlongCurve, tol: Tolerances = DEFAULT,
                          base_curve: Optional[GeodesicPath] = None) -> IndexIdentity:
    """Compare ``I_{gamma,Q}(E, F)`` with ``I_{x,P}(E_*, F_*) + int g(D(E), D(F)) dt``."""
    q, z = gamma.points[0], gamma.velocities[0]
    frame_q, shape_q = lifted_boundary_shape(spec, Pdata, q, z)
    bd_q = BoundaryData(frame_q, SymmetricForm(shape_q))
    lhs = index_form(IndexFormContext(spec.total, gamma, bd_q, tol), E, F)
    base = base_curve or project_curve(spec, gamma)
    bd_p = BoundaryData.from_submanifold(Pdata, base.velocities[0])
    es = project_field(spec, gamma, E, base)
    fs = project_field(spec, gamma, F, base)
    rhs_base = index_form(IndexFormContext(spec.base, base, bd_p, tol), es, fs)
    jt = jets(spec, gamma.points)
    de = derived_field(spec, gamma, E, jt).values
    df = derived_field(spec, gamma, F, jt).values
    g = jt.g
    corr = float(simpson(np.einsum("ni,nij,nj->n", de, g, df), x=gamma.times))
    return IndexIdentity(lhs, rhs_base, corr, abs(lhs - rhs_base - corr))
