"""Semi-Riemannian submersions on coordinate patches.

Vertical/horizontal projectors, the O'Neill tensors T and A, horizontal lifts
of curves and fields, the derived field ``D(E)`` along horizontal geodesics
and the second fundamental form of total lifts ``Q = pi^{-1}(P)``.

The tensors are evaluated from projector fields: a vector ``f`` at ``p`` is
extended by constant coordinates, so for instance
``nabla_X (V F) = dV[X] f + Gamma(X, V f)`` with ``dV[X] = sum_k X^k d_k V``.
The directional derivatives ``d_k V`` use central differences (step 1e-5).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

from ._util import fd_derivative, hermite, lambdify_array
from .errors import IncompatibleSeed, InvalidArgument, PatchExit, ResolutionError, SubmersionError
from .geometry import (
    FieldAlongCurve,
    GeodesicPath,
    MetricField,
    _christoffel_many,
    christoffel,
)


@dataclass(frozen=True)
class SubmersionSpec:
    total: MetricField
    base: MetricField
    proj: Callable[[np.ndarray], np.ndarray]
    dproj: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batched: bool = False
    name: str = ""
    jet_step: float = 1e-5
    dproj_step: float = 1e-6
    tol: float = 1e-8
    symbolic: Optional[dict] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_sympy(cls, total: MetricField, base: MetricField, proj_exprs, name: str = "",
                   extra: Optional[dict] = None):
        """``total`` and ``base`` must come from :meth:`MetricField.from_sympy`."""
        if total.symbolic is None or base.symbolic is None:
            raise InvalidArgument("symbolic metrics required")
        coords = list(total.symbolic[1])
        exprs = [sp.sympify(e) for e in proj_exprs]
        if len(exprs) != base.dim:
            raise InvalidArgument("projection has the wrong number of components")
        jac = [[sp.diff(e, c) for c in coords] for e in exprs]
        sym = {"proj": exprs, "coords": coords}
        if extra:
            sym.update(extra)
        return cls(
            total=total,
            base=base,
            proj=lambdify_array(exprs, coords, (base.dim,)),
            dproj=lambdify_array(jac, coords, (base.dim, total.dim)),
            batched=True,
            name=name,
            symbolic=sym,
        )

    @property
    def n(self) -> int:
        return self.total.dim

    @property
    def m(self) -> int:
        return self.base.dim

    def project(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1 or self.batched:
            return np.asarray(self.proj(p), dtype=float)
        return np.stack([np.asarray(self.proj(q), dtype=float) for q in p])

    def differential(self, p):
        p = np.asarray(p, dtype=float)
        if self.dproj is not None:
            if p.ndim == 1 or self.batched:
                return np.asarray(self.dproj(p), dtype=float)
            return np.stack([np.asarray(self.dproj(q), dtype=float) for q in p])
        # forward differences of the projection
        base = self.project(p)
        cols = []
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = self.dproj_step
            cols.append((self.project(p + e) - base) / self.dproj_step)
        return np.stack(cols, axis=-1)

    def check_point(self, p) -> dict:
        """Residuals of the submersion axioms at ``p``; raises if one fails."""
        p = np.asarray(p, dtype=float)
        g = self.total.check_point(p)
        d = self.differential(p)
        s = np.linalg.svd(d, compute_uv=False)
        if s[-1] <= self.tol * max(1.0, s[0]):
            raise SubmersionError(f"d(pi) is not of maximal rank at {p.tolist()}")
        ker = np.linalg.svd(d)[2][self.m:].T
        fiber = ker.T @ g @ ker
        lam = np.linalg.eigvalsh(fiber)
        if np.min(np.abs(lam)) <= self.tol * max(1.0, np.max(np.abs(lam))):
            raise SubmersionError(f"degenerate fiber at {p.tolist()}")
        h = self.base.eval(self.project(p))
        iso = float(np.max(np.abs(np.linalg.inv(d @ np.linalg.solve(g, d.T)) - h)))
        if iso > 1e-6 * max(1.0, np.abs(h).max()):
            raise SubmersionError(f"d(pi) is not an isometry on horizontals at {p.tolist()} ({iso:.2e})")
        return {"rank": int(np.sum(s > self.tol * s[0])), "fiber_eigs": lam, "isometry": iso}


# ---------------------------------------------------------------------------
# pointwise structure


def _projector_parts(spec, p):
    ginv = spec.total.inverse(p)
    d = spec.differential(p)
    dt = np.swapaxes(d, -1, -2)
    lift = ginv @ dt @ np.linalg.inv(d @ ginv @ dt)
    hor = lift @ d
    ver = np.eye(spec.n) - hor
    return ver, hor, lift


def projectors(spec: SubmersionSpec, p):
    """``(V, H)`` with ``H = g^-1 dpi^T (dpi g^-1 dpi^T)^-1 dpi``, ``V = I - H``."""
    ver, hor, _ = _projector_parts(spec, p)
    return ver, hor


def horizontal_lift(spec: SubmersionSpec, p, u):
    """Horizontal vector at ``p`` projecting to the base vector ``u``."""
    _, _, lift = _projector_parts(spec, p)
    return np.einsum("...ij,...j->...i", lift, u)


@dataclass(frozen=True)
class Jets:
    """Pointwise data needed by T, A and the derived field (batched over points)."""

    points: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    ver: np.ndarray
    hor: np.ndarray
    lift: np.ndarray
    dver: np.ndarray  # dver[..., k, i, j] = d_k V_ij
    dproj: np.ndarray


def jets(spec: SubmersionSpec, points) -> Jets:
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n = spec.n
    ver, hor, lift = _many(spec, x)
    h = spec.jet_step * (1.0 + np.max(np.abs(x), axis=-1))
    shifted = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        shifted.append(x + h[:, None] * e)
        shifted.append(x - h[:, None] * e)
    vs, _, _ = _many(spec, np.concatenate(shifted))
    vs = vs.reshape(n, 2, x.shape[0], n, n)
    dver = (vs[:, 0] - vs[:, 1]) / (2 * h[None, :, None, None])
    dver = np.moveaxis(dver, 0, 1)
    g = spec.total.eval(x) if spec.total.batched else np.stack([spec.total.eval(q) for q in x])
    return Jets(x, g, _christoffel_many(spec.total, x), ver, hor, lift, dver, spec.differential(x))


def _many(spec, x):
    if spec.batched and spec.total.batched:
        return _projector_parts(spec, x)
    parts = [_projector_parts(spec, q) for q in x]
    return tuple(np.stack([pt[i] for pt in parts]) for i in range(3))


def _gam(jt, u, w):
    return np.einsum("...kij,...i,...j->...k", jt.gamma, u, w)


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def _oneill(jt: Jets, dir_, f):
    dv = np.einsum("...k,...kij->...ij", dir_, jt.dver)
    vf, hf = _mv(jt.ver, f), _mv(jt.hor, f)
    t1 = _mv(dv, f) + _gam(jt, dir_, vf)
    t2 = -_mv(dv, f) + _gam(jt, dir_, hf)
    return _mv(jt.hor, t1) + _mv(jt.ver, t2)


def tensor_T_jets(jt: Jets, e, f):
    return _oneill(jt, _mv(jt.ver, e), f)


def tensor_A_jets(jt: Jets, e, f):
    return _oneill(jt, _mv(jt.hor, e), f)


def tensor_T(spec: SubmersionSpec, p, e, f):
    """``T_e f = H nabla_{Ve}(V F) + V nabla_{Ve}(H F)``."""
    return tensor_T_jets(jets(spec, p), np.asarray(e, float), np.asarray(f, float))[0]


def tensor_A(spec: SubmersionSpec, p, e, f):
    """``A_e f = H nabla_{He}(V F) + V nabla_{He}(H F)``."""
    return tensor_A_jets(jets(spec, p), np.asarray(e, float), np.asarray(f, float))[0]


def second_fundamental_form_distribution(spec: SubmersionSpec, p, v, w, tol: float = 1e-8):
    """``S^D(v, w) = A_v w + T_v w`` for horizontal ``w``."""
    jt = jets(spec, p)
    w = np.asarray(w, float)
    if np.linalg.norm(_mv(jt.ver[0], w)) > tol * max(1.0, np.linalg.norm(w)):
        raise InvalidArgument("w is not horizontal")
    v = np.asarray(v, float)
    return (tensor_A_jets(jt, v, w) + tensor_T_jets(jt, v, w))[0]


# ---------------------------------------------------------------------------
# curves


def project_curve(spec: SubmersionSpec, curve: GeodesicPath) -> GeodesicPath:
    """``pi o curve`` with velocities ``dpi x'`` (accelerations by finite differences)."""
    pts = spec.project(curve.points)
    vel = np.einsum("nij,nj->ni", spec.differential(curve.points), curve.velocities)
    return GeodesicPath(curve.times, pts, vel, metric=spec.base)


def horizontal_lift_curve(spec: SubmersionSpec, base_curve: GeodesicPath, p0,
                          tol: float = 1e-8) -> GeodesicPath:
    """Horizontal lift through ``p0`` by RK4 for ``y' = Lift(y) x'(t)`` on the base grid.

    On patch exit the partial lift is returned with ``t_exit`` set.
    """
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(spec.project(p0) - base_curve.points[0]) > 1e-8 * (1.0 + np.linalg.norm(p0)):
        raise InvalidArgument("pi(p0) does not match the start of the base curve")
    ts = base_curve.times
    _, vm = base_curve.sample(0.5 * (ts[:-1] + ts[1:]))
    vg = base_curve.velocities
    ys = np.empty((ts.size, spec.n))
    ys[0] = p0
    t_exit = None

    def rate(y, u):
        return horizontal_lift(spec, y, u)

    last = ts.size - 1
    for k in range(ts.size - 1):
        h, y = ts[k + 1] - ts[k], ys[k]
        try:
            k1 = rate(y, vg[k])
            k2 = rate(y + 0.5 * h * k1, vm[k])
            k3 = rate(y + 0.5 * h * k2, vm[k])
            k4 = rate(y + h * k3, vg[k + 1])
        except Exception:  # noqa: BLE001 - degenerate structure means we left the patch
            last, t_exit = k, float(ts[k])
            break
        ynew = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not spec.total.inside(ynew):
            last, t_exit = k, float(ts[k])
            break
        ys[k + 1] = ynew
    if last < 1:
        raise PatchExit("horizontal lift leaves the patch immediately", t=float(ts[0]))
    ys = ys[: last + 1]
    vel = horizontal_lift(spec, ys, vg[: last + 1]) if spec.batched else \
        np.stack([horizontal_lift(spec, y, u) for y, u in zip(ys, vg[: last + 1])])
    return GeodesicPath(ts[: last + 1], ys, vel, t_exit=t_exit)


@dataclass(frozen=True)
class LiftDiagnostics:
    max_vertical: float         # max |V x'| / |x'| along the curve
    base_residual: float        # max geodesic residual of pi o curve in the base
    projected: GeodesicPath


def lift_geodesic_check(spec: SubmersionSpec, curve: GeodesicPath) -> LiftDiagnostics:
    jt = jets(spec, curve.points)
    vert = np.linalg.norm(_mv(jt.ver, curve.velocities), axis=1)
    scale = np.maximum(np.linalg.norm(curve.velocities, axis=1), 1e-300)
    base = project_curve(spec, curve)
    acc = np.einsum("nij,nj->ni", spec.differential(curve.points), curve.accelerations)
    # second derivative of pi o curve: dpi x'' + d^2 pi (x', x')
    d2 = _proj_hessian(spec, curve.points, curve.velocities)
    base = GeodesicPath(base.times, base.points, base.velocities, acc + d2, metric=spec.base)
    gam = _christoffel_many(spec.base, base.points)
    res = base.accelerations + np.einsum("nkij,ni,nj->nk", gam, base.velocities, base.velocities)
    return LiftDiagnostics(float(np.max(vert / scale)), float(np.max(np.linalg.norm(res, axis=1))), base)


def _proj_hessian(spec, x, v):
    """``d^2 pi (v, v)`` by central differences of the differential along ``v``."""
    h = 1e-5
    return (np.einsum("nij,nj->ni", spec.differential(x + h * v), v)
            - np.einsum("nij,nj->ni", spec.differential(x - h * v), v)) / (2 * h)


# ---------------------------------------------------------------------------
# fields along horizontal geodesics


def _check_field_resolution(values):
    norms = np.linalg.norm(values, axis=1)
    big = np.maximum(norms[:-1], norms[1:])
    mask = big > 1e-8 * max(1.0, norms.max())
    if not np.any(mask):
        return
    a, b = values[:-1][mask], values[1:][mask]
    cos = np.einsum("ni,ni->n", a, b) / np.maximum(
        np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), 1e-300)
    small = (np.linalg.norm(a, axis=1) > 1e-3 * norms.max()) & (np.linalg.norm(b, axis=1) > 1e-3 * norms.max())
    if np.any(cos[small] < np.cos(np.pi / 4)):
        raise ResolutionError("field turns by more than pi/4 between samples; refine the grid")


def covariant_derivative(metric: MetricField, curve: GeodesicPath, values) -> np.ndarray:
    """``DE/dt = E' + Gamma(x', E)`` with ``E'`` by fourth-order differences."""
    ed = fd_derivative(values, curve.times)
    gam = _christoffel_many(metric, curve.points)
    return ed + np.einsum("nkij,ni,nj->nk", gam, curve.velocities, values)


def derived_field(spec: SubmersionSpec, gamma: GeodesicPath, E: FieldAlongCurve,
                  jt: Optional[Jets] = None) -> FieldAlongCurve:
    """``D(E) = V(DV/dt) - T_V(gamma') + 2 A_{gamma'}(H)``."""
    vals = E.values
    _check_field_resolution(vals)
    jt = jt or jets(spec, gamma.points)
    v = _mv(jt.ver, vals)
    hpart = _mv(jt.hor, vals)
    dv = covariant_derivative(spec.total, gamma, v)
    gd = gamma.velocities
    out = _mv(jt.ver, dv) - tensor_T_jets(jt, v, gd) + 2 * tensor_A_jets(jt, gd, hpart)
    return FieldAlongCurve(gamma, out)


def project_field(spec: SubmersionSpec, gamma: GeodesicPath, E: FieldAlongCurve,
                  base_curve: Optional[GeodesicPath] = None) -> FieldAlongCurve:
    """``E_* = dpi E`` along ``pi o gamma``."""
    base_curve = base_curve or project_curve(spec, gamma)
    vals = np.einsum("nij,nj->ni", spec.differential(gamma.points), E.values)
    return FieldAlongCurve(base_curve, vals)


def _field_interpolant(P: FieldAlongCurve, base_metric: Optional[MetricField]):
    ts = P.curve.times
    if P.derivatives is not None and base_metric is not None:
        gam = _christoffel_many(base_metric, P.curve.points)
        coord_der = P.derivatives - np.einsum("nkij,ni,nj->nk", gam, P.curve.velocities, P.values)

        def f(t):
            t = np.atleast_1d(t)
            k = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2)
            val, _ = hermite(ts[k][:, None], ts[k + 1][:, None], P.values[k], P.values[k + 1],
                             coord_der[k], coord_der[k + 1], t[:, None])
            return val
        return f
    spline = CubicSpline(ts, P.values, axis=0)
    return lambda t: spline(np.atleast_1d(t))


def lift_field_D_zero(spec: SubmersionSpec, gamma: GeodesicPath, P: FieldAlongCurve, z,
                      t0_index: int = 0, tol: float = 1e-7) -> FieldAlongCurve:
    """The unique ``E`` along ``gamma`` with ``E_* = P``, ``D(E) = 0``, ``E(t0) = z``.

    ``H = lift(P)`` and the vertical part solves the linear ODE
    ``V' = dV[gamma'] V + T_V(gamma') - 2 A_{gamma'}(H) - V Gamma(gamma', V)``.
    """
    z = np.asarray(z, dtype=float)
    ts = gamma.times
    n = spec.n
    jt = jets(spec, gamma.points)
    if np.linalg.norm(jt.dproj[t0_index] @ z - P.values[t0_index]) > tol * max(1.0, np.linalg.norm(z)):
        raise IncompatibleSeed("dpi(z) differs from P(t0)")
    mids = 0.5 * (ts[:-1] + ts[1:])
    xm, vm = gamma.sample(mids)
    jm = jets(spec, xm)
    interp = _field_interpolant(P, spec.base)
    pm = interp(mids)

    def system(j, vel, pvals):
        eye = np.broadcast_to(np.eye(n), j.ver.shape)
        dv = np.einsum("...k,...kij->...ij", vel, j.dver)
        tcols = np.stack([tensor_T_jets(j, eye[..., :, i], vel) for i in range(n)], axis=-1)
        gcols = np.einsum("...kij,...i->...kj", j.gamma, vel)
        mat = dv + tcols - j.ver @ gcols
        hvals = _mv(j.lift, pvals)
        force = -2 * tensor_A_jets(j, vel, hvals)
        return mat, force, hvals

    mg, fg, hg = system(jt, gamma.velocities, P.values)
    mm, fm, _ = system(jm, vm, pm)
    vs = np.empty((ts.size, n))
    vs[t0_index] = jt.ver[t0_index] @ z

    def step(k_from, k_to, mid_k):
        h = ts[k_to] - ts[k_from]
        y = vs[k_from]
        k1 = mg[k_from] @ y + fg[k_from]
        k2 = mm[mid_k] @ (y + 0.5 * h * k1) + fm[mid_k]
        k3 = mm[mid_k] @ (y + 0.5 * h * k2) + fm[mid_k]
        k4 = mg[k_to] @ (y + h * k3) + fg[k_to]
        vs[k_to] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    for k in range(t0_index, ts.size - 1):
        step(k, k + 1, k)
    for k in range(t0_index, 0, -1):
        step(k, k - 1, k - 1)
    return FieldAlongCurve(gamma, hg + vs)


def base_covariant_derivative_lifted(spec: SubmersionSpec, gamma: GeodesicPath, E: FieldAlongCurve,
                                     jt: Optional[Jets] = None) -> np.ndarray:
    """Horizontal lift to ``gamma`` of ``D E_*/dt`` computed in the base."""
    jt = jt or jets(spec, gamma.points)
    base = project_curve(spec, gamma)
    estar = np.einsum("nij,nj->ni", jt.dproj, E.values)
    dstar = covariant_derivative(spec.base, base, estar)
    return _mv(jt.lift, dstar)


# ---------------------------------------------------------------------------
# submanifolds


@dataclass(frozen=True)
class SubmanifoldData:
    """Tangent frame (columns, manifold coordinates) of a submanifold at ``point``.

    ``shape[i, j] = g(S(tau_i, normal), tau_j)`` where ``S(v, w) = (nabla_v W)^t`` for an
    orthogonal extension ``W`` of the normal vector ``normal``.
    """

    point: np.ndarray
    tangent_frame: np.ndarray
    normal: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tangent_frame, dtype=float)
        if t.ndim == 1:
            t = t.reshape(-1, 0) if t.size == 0 else t[:, None]
        object.__setattr__(self, "tangent_frame", t)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        s = np.asarray(self.shape, dtype=float).reshape(t.shape[1], t.shape[1])
        object.__setattr__(self, "shape", 0.5 * (s + s.T))

    @property
    def codim_free_dim(self) -> int:
        return self.tangent_frame.shape[1]

    @classmethod
    def point_submanifold(cls, point, normal) -> "SubmanifoldData":
        point = np.asarray(point, dtype=float)
        return cls(point, np.zeros((point.size, 0)), normal, np.zeros((0, 0)))

    def shape_vectors(self, metric: MetricField) -> np.ndarray:
        """Columns ``S(tau_i, normal)`` expressed in manifold coordinates."""
        t = self.tangent_frame
        if t.shape[1] == 0:
            return t
        gt = t.T @ metric.eval(self.point) @ t
        return t @ np.linalg.solve(gt, self.shape)

    def tangent_projection(self, metric: MetricField, w) -> np.ndarray:
        t = self.tangent_frame
        if t.shape[1] == 0:
            return np.zeros_like(np.asarray(w, dtype=float))
        g = metric.eval(self.point)
        return t @ np.linalg.solve(t.T @ g @ t, t.T @ g @ np.asarray(w, dtype=float))


def _tangent_projector(g, frame):
    if frame.shape[1] == 0:
        return np.zeros((g.shape[0], g.shape[0]))
    return frame @ np.linalg.solve(frame.T @ g @ frame, frame.T @ g)


def total_lift_tangent_frame(spec: SubmersionSpec, q, Pdata: SubmanifoldData) -> np.ndarray:
    """Basis of ``T_q Q``: vertical basis followed by horizontal lifts of ``T P``."""
    ver, _, lift = _projector_parts(spec, np.asarray(q, float))
    u, s, _ = np.linalg.svd(ver)
    vbasis = u[:, : spec.n - spec.m]
    return np.hstack([vbasis, lift @ Pdata.tangent_frame])


def second_fundamental_form_lift(spec: SubmersionSpec, Pdata: SubmanifoldData, q, v, z,
                                 tol: float = 1e-8) -> np.ndarray:
    """``S^Q(v, z)`` for ``Q = pi^{-1}(P)``, ``v`` tangent to Q and ``z`` horizontal normal.

    ``S^Q(V + X, z) = T_V z + A_z(V)^t + A_X z + lift(S^P(X_*, z_*))``.
    """
    q = np.asarray(q, float)
    v = np.asarray(v, float)
    z = np.asarray(z, float)
    jt = jets(spec, q)
    g = jt.g[0]
    frame = total_lift_tangent_frame(spec, q, Pdata)
    if np.linalg.norm(frame.T @ g @ z) > tol * max(1.0, np.linalg.norm(z)) * max(1.0, np.abs(frame).max()):
        raise InvalidArgument("z is not normal to Q")
    if np.linalg.norm(jt.ver[0] @ z) > tol * max(1.0, np.linalg.norm(z)):
        raise InvalidArgument("z is not horizontal")
    zb = jt.dproj[0] @ z
    nb = Pdata.normal
    scale = float(zb @ nb) / float(nb @ nb) if np.linalg.norm(nb) > 0 else 0.0
    if np.linalg.norm(zb - scale * nb) > 1e-6 * max(1.0, np.linalg.norm(zb)):
        raise InvalidArgument("dpi(z) is not along the normal carried by the base data")
    vv = jt.ver[0] @ v
    xh = jt.hor[0] @ v
    proj_t = _tangent_projector(g, frame)
    out = tensor_T_jets(jt, vv, z)[0] + proj_t @ tensor_A_jets(jt, z, vv)[0] + tensor_A_jets(jt, xh, z)[0]
    # base second fundamental form on X_* (coordinates in the tangent frame of P)
    tp = Pdata.tangent_frame
    if tp.shape[1]:
        xs = jt.dproj[0] @ xh
        coeff = np.linalg.lstsq(tp, xs, rcond=None)[0]
        sb = Pdata.shape_vectors(spec.base) @ coeff * scale
        out = out + jt.lift[0] @ sb
    return out


def lifted_boundary_shape(spec: SubmersionSpec, Pdata: SubmanifoldData, q, z):
    """Tangent frame of Q at q and the bilinear form ``g(S^Q(tau_i, z), tau_j)``."""
    frame = total_lift_tangent_frame(spec, q, Pdata)
    g = spec.total.eval(np.asarray(q, float))
    cols = [second_fundamental_form_lift(spec, Pdata, q, frame[:, i], z) for i in range(frame.shape[1])]
    s = np.column_stack(cols) if cols else np.zeros((spec.n, 0))
    return frame, s.T @ g @ frame
