"""Semi-Riemannian metrics on a single coordinate patch.

Christoffel symbols, the Jacobi curvature operator, geodesics, frame fields
along curves and the linear symplectic system governing Jacobi fields.

Index conventions: ``dg[k, i, j] = d_k g_ij``, ``ddg[k, l, i, j] = d_k d_l g_ij``,
``gamma[k, i, j] = Gamma^k_ij``, and ``riemann[l, a, b, c]`` is the component of
``R(d_a, d_b) d_c`` along ``d_l`` with ``R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp
from scipy.linalg import expm

from ._util import fd_derivative, hermite, lambdify_array, locate
from .errors import (
    DegenerateMetric,
    IntegrationFailure,
    InvalidArgument,
    InvalidFrame,
    PatchExit,
    StiffnessFailure,
)
from .symplectic import canonical_omega
from .tolerances import DEFAULT, Tolerances


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricField:
    """A metric ``g(x)`` on a coordinate patch.

    ``dg`` and ``ddg`` are optional analytic derivative callbacks; without them
    central finite differences are used (step ``fd_step * (1 + |x|)`` for first
    derivatives, ``curv_step * (1 + |x|)`` for the second).  ``batched`` means the
    callbacks accept leading batch axes.
    """

    dim: int
    index: int
    g: Callable[[np.ndarray], np.ndarray]
    dg: Optional[Callable] = None
    ddg: Optional[Callable] = None
    domain: Optional[Callable[[np.ndarray], bool]] = None
    batched: bool = False
    fd_step: float = 1e-5
    curv_step: float = 1e-4
    tol: float = 1e-8
    name: str = ""
    symbolic: Optional[tuple] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_sympy(cls, matrix, coords, index: int, domain=None, name: str = "") -> "MetricField":
        """Build from a symbolic matrix; first and second derivatives are exact."""
        mat = sp.Matrix(matrix)
        coords = list(coords)
        n = len(coords)
        if mat.shape != (n, n):
            raise InvalidArgument(f"metric matrix shape {mat.shape} does not match {n} coordinates")
        if mat != mat.T:
            raise InvalidArgument("metric matrix is not symmetric")
        d1 = [[[sp.diff(mat[i, j], coords[k]) for j in range(n)] for i in range(n)] for k in range(n)]
        d2 = [[[[sp.diff(d1[k][i][j], coords[l]) for j in range(n)] for i in range(n)]
               for l in range(n)] for k in range(n)]
        return cls(
            dim=n,
            index=index,
            g=lambdify_array(mat.tolist(), coords, (n, n)),
            dg=lambdify_array(d1, coords, (n, n, n)),
            ddg=lambdify_array(d2, coords, (n, n, n, n)),
            domain=domain,
            batched=True,
            name=name,
            symbolic=(mat, tuple(coords)),
        )

    # -- evaluation -------------------------------------------------------

    def inside(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        return True if self.domain is None else bool(self.domain(x))

    def _map(self, fn, x, out_ndim):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 or self.batched:
            return np.asarray(fn(x), dtype=float)
        flat = x.reshape(-1, x.shape[-1])
        vals = np.stack([np.asarray(fn(p), dtype=float) for p in flat])
        return vals.reshape(x.shape[:-1] + vals.shape[1:])

    def eval(self, x) -> np.ndarray:
        return self._map(self.g, x, 2)

    def derivative(self, x) -> np.ndarray:
        if self.dg is not None:
            return self._map(self.dg, x, 3)
        return self._fd(self.eval, x, self.fd_step)

    def second_derivative(self, x) -> np.ndarray:
        if self.ddg is not None:
            return self._map(self.ddg, x, 4)
        if self.dg is not None:
            return self._fd(self.derivative, x, self.fd_step)
        return self._fd(lambda y: self._fd(self.eval, y, self.curv_step), x, self.curv_step)

    def _fd(self, fn, x, step):
        x = np.asarray(x, dtype=float)
        h = step * (1.0 + np.max(np.abs(x), axis=-1, keepdims=True))
        out = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            diff = fn(x + h * e) - fn(x - h * e)
            hh = h.reshape(h.shape[:-1] + (1,) * (diff.ndim - x.ndim + 1))
            out.append(diff / (2 * hh))
        return np.stack(out, axis=x.ndim - 1)

    def check_point(self, x) -> np.ndarray:
        """Evaluate and validate symmetry, non-degeneracy and index at one point."""
        g = self.eval(x)
        if not np.allclose(g, g.T, atol=self.tol * max(1.0, np.abs(g).max())):
            raise DegenerateMetric(f"metric not symmetric at {x}")
        lam = np.linalg.eigvalsh(g)
        if np.min(np.abs(lam)) <= self.tol * max(1.0, np.max(np.abs(lam))):
            raise DegenerateMetric(f"metric degenerate at {x}")
        nu = int(np.sum(lam < 0))
        if nu != self.index:
            raise DegenerateMetric(f"metric index {nu} at {x}, expected {self.index}")
        return g

    def inverse(self, x) -> np.ndarray:
        g = self.eval(x)
        try:
            ginv = np.linalg.inv(g)
        except np.linalg.LinAlgError:
            raise DegenerateMetric(f"metric singular at {np.asarray(x).tolist()}") from None
        # |g| |g^-1| bounds the condition number from below
        cond = np.abs(g).max() * np.abs(ginv).max()
        if not np.isfinite(cond) or cond * self.tol > 1.0:
            raise DegenerateMetric(f"metric degenerate at {np.asarray(x).tolist()}")
        return ginv

    def inner(self, x, u, w) -> float:
        return np.einsum("...i,...ij,...j->...", u, self.eval(x), w)


def christoffel(metric: MetricField, x) -> np.ndarray:
    """``Gamma^k_ij`` at ``x`` (batched over leading axes of ``x``)."""
    ginv = metric.inverse(x)
    dg = metric.derivative(x)
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.einsum("...jli->...lij", dg) - dg)
    # low[l, i, j] = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
    return np.einsum("...kl,...lij->...kij", ginv, low)


def _christoffel_and_derivative(metric: MetricField, x):
    ginv = metric.inverse(x)
    dg = metric.derivative(x)
    ddg = metric.second_derivative(x)
    low = 0.5 * (np.swapaxes(dg, -3, -2) + np.einsum("...jli->...lij", dg) - dg)
    gam = np.einsum("...kl,...lij->...kij", ginv, low)
    # d_a low[l, i, j] = 1/2 (d_a d_i g_lj + d_a d_j g_li - d_a d_l g_ij)
    dlow = 0.5 * (np.einsum("...ailj->...alij", ddg) + np.einsum("...ajli->...alij", ddg)
                  - ddg)
    dginv = -np.einsum("...km,...amn,...nl->...akl", ginv, dg, ginv)
    dgam = np.einsum("...akl,...lij->...akij", dginv, low) + np.einsum("...kl,...alij->...akij", ginv, dlow)
    return gam, dgam


def riemann(metric: MetricField, x) -> np.ndarray:
    """``R^l_abc`` with ``R(d_a, d_b) d_c = R^l_abc d_l``."""
    gam, dgam = _christoffel_and_derivative(metric, x)
    r = (np.einsum("...albc->...labc", dgam) - np.einsum("...blac->...labc", dgam)
         + np.einsum("...lam,...mbc->...labc", gam, gam)
         - np.einsum("...lbm,...mac->...labc", gam, gam))
    return r


def curvature_operator(metric: MetricField, x, v) -> np.ndarray:
    """Jacobi operator ``w -> R(w, v) v`` as a matrix (Jacobi equation ``J'' + R J = 0``)."""
    return np.einsum("...labc,...b,...c->...la", riemann(metric, x), v, v)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class GeodesicPath:
    """Sampled curve ``(t_i, x_i, x'_i)``.

    Positions are interpolated by cubic Hermite on ``(x, x')``; velocities by
    cubic Hermite on ``(x', x'')``.  ``metric`` is set when the samples come from
    the geodesic equation (then ``accelerations = -Gamma(x', x')``).
    """

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    accelerations: Optional[np.ndarray] = None
    metric: Optional[MetricField] = field(default=None, compare=False, repr=False)
    t_exit: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise InvalidArgument("curve grid must be strictly increasing with >= 2 samples")
        x = np.asarray(self.points, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if x.shape != v.shape or x.shape[0] != t.size:
            raise InvalidArgument("points/velocities do not match the grid")
        a = self.accelerations
        if a is None:
            a = fd_derivative(v, t)
        a = np.asarray(a, dtype=float)
        for arr in (t, x, v, a):
            arr.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "accelerations", a)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def a(self) -> float:
        return float(self.times[0])

    @property
    def b(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def at(self, t: float):
        """Interpolated ``(x(t), x'(t))``."""
        ts = self.times
        k = locate(ts, t)
        x, _ = hermite(ts[k], ts[k + 1], self.points[k], self.points[k + 1],
                       self.velocities[k], self.velocities[k + 1], t)
        v, _ = hermite(ts[k], ts[k + 1], self.velocities[k], self.velocities[k + 1],
                       self.accelerations[k], self.accelerations[k + 1], t)
        return x, v

    def sample(self, ts):
        """Vectorized :meth:`at` for an array of instants."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[k][:, None], self.times[k + 1][:, None]
        tt = ts[:, None]
        x, _ = hermite(t0, t1, self.points[k], self.points[k + 1],
                       self.velocities[k], self.velocities[k + 1], tt)
        v, _ = hermite(t0, t1, self.velocities[k], self.velocities[k + 1],
                       self.accelerations[k], self.accelerations[k + 1], tt)
        return x, v

    def midpoint_residuals(self, metric: Optional[MetricField] = None) -> np.ndarray:
        """``|x'' + Gamma(x', x')|`` at grid midpoints from the velocity interpolant."""
        metric = metric or self.metric
        t, x, v, acc = self.times, self.points, self.velocities, self.accelerations
        h = np.diff(t)[:, None]
        xm = 0.5 * (x[:-1] + x[1:]) + h * (v[:-1] - v[1:]) / 8
        vm = 0.5 * (v[:-1] + v[1:]) + h * (acc[:-1] - acc[1:]) / 8
        am = 1.5 * (v[1:] - v[:-1]) / h - 0.25 * (acc[:-1] + acc[1:])
        gam = christoffel(metric, xm) if metric.batched else np.stack([christoffel(metric, p) for p in xm])
        res = am + np.einsum("nkij,ni,nj->nk", gam, vm, vm)
        return np.linalg.norm(res, axis=1)

    def energy(self, metric: Optional[MetricField] = None) -> np.ndarray:
        """``g(x', x')`` at every sample."""
        metric = metric or self.metric
        return np.array([metric.inner(p, u, u) for p, u in zip(self.points, self.velocities)])


def _geodesic_rhs(metric, y):
    n = metric.dim
    x, v = y[:n], y[n:]
    gam = christoffel(metric, x)
    return np.concatenate([v, -np.einsum("kij,i,j->k", gam, v, v)])


def _rk4_geodesic(metric, y0, t0, t1, steps, strict=True):
    """Fixed-step RK4; returns (times, states) truncated at the last good step on patch exit."""
    n = metric.dim
    ts = np.linspace(t0, t1, steps + 1)
    h = (t1 - t0) / steps
    ys = np.empty((steps + 1, 2 * n))
    ys[0] = y0
    for k in range(steps):
        y = ys[k]
        try:
            k1 = _geodesic_rhs(metric, y)
            k2 = _geodesic_rhs(metric, y + 0.5 * h * k1)
            k3 = _geodesic_rhs(metric, y + 0.5 * h * k2)
            k4 = _geodesic_rhs(metric, y + h * k3)
        except DegenerateMetric as exc:
            raise PatchExit(f"metric degenerates after t={ts[k]:.6g}", t=float(ts[k])) from exc
        ynew = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(ynew)) or not metric.inside(ynew[:n]):
            return ts[: k + 1], ys[: k + 1], float(ts[k])
        ys[k + 1] = ynew
    return ts, ys, None


def integrate_geodesic(
    metric: MetricField,
    x0,
    v0,
    interval,
    steps: int,
    tol: Tolerances = DEFAULT,
    richardson: bool = True,
    allow_partial: bool = False,
) -> GeodesicPath:
    """Geodesic with initial data ``(x0, v0)`` on ``interval`` by fixed-step RK4.

    A second integration with half as many steps gives a Richardson estimate of
    the global error at the end point; if it exceeds ``resid_tol`` a
    :class:`StiffnessFailure` is raised.  Leaving the
    patch raises :class:`PatchExit` unless ``allow_partial`` (then the truncated
    path is returned with ``t_exit`` set).
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if x0.shape != (metric.dim,) or v0.shape != (metric.dim,):
        raise InvalidArgument("initial point/velocity have the wrong dimension")
    if not metric.inside(x0):
        raise PatchExit("initial point outside the patch", t=float(interval[0]))
    metric.check_point(x0)
    a, b = map(float, interval)
    y0 = np.concatenate([x0, v0])
    ts, ys, t_exit = _rk4_geodesic(metric, y0, a, b, steps)
    if t_exit is not None and not allow_partial:
        raise PatchExit(f"geodesic leaves the coordinate patch after t={t_exit:.6g}", t=t_exit)
    if ts.size < 2:
        raise PatchExit("geodesic leaves the patch immediately", t=a)
    n = metric.dim
    if richardson and t_exit is None and steps >= 8:
        _, ys2, exit2 = _rk4_geodesic(metric, y0, a, b, steps // 2)
        if exit2 is None and steps % 2 == 0:
            err = np.linalg.norm(ys2[-1] - ys[-1]) / 15.0
            if err > tol.resid_tol * (1.0 + np.linalg.norm(ys[-1])):
                raise StiffnessFailure(
                    f"step-doubling error estimate {err:.3e} exceeds {tol.resid_tol:.1e}; "
                    f"increase steps (currently {steps})",
                )
    xs, vs = ys[:, :n], ys[:, n:]
    gam = christoffel(metric, xs) if metric.batched else np.stack([christoffel(metric, p) for p in xs])
    acc = -np.einsum("nkij,ni,nj->nk", gam, vs, vs)
    path = GeodesicPath(ts, xs, vs, acc, metric=metric, t_exit=t_exit)
    e = path.energy()
    drift = float(np.max(np.abs(e - e[0])))
    if drift > tol.conservation_tol * max(1.0, abs(e[0])):
        raise IntegrationFailure(f"g(x', x') drifts by {drift:.3e}; increase steps")
    return path


# ---------------------------------------------------------------------------
# frames along curves


@dataclass(frozen=True)
class FrameField:
    """Frames ``p(t_i)`` (columns = images of the standard basis) along a curve.

    ``rates`` holds ``p'(t_i)``; ``func`` optionally gives exact ``(p, p')`` at
    any ``t``, otherwise cubic Hermite interpolation on ``(p, p')`` is used.
    """

    curve: GeodesicPath
    frames: np.ndarray
    rates: np.ndarray
    func: Optional[Callable] = field(default=None, compare=False, repr=False)
    tol: float = 1e-10

    def __post_init__(self):
        p = np.asarray(self.frames, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        n = self.curve.dim
        if p.shape != (len(self.curve), n, n) or r.shape != p.shape:
            raise InvalidFrame(f"frames must have shape {(len(self.curve), n, n)}")
        dets = np.abs(np.linalg.det(p))
        scale = np.max(np.abs(p), axis=(1, 2)) ** n
        if np.any(dets <= self.tol * scale):
            k = int(np.argmin(dets / scale))
            raise InvalidFrame(f"singular frame at t={self.curve.times[k]:.6g}")
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "frames", p)
        object.__setattr__(self, "rates", r)

    def at(self, t: float):
        if self.func is not None:
            return self.func(t)
        ts = self.curve.times
        k = locate(ts, t)
        return hermite(ts[k], ts[k + 1], self.frames[k], self.frames[k + 1],
                       self.rates[k], self.rates[k + 1], t)

    def sample(self, ts):
        """``(p, p')`` at an array of instants."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.func is not None:
            vals = [self.func(t) for t in ts]
            return np.stack([a for a, _ in vals]), np.stack([b for _, b in vals])
        k = np.clip(np.searchsorted(self.curve.times, ts, side="right") - 1, 0, self.curve.times.size - 2)
        t0 = self.curve.times[k][:, None, None]
        t1 = self.curve.times[k + 1][:, None, None]
        return hermite(t0, t1, self.frames[k], self.frames[k + 1],
                       self.rates[k], self.rates[k + 1], ts[:, None, None])

    def times_matrix(self, m: np.ndarray) -> "FrameField":
        """Frame ``q = p K`` for a constant invertible ``K``."""
        return FrameField(self.curve, self.frames @ m, self.rates @ m,
                          None if self.func is None else _compose_const(self.func, m))


def _compose_const(func, m):
    def f(t):
        p, r = func(t)
        return p @ m, r @ m
    return f


def _gamma_of(metric, x, v):
    """Matrix ``Gamma(v)[k, j] = Gamma^k_ij v^i`` (batched)."""
    return np.einsum("...kij,...i->...kj", _christoffel_many(metric, x), v)


def _christoffel_many(metric, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 or metric.batched:
        return christoffel(metric, x)
    return np.stack([christoffel(metric, p) for p in x])


def _curvature_many(metric, x, v):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 or metric.batched:
        return curvature_operator(metric, x, v)
    return np.stack([curvature_operator(metric, p, u) for p, u in zip(x, v)])


def _grid_and_mid(curve):
    """Points/velocities on the grid and at step midpoints."""
    ts = curve.times
    xm, vm = curve.sample(0.5 * (ts[:-1] + ts[1:]))
    return (curve.points, curve.velocities), (xm, vm)


def _rk4_linear(mats_grid, mats_mid, times, y0):
    """RK4 for ``y' = M(t) y`` with M given on the grid and at midpoints."""
    ys = np.empty((times.size,) + np.shape(y0))
    ys[0] = y0
    for k in range(times.size - 1):
        h, y = times[k + 1] - times[k], ys[k]
        m0, mm, m1 = mats_grid[k], mats_mid[k], mats_grid[k + 1]
        k1 = m0 @ y
        k2 = mm @ (y + 0.5 * h * k1)
        k3 = mm @ (y + 0.5 * h * k2)
        k4 = m1 @ (y + h * k3)
        ys[k + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ys


def parallel_transport_frame(metric: MetricField, curve: GeodesicPath, p_a) -> FrameField:
    """Solve ``p' = -Gamma(x') p`` by RK4 on the curve grid."""
    p_a = np.asarray(p_a, dtype=float)
    n = metric.dim
    if p_a.shape != (n, n):
        raise InvalidFrame(f"initial frame must be {n}x{n}")
    if abs(np.linalg.det(p_a)) <= 1e-12 * max(1.0, np.abs(p_a).max()) ** n:
        raise InvalidFrame("initial frame is singular")
    (xg, vg), (xm, vm) = _grid_and_mid(curve)
    gam = _gamma_of(metric, xg, vg)
    ps = _rk4_linear(-gam, -_gamma_of(metric, xm, vm), curve.times, p_a)
    return FrameField(curve, ps, -gam @ ps)


def coordinate_frame(curve: GeodesicPath) -> FrameField:
    n = curve.dim
    eye = np.broadcast_to(np.eye(n), (len(curve), n, n)).copy()
    return FrameField(curve, eye, np.zeros_like(eye), func=lambda t: (np.eye(n), np.zeros((n, n))))


def orthonormal_basis(metric: MetricField, x) -> np.ndarray:
    """Columns ``e_i`` with ``g(e_i, e_j) = diag(-1..., +1...)``."""
    g = metric.check_point(x)
    lam, q = np.linalg.eigh(g)
    return q / np.sqrt(np.abs(lam))


def modulated_frame(base: FrameField, k_func: Callable) -> FrameField:
    """Frame ``q(t) = p(t) K(t)`` for ``k_func(t) -> (K, K')``."""
    ts = base.curve.times
    ks = [k_func(t) for t in ts]
    kk = np.stack([k for k, _ in ks])
    kd = np.stack([d for _, d in ks])
    frames = base.frames @ kk
    rates = base.rates @ kk + base.frames @ kd

    def func(t):
        p, pd = base.at(t)
        k, d = k_func(t)
        return p @ k, pd @ k + p @ d

    return FrameField(base.curve, frames, rates, func=func)


def rotating_frame(metric: MetricField, base: FrameField, generator) -> FrameField:
    """``p(t) expm(t A)`` where ``A`` is skew for ``p(a)^T g p(a)`` (stays orthonormal
    when ``base`` is parallel and orthonormal).

    Entries of the generator coupling directions of opposite causal character are
    dropped, so ``A`` generates rotations only (boosts would grow exponentially).
    """
    eta = base.frames[0].T @ metric.eval(base.curve.points[0]) @ base.frames[0]
    gen = np.asarray(generator, dtype=float)
    skew = 0.5 * (eta @ gen - (eta @ gen).T)
    signs = np.sign(np.diag(eta))
    skew = skew * (np.outer(signs, signs) > 0)
    a_mat = np.linalg.solve(eta, skew)
    t0 = base.curve.a

    def k_func(t):
        e = expm((t - t0) * a_mat)
        return e, a_mat @ e

    return modulated_frame(base, k_func)


def random_smooth_frame(base: FrameField, rng: np.random.Generator, scale: float = 0.3) -> FrameField:
    """``p(t) expm(sin(t) M1) expm(sin(t/2 + 1) M2)`` with random ``M1, M2``.

    Neither parallel nor orthonormal; the exponents stay bounded so the frame
    remains well conditioned on long intervals.
    """
    n = base.curve.dim
    m1 = scale * rng.normal(size=(n, n))
    m2 = scale * rng.normal(size=(n, n))

    def k_func(t):
        e1 = expm(np.sin(t) * m1)
        e2 = expm(np.sin(0.5 * t + 1.0) * m2)
        return e1 @ e2, np.cos(t) * (m1 @ e1 @ e2) + 0.5 * np.cos(0.5 * t + 1.0) * (e1 @ m2 @ e2)

    return modulated_frame(base, k_func)


def connection_form(frame: FrameField, metric: MetricField, curve: Optional[GeodesicPath] = None,
                    use_rates: bool = True) -> np.ndarray:
    """``varpi = p^{-1} (p' + Gamma(x') p)`` on the grid.

    With ``use_rates=False`` the derivative ``p'`` is recomputed from the frame
    samples by the fourth-order finite-difference stencil.
    """
    curve = curve or frame.curve
    p = frame.frames
    pd = frame.rates if use_rates else fd_derivative(p, curve.times)
    gam = _gamma_of(metric, curve.points, curve.velocities)
    return np.linalg.solve(p, pd + gam @ p)


# ---------------------------------------------------------------------------
# symplectic system of a geodesic


@dataclass(frozen=True)
class SymplecticSystemData:
    """Grid samples of ``(gtilde, varpi, Rtilde)`` plus an evaluator for any ``t``."""

    times: np.ndarray
    gtilde: np.ndarray
    varpi: np.ndarray
    rtilde: np.ndarray
    sampler: Optional[Callable] = field(default=None, compare=False, repr=False)

    def sample(self, ts):
        """``(gtilde, varpi, Rtilde)`` stacked over an array of instants.

        Without an exact sampler the grid values are interpolated linearly.
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self.sampler is not None:
            return self.sampler(ts)
        k = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.times.size - 2)
        s = ((ts - self.times[k]) / (self.times[k + 1] - self.times[k]))[:, None, None]
        lin = lambda a: (1 - s) * a[k] + s * a[k + 1]  # noqa: E731
        return lin(self.gtilde), lin(self.varpi), lin(self.rtilde)

    def at(self, t: float):
        g, w, r = self.sample([t])
        return g[0], w[0], r[0]

    def compatibility_residual(self) -> float:
        """max |gtilde' - (gtilde varpi + varpi^T gtilde)| with gtilde' by finite differences."""
        gd = fd_derivative(self.gtilde, self.times)
        rhs = self.gtilde @ self.varpi + np.swapaxes(self.varpi, 1, 2) @ self.gtilde
        return float(np.max(np.abs(gd - rhs)))

    def symmetry_residual(self) -> float:
        gr = self.gtilde @ self.rtilde
        return float(np.max(np.abs(gr - np.swapaxes(gr, 1, 2))))


def _system_many(metric, curve, frame, ts):
    x, v = curve.sample(ts)
    p, pd = frame.sample(ts)
    g = metric.eval(x) if metric.batched else np.stack([metric.eval(y) for y in x])
    gam = _gamma_of(metric, x, v)
    r = _curvature_many(metric, x, v)
    pt = np.swapaxes(p, -1, -2)
    return pt @ g @ p, np.linalg.solve(p, pd + gam @ p), np.linalg.solve(p, r @ p)


def symplectic_system_data(metric: MetricField, curve: GeodesicPath, frame: FrameField) -> SymplecticSystemData:
    xs, vs, p, pd = curve.points, curve.velocities, frame.frames, frame.rates
    g = metric.eval(xs) if metric.batched else np.stack([metric.eval(x) for x in xs])
    gam = _gamma_of(metric, xs, vs)
    r = _curvature_many(metric, xs, vs)
    pt = np.swapaxes(p, 1, 2)
    return SymplecticSystemData(
        times=curve.times,
        gtilde=pt @ g @ p,
        varpi=np.linalg.solve(p, pd + gam @ p),
        rtilde=np.linalg.solve(p, r @ p),
        sampler=lambda ts: _system_many(metric, curve, frame, ts),
    )


def _block(gt, varpi, rt):
    """Batched ``[[-varpi, gtilde^-1], [-gtilde Rtilde, varpi^T]]`` with exact symmetrization."""
    tr = lambda a: np.swapaxes(a, -1, -2)  # noqa: E731
    gt = 0.5 * (gt + tr(gt))
    b = np.linalg.inv(gt)
    b = 0.5 * (b + tr(b))
    c = -gt @ rt
    c = 0.5 * (c + tr(c))
    top = np.concatenate([-varpi, b], axis=-1)
    bottom = np.concatenate([c, tr(varpi)], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


@dataclass(frozen=True)
class CoefficientMap:
    """``t -> X(t) = [[-varpi, gtilde^-1], [-gtilde Rtilde, varpi^T]]``."""

    data: SymplecticSystemData

    @property
    def times(self):
        return self.data.times

    @property
    def n(self) -> int:
        return self.data.gtilde.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        return self.batch([t])[0]

    def batch(self, ts) -> np.ndarray:
        gt, w, r = self.data.sample(ts)
        det = np.abs(np.linalg.det(gt))
        if np.any(det <= 1e-12 * np.maximum(1.0, np.abs(gt).max(axis=(-2, -1))) ** gt.shape[-1]):
            raise DegenerateMetric("gtilde singular")
        return _block(gt, w, r)

    def on_grid(self) -> np.ndarray:
        return _block(self.data.gtilde, self.data.varpi, self.data.rtilde)


def assemble_symplectic_system(data: SymplecticSystemData) -> CoefficientMap:
    dets = np.abs(np.linalg.det(data.gtilde))
    if np.any(dets <= 1e-12):
        raise DegenerateMetric("gtilde is singular on the grid")
    return CoefficientMap(data)


def sp_residual(x: np.ndarray) -> float:
    """Distance of ``X`` from sp(2n): ``|X^T Omega + Omega X|``."""
    om = canonical_omega(x.shape[0] // 2)
    return float(np.linalg.norm(x.T @ om + om @ x))


@dataclass(frozen=True)
class FlowResult:
    times: np.ndarray
    phi: np.ndarray  # (N, 2n, 2n)
    drift: np.ndarray  # symplecticity residual per sample
    coefficients: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def max_drift(self) -> float:
        return float(self.drift.max())

    def phi_at(self, t: float) -> np.ndarray:
        """Flow at an arbitrary instant (one Magnus step from the nearest grid point below)."""
        k = locate(self.times, t)
        if t == self.times[k]:
            return self.phi[k]
        if t == self.times[k + 1]:
            return self.phi[k + 1]
        return _magnus_step(self.coefficients, self.times[k], t - self.times[k]) @ self.phi[k]


_G1 = 0.5 - np.sqrt(3.0) / 6.0
_G2 = 0.5 + np.sqrt(3.0) / 6.0


def _magnus_exponent(x1, x2, h):
    return 0.5 * h * (x1 + x2) + (np.sqrt(3.0) / 12.0) * h * h * (x2 @ x1 - x1 @ x2)


def _gauss_nodes(ts):
    h = np.diff(ts)
    return np.concatenate([ts[:-1] + _G1 * h, ts[:-1] + _G2 * h]), h


def _coeff_batch(coeff, ts):
    if hasattr(coeff, "batch"):
        return coeff.batch(ts)
    return np.stack([np.asarray(coeff(t), dtype=float) for t in ts])


def _magnus_step(coeff, t, h):
    x = _coeff_batch(coeff, [t + _G1 * h, t + _G2 * h])
    return expm(_magnus_exponent(x[0], x[1], h))


def _magnus_propagate(coeff, ts):
    nodes, h = _gauss_nodes(ts)
    xs = _coeff_batch(coeff, nodes)
    m = h.size
    n2 = xs.shape[-1]
    phis = np.empty((ts.size, n2, n2))
    phis[0] = np.eye(n2)
    for k in range(m):
        phis[k + 1] = expm(_magnus_exponent(xs[k], xs[m + k], h[k])) @ phis[k]
    return phis


def flow(coeff: Callable, times, tol: Tolerances = DEFAULT, check_half_step: bool = False) -> FlowResult:
    """Fundamental matrix of ``Phi' = X(t) Phi``, ``Phi(a) = I``, by fourth-order Magnus.

    Every step is the exponential of an element of sp(2n), so the drift from
    symplecticity only reflects round-off.  Drift above ``100 * sympl_tol``
    raises :class:`IntegrationFailure`.
    """
    ts = np.asarray(times, dtype=float)
    phis = _magnus_propagate(coeff, ts)
    om = canonical_omega(phis.shape[-1] // 2)
    drift = np.linalg.norm(np.swapaxes(phis, 1, 2) @ om @ phis - om, axis=(1, 2))
    if np.max(drift) > 100 * tol.sympl_tol:
        raise IntegrationFailure(f"symplectic drift {np.max(drift):.3e}; use a finer grid")
    if check_half_step:
        fine = np.linspace(ts[0], ts[-1], 2 * (ts.size - 1) + 1)
        phi_f = _magnus_propagate(coeff, fine)[-1]
        err = np.linalg.norm(phi_f - phis[-1]) / max(1.0, np.linalg.norm(phis[-1]))
        if err > tol.resid_tol:
            raise IntegrationFailure(f"flow changes by {err:.3e} under step halving")
    return FlowResult(ts, phis, drift, coefficients=coeff)


# ---------------------------------------------------------------------------
# Jacobi fields


@dataclass(frozen=True)
class FieldAlongCurve:
    """Vector field samples ``E(t_i)`` along a curve, optionally with ``DE/dt``."""

    curve: GeodesicPath
    values: np.ndarray
    derivatives: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.curve.points.shape:
            raise InvalidArgument(f"field samples {v.shape} do not match the curve grid")
        object.__setattr__(self, "values", v)
        if self.derivatives is not None:
            object.__setattr__(self, "derivatives", np.asarray(self.derivatives, dtype=float))

    def covariant_derivative(self, metric: MetricField) -> np.ndarray:
        """``DE/dt``: stored values, else ``E' + Gamma(x', E)`` with E' by finite differences."""
        if self.derivatives is not None:
            return self.derivatives
        ed = fd_derivative(self.values, self.curve.times)
        gam = christoffel(metric, self.curve.points) if metric.batched else \
            np.stack([christoffel(metric, x) for x in self.curve.points])
        return ed + np.einsum("nkij,ni,nj->nk", gam, self.curve.velocities, self.values)


def jacobi_field_direct(metric: MetricField, curve: GeodesicPath, j_a, jdot_a) -> FieldAlongCurve:
    """Jacobi field with ``J(a) = j_a`` and ``DJ/dt(a) = jdot_a`` by RK4 on the curve grid.

    State ``(J, W)`` with ``W = DJ/dt``: ``J' = W - Gamma(x') J``, ``W' = -R J - Gamma(x') W``.
    """
    n = metric.dim
    y0 = np.concatenate([np.asarray(j_a, float), np.asarray(jdot_a, float)])
    (xg, vg), (xm, vm) = _grid_and_mid(curve)

    def system(x, v):
        gam = _gamma_of(metric, x, v)
        r = _curvature_many(metric, x, v)
        eye = np.broadcast_to(np.eye(n), gam.shape)
        top = np.concatenate([-gam, eye], axis=-1)
        bottom = np.concatenate([-r, -gam], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    ys = _rk4_linear(system(xg, vg), system(xm, vm), curve.times, y0)
    return FieldAlongCurve(curve, ys[:, :n], ys[:, n:])
