"""Symplectic linear algebra on (R^n + R^n*, omega).

Vectors are stacked as ``(v, alpha)`` with the first ``n`` entries in R^n and the
last ``n`` in the dual.  The form is ``omega((v,a),(w,b)) = b(v) - a(w)`` whose
matrix is ``Omega = [[0, I], [-I, 0]]``.  An n-dimensional isotropic subspace is
stored as a 2n x n frame; orthonormal Lagrangian frames ``[X; Y]`` correspond
one-to-one (up to right multiplication by O(n)) with unitary ``U = X + iY``,
which is what the interpolation and refinement code works with.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (
    ChartDomainError,
    InvalidChart,
    InvalidDimension,
    InvalidLagrangian,
    InvalidSymplectomorphism,
    PartitionFailure,
    ResolutionError,
    SplitInapplicable,
)

DEFAULT_TOL = 1e-8
MAX_STEP_ANGLE = np.pi / 4


def canonical_omega(n: int) -> np.ndarray:
    """Matrix of omega on R^n + R^n*: ``x^T Omega y = omega(x, y)``."""
    if int(n) != n or n < 1:
        raise InvalidDimension(f"half-dimension must be a positive integer, got {n!r}")
    n = int(n)
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def complex_structure(n: int) -> np.ndarray:
    """``J = Omega^T``, so that ``omega(x, y) = <J x, y>``."""
    return canonical_omega(n).T


# ---------------------------------------------------------------------------
# symmetric forms


@dataclass(frozen=True)
class SymmetricForm:
    entries: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidDimension(f"symmetric form must be square, got shape {a.shape}")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return np.linalg.eigvalsh(self.entries)


def signature(form: SymmetricForm) -> tuple[int, int, int]:
    """Return ``(n_plus, n_minus, n_zero)``.

    Eigenvalues with ``|lam| <= tol * max(1, spectral radius)`` count as zero.
    """
    if not isinstance(form, SymmetricForm):
        form = SymmetricForm(form)
    lam = form.eigenvalues()
    if lam.size == 0:
        return 0, 0, 0
    cut = form.tol * max(1.0, float(np.max(np.abs(lam))))
    n_plus = int(np.sum(lam > cut))
    n_minus = int(np.sum(lam < -cut))
    return n_plus, n_minus, form.n - n_plus - n_minus


def signature_index(form: SymmetricForm) -> int:
    """``n_plus - n_minus``."""
    p, m, _ = signature(form)
    return p - m


# ---------------------------------------------------------------------------
# frames


def _orthonormal_columns(a: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(a)
    return q


def _to_unitary(q: np.ndarray) -> np.ndarray:
    n = q.shape[-1]
    return q[..., :n, :] + 1j * q[..., n:, :]


def _from_unitary(u: np.ndarray) -> np.ndarray:
    return np.concatenate([u.real, u.imag], axis=-2)


def _polar_unitary(u: np.ndarray) -> np.ndarray:
    w, _, vh = np.linalg.svd(u)
    return w @ vh


@dataclass(frozen=True)
class LagrangianFrame:
    """Frame of an n-dimensional isotropic subspace, columns of shape (2n, n)."""

    columns: np.ndarray
    tol: float = DEFAULT_TOL
    _orth: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.columns, dtype=float)
        if c.ndim != 2 or c.shape[0] != 2 * c.shape[1] or c.shape[1] < 1:
            raise InvalidDimension(f"Lagrangian frame must have shape (2n, n), got {c.shape}")
        s = np.linalg.svd(c, compute_uv=False)
        if s[-1] <= self.tol * max(1.0, s[0]):
            raise InvalidLagrangian("frame columns are linearly dependent")
        q = _orthonormal_columns(c)
        iso = np.linalg.norm(q.T @ canonical_omega(c.shape[1]) @ q)
        if iso > max(self.tol, 1e-12) * 10:
            raise InvalidLagrangian(f"frame is not isotropic (residual {iso:.3e})")
        c = c.copy()
        c.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "columns", c)
        object.__setattr__(self, "_orth", q)

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def orthonormal(self) -> np.ndarray:
        return self._orth

    def unitary(self) -> np.ndarray:
        return _to_unitary(self._orth)

    @classmethod
    def from_unitary(cls, u: np.ndarray, tol: float = DEFAULT_TOL) -> "LagrangianFrame":
        return cls(_from_unitary(_polar_unitary(np.asarray(u, dtype=complex))), tol=tol)

    @classmethod
    def horizontal(cls, n: int) -> "LagrangianFrame":
        """R^n + {0}."""
        return cls(np.vstack([np.eye(n), np.zeros((n, n))]))

    @classmethod
    def vertical(cls, n: int) -> "LagrangianFrame":
        """{0} + R^n*."""
        return cls(np.vstack([np.zeros((n, n)), np.eye(n)]))

    @classmethod
    def graph(cls, sym: np.ndarray) -> "LagrangianFrame":
        """Graph {(v, S v)} of a symmetric S."""
        sym = np.atleast_2d(np.asarray(sym, dtype=float))
        return cls(np.vstack([np.eye(sym.shape[0]), 0.5 * (sym + sym.T)]))

    def same_span(self, other: "LagrangianFrame", tol: float = 1e-8) -> bool:
        return intersection_dim(self, other, tol) == self.n


def intersection_dim(a: LagrangianFrame, b: LagrangianFrame, tol: float = DEFAULT_TOL) -> int:
    """dim(A cap B) from the cosines of principal angles."""
    s = np.linalg.svd(a.orthonormal.T @ b.orthonormal, compute_uv=False)
    return int(np.sum(s > 1.0 - tol))


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (largest first) between spans of orthonormal (batched) frames."""
    s = np.linalg.svd(np.swapaxes(a, -1, -2) @ b, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))[..., ::-1]


@dataclass(frozen=True)
class SymplecticMatrix:
    entries: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] % 2 or e.shape[0] == 0:
            raise InvalidDimension(f"symplectic matrix must be 2n x 2n, got {e.shape}")
        res = symplectic_residual(e)
        if res > self.tol * max(1.0, np.linalg.norm(e, 2) ** 2):
            raise InvalidSymplectomorphism(f"Phi^T Omega Phi - Omega has norm {res:.3e}")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0] // 2


def symplectic_residual(phi: np.ndarray) -> float:
    """Frobenius norm of ``Phi^T Omega Phi - Omega``."""
    phi = np.asarray(phi, dtype=float)
    om = canonical_omega(phi.shape[0] // 2)
    return float(np.linalg.norm(phi.T @ om @ phi - om))


def apply_symplectomorphism(phi, frame: LagrangianFrame) -> LagrangianFrame:
    if not isinstance(phi, SymplecticMatrix):
        phi = SymplecticMatrix(phi)
    if phi.n != frame.n:
        raise InvalidDimension(f"dimension mismatch: {phi.n} vs {frame.n}")
    return LagrangianFrame(phi.entries @ frame.columns, tol=frame.tol)


# ---------------------------------------------------------------------------
# charts


def _chart_matrix(f: np.ndarray, a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    n = a0.shape[1]
    coeff = np.linalg.solve(np.hstack([a0, a1]), f)
    x, y = coeff[:n], coeff[n:]
    t = np.linalg.solve(x.T, y.T)  # (Y X^-1)^T
    phi = t @ (a1.T @ canonical_omega(n) @ a0)
    return 0.5 * (phi + phi.T)


def chart_value(
    L: LagrangianFrame,
    L0: LagrangianFrame,
    L1: LagrangianFrame,
    tol: float = DEFAULT_TOL,
) -> SymmetricForm:
    """The symmetric form ``omega(T., .)`` on L0, where L is the graph of T: L0 -> L1.

    The form is expressed in the orthonormal basis of L0.
    """
    if not (L.n == L0.n == L1.n):
        raise InvalidDimension("frames of different dimensions")
    a0, a1, f = L0.orthonormal, L1.orthonormal, L.orthonormal
    s = np.linalg.svd(np.hstack([a0, a1]), compute_uv=False)
    if s[-1] <= np.sqrt(tol):
        raise InvalidChart("L0 and L1 are not transverse")
    if np.linalg.svd(np.hstack([f, a1]), compute_uv=False)[-1] <= np.sqrt(tol):
        raise ChartDomainError("L is not transverse to L1")
    return SymmetricForm(_chart_matrix(f, a0, a1), tol=tol)


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class LagrangianPath:
    """Sampled Lagrangian path.

    Between samples the path is linear in the (aligned) orthonormal frame
    entries followed by re-orthonormalization.  Consecutive samples must be
    closer than ``pi/4`` in principal angle.
    """

    times: np.ndarray
    unitaries: np.ndarray  # (N, n, n) complex, orthonormal Lagrangian frames
    tol: float = DEFAULT_TOL
    max_step: float = field(init=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        u = np.asarray(self.unitaries, dtype=complex)
        if u.ndim != 3 or u.shape[0] != t.size or t.size == 0:
            raise InvalidDimension("times and frames must have matching lengths")
        if np.any(np.diff(t) <= 0):
            raise ResolutionError("sample times must be strictly increasing")
        steps = self._step_angles(u)
        max_step = float(steps.max()) if steps.size else 0.0
        if max_step >= MAX_STEP_ANGLE:
            k = int(np.argmax(steps))
            raise ResolutionError(
                f"consecutive frames at t={t[k]:.6g}, {t[k + 1]:.6g} differ by "
                f"principal angle {max_step:.3f} >= pi/4; sample more finely",
            )
        t.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "unitaries", u)
        object.__setattr__(self, "max_step", max_step)

    @staticmethod
    def _step_angles(u: np.ndarray) -> np.ndarray:
        if u.shape[0] < 2:
            return np.zeros(0)
        q = _from_unitary(u)
        return principal_angles(q[:-1], q[1:])[..., 0]

    @classmethod
    def from_frames(cls, times, frames: Sequence[LagrangianFrame], tol: float = DEFAULT_TOL):
        ns = {f.n for f in frames}
        if len(ns) != 1:
            raise InvalidDimension("all frames must share n")
        return cls(times, np.stack([f.unitary() for f in frames]), tol=tol)

    @classmethod
    def from_arrays(cls, times, columns: np.ndarray, tol: float = DEFAULT_TOL):
        """Build from stacked raw frames of shape (N, 2n, n) with one batched check."""
        c = np.asarray(columns, dtype=float)
        if c.ndim != 3 or c.shape[1] != 2 * c.shape[2]:
            raise InvalidDimension(f"expected (N, 2n, n) frames, got {c.shape}")
        n = c.shape[2]
        q, r = np.linalg.qr(c)
        d = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
        if np.any(d.min(axis=-1) <= tol * np.maximum(1.0, d.max(axis=-1))):
            raise InvalidLagrangian("rank-deficient frame in path")
        iso = np.linalg.norm(np.swapaxes(q, -1, -2) @ canonical_omega(n) @ q, axis=(-2, -1))
        if np.any(iso > max(tol, 1e-12) * 10):
            k = int(np.argmax(iso))
            raise InvalidLagrangian(f"non-isotropic frame at sample {k} (residual {iso[k]:.3e})")
        return cls(times, _polar_unitary(_to_unitary(q)), tol=tol)

    @property
    def n(self) -> int:
        return self.unitaries.shape[1]

    def __len__(self):
        return self.times.size

    def frame(self, k: int) -> LagrangianFrame:
        return LagrangianFrame(_from_unitary(self.unitaries[k]), tol=self.tol)

    def at(self, t: float) -> LagrangianFrame:
        return LagrangianFrame.from_unitary(self._interp(t), tol=self.tol)

    def _interp(self, t: float) -> np.ndarray:
        ts = self.times
        if not ts[0] <= t <= ts[-1]:
            raise ValueError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        k = min(int(np.searchsorted(ts, t, side="right")) - 1, ts.size - 2)
        if k < 0 or ts.size == 1:
            return self.unitaries[0]
        s = (t - ts[k]) / (ts[k + 1] - ts[k])
        return _interp_unitary(self.unitaries[k], self.unitaries[k + 1], s)

    def restrict(self, i: int, j: int) -> "LagrangianPath":
        return LagrangianPath(self.times[i : j + 1], self.unitaries[i : j + 1], tol=self.tol)

    def concatenate(self, other: "LagrangianPath") -> "LagrangianPath":
        """Join paths sharing an endpoint (time and span)."""
        if not np.isclose(self.times[-1], other.times[0]):
            raise ValueError("paths do not share an endpoint time")
        return LagrangianPath(
            np.concatenate([self.times, other.times[1:]]),
            np.concatenate([self.unitaries, other.unitaries[1:]]),
            tol=self.tol,
        )

    def refined(self, factor: int = 2) -> "LagrangianPath":
        """Same path with ``factor - 1`` interpolated samples inserted per step."""
        ts = [self.times[0]]
        us = [self.unitaries[0]]
        for k in range(len(self) - 1):
            for j in range(1, factor + 1):
                s = j / factor
                ts.append((1 - s) * self.times[k] + s * self.times[k + 1])
                us.append(self.unitaries[k + 1] if j == factor
                          else _interp_unitary(self.unitaries[k], self.unitaries[k + 1], s))
        return LagrangianPath(np.array(ts), np.stack(us), tol=self.tol)

    def transform(self, phi) -> "LagrangianPath":
        """Apply a fixed symplectomorphism (matrix) or a callable ``t -> matrix``."""
        cols = []
        for t, u in zip(self.times, self.unitaries):
            m = phi(t) if callable(phi) else phi
            m = m.entries if isinstance(m, SymplecticMatrix) else np.asarray(m, dtype=float)
            cols.append(m @ _from_unitary(u))
        return LagrangianPath.from_arrays(self.times, np.stack(cols), tol=self.tol)


def _interp_unitary(u0: np.ndarray, u1: np.ndarray, s: float) -> np.ndarray:
    # align u1 to u0 by the orthogonal Procrustes rotation before blending
    q0, q1 = _from_unitary(u0), _from_unitary(u1)
    w, _, vh = np.linalg.svd(q1.T @ q0)
    u1a = u1 @ (w @ vh)
    return _polar_unitary((1 - s) * u0 + s * u1a)


# ---------------------------------------------------------------------------
# Maslov index


def _candidate_complements(a0: np.ndarray) -> list[np.ndarray]:
    """Canonical complement J L0 plus the 2^n graphs of diag(+-1) over it."""
    n = a0.shape[1]
    ja0 = complex_structure(n) @ a0
    cands = [ja0]
    for signs in itertools.product((1.0, -1.0), repeat=n):
        cands.append((ja0 + a0 * np.array(signs)) / np.sqrt(2.0))
    return cands


def _min_angle(q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Smallest principal angle between each q[k] and c (0 means they intersect)."""
    s = np.linalg.svd(np.swapaxes(q, -1, -2) @ c, compute_uv=False)
    return np.arccos(np.clip(s[..., 0], -1.0, 1.0))


@dataclass
class _Piece:
    i_start: int
    i_end: int
    t_start: float
    t_end: float
    candidate: int
    delta: Fraction


class _MaslovSolver:
    def __init__(self, path: LagrangianPath, L0: LagrangianFrame, tol: float,
                 trans_tol: float, max_depth: int):
        self.path = path
        self.a0 = L0.orthonormal
        self.tol = tol
        self.trans_tol = trans_tol
        self.max_depth = max_depth
        self.cands = _candidate_complements(self.a0)
        self.pieces: list[_Piece] = []

    def _angles(self, q: np.ndarray) -> np.ndarray:
        return np.stack([_min_angle(q, c) for c in self.cands], axis=-1)

    def _sig(self, q: np.ndarray, c: int) -> int:
        return signature_index(SymmetricForm(_chart_matrix(q, self.a0, self.cands[c]), self.tol))

    def run(self) -> Fraction:
        q = _from_unitary(self.path.unitaries)
        self._solve(self.path.times, q, self.path.unitaries, self._angles(q),
                    _min_angle(q, self.a0), depth=0)
        return sum((p.delta for p in self.pieces), Fraction(0))

    def _solve(self, ts, q, us, ang, dist0, depth):
        m = ts.size
        if m == 1:
            return
        steps = principal_angles(q[:-1], q[1:])[..., 0]
        need = max(self.trans_tol, float(steps.max()))
        worst = ang.min(axis=0)
        c = int(np.argmax(worst))
        if worst[c] > need:
            delta = Fraction(self._sig(q[-1], c) - self._sig(q[0], c), 2)
            self.pieces.append(_Piece(0, m - 1, float(ts[0]), float(ts[-1]), c, delta))
            return
        if m == 2:
            if depth >= self.max_depth:
                raise PartitionFailure(
                    "no auxiliary Lagrangian transverse to the path on this subinterval",
                    t_start=float(ts[0]), t_end=float(ts[-1]),
                )
            k = 8
            s = np.linspace(0.0, 1.0, k + 1)
            sub_u = np.stack([us[0]] + [_interp_unitary(us[0], us[1], x) for x in s[1:-1]] + [us[1]])
            sub_q = _from_unitary(sub_u)
            sub_t = ts[0] + s * (ts[1] - ts[0])
            self._solve(sub_t, sub_q, sub_u, self._angles(sub_q), _min_angle(sub_q, self.a0),
                        depth + 1)
            return
        # split inside the middle half where the path is farthest from L0
        lo, hi = max(1, m // 4), min(m - 2, (3 * m) // 4)
        k = lo + int(np.argmax(dist0[lo : hi + 1]))
        self._solve(ts[: k + 1], q[: k + 1], us[: k + 1], ang[: k + 1], dist0[: k + 1], depth)
        self._solve(ts[k:], q[k:], us[k:], ang[k:], dist0[k:], depth)


def maslov_index(
    path: LagrangianPath,
    L0: LagrangianFrame,
    tol: float = DEFAULT_TOL,
    trans_tol: float = 0.05,
    max_depth: int = 12,
    return_pieces: bool = False,
):
    """Maslov index of ``path`` relative to ``L0`` as a half-integer ``Fraction``.

    The interval is bisected until each piece admits a single auxiliary
    Lagrangian transverse to L0 and to every sample of the piece; each piece
    contributes half the signature jump of its chart and the pieces are summed.
    """
    if path.n != L0.n:
        raise InvalidDimension(f"path has n={path.n}, L0 has n={L0.n}")
    solver = _MaslovSolver(path, L0, tol, trans_tol, max_depth)
    total = solver.run()
    if return_pieces:
        return total, solver.pieces
    return total


# ---------------------------------------------------------------------------
# direct sums


def symplectic_basis(vectors: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Symplectic Gram-Schmidt: columns ``[e_1..e_k, f_1..f_k]`` with E^T Omega E = Omega_k."""
    w = [np.asarray(v, dtype=float) for v in np.asarray(vectors, dtype=float).T]
    dim = w[0].size
    om = canonical_omega(dim // 2)
    es, fs = [], []
    scale = max(1.0, max(np.linalg.norm(v) for v in w) ** 2)
    while w:
        e = w.pop(0)
        if np.linalg.norm(e) <= tol:
            continue
        vals = [abs(e @ om @ x) for x in w]
        if not vals or max(vals) <= tol * scale:
            raise SplitInapplicable("subspace is not symplectic")
        j = int(np.argmax(vals))
        f = w.pop(j)
        f = f / (e @ om @ f)
        es.append(e)
        fs.append(f)
        w = [x - (x @ om @ f) * e + (x @ om @ e) * f for x in w]
    return np.column_stack(es + fs)


def _intersection(q: np.ndarray, basis: np.ndarray, tol: float) -> np.ndarray:
    """Coordinates (in ``basis``) of a basis of span(q) cap span(basis)."""
    m = np.hstack([q, -basis])
    _, s, vh = np.linalg.svd(m)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    null = vh[rank:].T
    return null[q.shape[1]:]


def direct_sum_split(
    path: LagrangianPath,
    L0: LagrangianFrame,
    V1: np.ndarray,
    V2: np.ndarray,
    tol: float = 1e-7,
    **maslov_kwargs,
) -> tuple[Fraction, Fraction]:
    """Maslov indices of the components of ``path`` in a symplectic splitting V1 + V2."""
    V1 = np.asarray(V1, dtype=float)
    V2 = np.asarray(V2, dtype=float)
    n = path.n
    if V1.shape[0] != 2 * n or V2.shape[0] != 2 * n or V1.shape[1] + V2.shape[1] != 2 * n:
        raise SplitInapplicable("V1 and V2 do not split the symplectic space")
    om = canonical_omega(n)
    if np.linalg.norm(V1.T @ om @ V2) > tol * max(1.0, np.linalg.norm(V1) * np.linalg.norm(V2)):
        raise SplitInapplicable("V1 and V2 are not omega-orthogonal")
    out = []
    q_all = _from_unitary(path.unitaries)
    for V in (V1, V2):
        basis = symplectic_basis(V)
        k = basis.shape[1] // 2

        def component(q):
            c = _intersection(q, basis, tol)
            if c.shape[1] != k:
                raise SplitInapplicable(
                    f"intersection with factor has dimension {c.shape[1]}, expected {k}"
                )
            return c

        cols = np.stack([component(q) for q in q_all])
        sub_path = LagrangianPath.from_arrays(path.times, cols, tol=1e-6)
        sub_L0 = LagrangianFrame(component(L0.orthonormal), tol=1e-6)
        out.append(maslov_index(sub_path, sub_L0, **maslov_kwargs))
    return out[0], out[1]
