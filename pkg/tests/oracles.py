"""Independent reference computations used only by the tests.

None of these share code paths with the library implementations they check.
"""

import numpy as np


def souriau_maslov(frames, frame0, zero_tol=1e-7):
    """Maslov index of a densely sampled Lagrangian path via det-winding.

    ``frames`` is a sequence of 2n x n real frames, ``frame0`` the reference.
    Each Lagrangian L with orthonormal basis [X; Y] maps to W = U U^T conj(U0 U0^T),
    U = X + iY; eigenvalue 1 of W marks L cap L0.  The index is the winding of
    det W corrected by the endpoint eigenvalue positions.
    """

    def unitary(f):
        q, _ = np.linalg.qr(np.asarray(f, dtype=float))
        n = q.shape[1]
        return q[:n] + 1j * q[n:]

    u0 = unitary(frame0)
    w0 = np.conj(u0 @ u0.T)
    dets = []
    first_last = []
    for k, f in enumerate(frames):
        u = unitary(f)
        w = (u @ u.T) @ w0
        dets.append(np.linalg.det(w))
        if k == 0 or k == len(frames) - 1:
            first_last.append(np.angle(np.linalg.eigvals(w)))
    phase = np.unwrap(np.angle(np.array(dets)))
    winding = (phase[-1] - phase[0]) / (2 * np.pi)

    def corr(thetas):
        x = np.mod(thetas / (2 * np.pi), 1.0)
        c = 0.5 - x
        near = (x < zero_tol) | (x > 1 - zero_tol)
        c[near] = 0.0
        return float(np.sum(c))

    val = -(winding + corr(first_last[1]) - corr(first_last[0]))
    return round(2 * val) / 2, val


def char_poly_eigenvalues(a, tol=1e-13):
    """Eigenvalues of a symmetric matrix by bisection on its characteristic polynomial.

    Uses Sturm-sequence counts of the tridiagonal form obtained by plain
    Householder reflections written out here, independent of LAPACK's solvers.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = -np.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] -= alpha
        nv = np.linalg.norm(v)
        if nv < 1e-300:
            continue
        v /= nv
        h = np.eye(n)
        h[k + 1:, k + 1:] -= 2.0 * np.outer(v, v)
        a = h @ a @ h
    d = np.diag(a).copy()
    e = np.array([a[i, i + 1] for i in range(n - 1)])

    def count_below(x):
        cnt = 0
        q = d[0] - x
        if q < 0:
            cnt += 1
        for i in range(1, n):
            if q == 0:
                q = 1e-300
            q = d[i] - x - e[i - 1] ** 2 / q
            if q < 0:
                cnt += 1
        return cnt

    r = np.sum(np.abs(a)) + 1.0
    eigs = []
    for j in range(n):
        lo, hi = -r, r
        while hi - lo > tol * max(1.0, r):
            mid = 0.5 * (lo + hi)
            if count_below(mid) > j:
                hi = mid
            else:
                lo = mid
        eigs.append(0.5 * (lo + hi))
    return np.array(eigs)
