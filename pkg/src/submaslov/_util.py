"""Small numerical helpers shared across modules."""

from __future__ import annotations

import numpy as np
import sympy as sp


def lambdify_array(exprs, symbols, shape):
    """Compile a nested list / array of sympy expressions into ``f(x) -> ndarray``.

    ``x`` may carry leading batch axes (last axis = coordinates); the result then
    has shape ``batch + shape``.  Zero entries are skipped at evaluation time.
    """
    flat = list(np.asarray(exprs, dtype=object).reshape(-1))
    flat = [sp.sympify(e) for e in flat]
    nonzero = [(k, e) for k, e in enumerate(flat) if e != 0]
    size = int(np.prod(shape)) if shape else 1
    if nonzero:
        fn = sp.lambdify(list(symbols), [e for _, e in nonzero], modules="numpy", cse=True)
    else:
        fn = None
    idx = [k for k, _ in nonzero]

    def f(x):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        out = np.zeros(batch + (size,))
        if fn is not None:
            vals = fn(*np.moveaxis(x, -1, 0))
            for k, v in zip(idx, vals):
                out[..., k] = v
        return out.reshape(batch + tuple(shape))

    return f


def hermite(t0, t1, y0, y1, m0, m1, t):
    """Cubic Hermite value and derivative on [t0, t1] with endpoint slopes m0, m1."""
    h = t1 - t0
    s = (t - t0) / h
    s2, s3 = s * s, s * s * s
    val = (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * m0 \
        + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * m1
    der = ((6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * h * m0
           + (-6 * s2 + 6 * s) * y1 + (3 * s2 - 2 * s) * h * m1) / h
    return val, der


def locate(times, t):
    """Index k with times[k] <= t <= times[k+1] (clamped to the grid)."""
    k = int(np.searchsorted(times, t, side="right")) - 1
    return min(max(k, 0), times.size - 2)


def fd_derivative(values, times):
    """Fourth-order finite-difference derivative of samples on a uniform grid.

    Interior points use the five-point central stencil; the two points at each
    end use one-sided fourth-order stencils.
    """
    y = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    n = t.size
    if n < 5:
        return np.gradient(y, t, axis=0)
    h = (t[-1] - t[0]) / (n - 1)
    d = np.empty_like(y)
    d[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
    d[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    d[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    d[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    d[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return d


def null_space(a, tol=1e-8):
    """Orthonormal basis of ker(a) with relative singular-value cutoff."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.eye(a.shape[1])
    _, s, vh = np.linalg.svd(a)
    cut = tol * max(1.0, s[0] if s.size else 0.0)
    rank = int(np.sum(s > cut))
    return vh[rank:].T.copy()

