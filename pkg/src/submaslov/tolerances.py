"""Numerical tolerance knobs shared by every module."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

ENV_PREFIX = "SUBMASLOV_"


@dataclass(frozen=True)
class Tolerances:
    rank_tol: float = 1e-8          # relative zero-eigenvalue / rank threshold
    conservation_tol: float = 1e-7  # drift of g(x', x') along geodesics
    fd_tol: float = 1e-5            # finite-difference identities
    sympl_tol: float = 1e-8         # Phi^T Omega Phi - Omega
    resid_tol: float = 1e-6         # Jacobi / ODE residuals
    t_tol_rel: float = 1e-8         # focal instant localisation, relative to b - a
    focal_tol: float = 1e-6         # smallest singular value accepted as a crossing
    kernel_tol: float = 1e-5        # singular values counted into a kernel
    trans_tol: float = 0.05         # minimal transversality to accept a chart
    quad_tol: float = 1e-5          # quadrature identities

    def replace(self, **changes) -> "Tolerances":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_env(cls, base: "Tolerances | None" = None, environ=None) -> "Tolerances":
        """Apply ``SUBMASLOV_<KNOB>`` environment overrides (e.g. SUBMASLOV_SYMPL_TOL)."""
        base = base or cls()
        environ = os.environ if environ is None else environ
        changes = {}
        for f in dataclasses.fields(cls):
            raw = environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                changes[f.name] = float(raw)
        return base.replace(**changes) if changes else base


DEFAULT = Tolerances()
