"""Nitrogen transfer functions: Gompertz yield and quadratic leaching.

Both curves map an N application rate (kg-N/acre) to an agronomic outcome,
yield in tons/acre and root-zone leaching in kg-N/acre::

    yield(n) = y_max * exp(-b * exp(-c * n))
    leach(n) = alpha0 + alpha1 * n + alpha2 * n**2

The fitting routines take point clouds produced by a process model (one
cloud per practice and cell) and return the curve parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateDesign, DomainError, SingularFit

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class TransferParams:
    y_max: float
    b: float
    c: float
    alpha0: float = 0.0
    alpha1: float = 0.0
    alpha2: float = _TINY

    def with_leaching(self, other) -> "TransferParams":
        return replace(self, alpha0=other.alpha0, alpha1=other.alpha1, alpha2=other.alpha2)

    @property
    def inflection(self) -> float:
        """N rate at which the yield curve switches from convex to concave."""
        return math.log(self.b) / self.c


class LeachParams(NamedTuple):
    alpha0: float
    alpha1: float
    alpha2: float


class ResponsePoint(NamedTuple):
    n_rate: float
    value: float


class FitDiagnostics(NamedTuple):
    rmse: float
    iterations: int
    converged: bool


def _check_rate(n):
    if np.any(np.asarray(n) < 0):
        raise DomainError(f"N rate must be nonnegative, got {n}")


def gompertz_yield(n, p: TransferParams):
    _check_rate(n)
    return p.y_max * np.exp(-p.b * np.exp(-p.c * np.asarray(n, dtype=float)))


def gompertz_derivatives(n, p: TransferParams):
    """First and second derivative of the yield curve with respect to N."""
    _check_rate(n)
    n = np.asarray(n, dtype=float)
    z = p.b * np.exp(-p.c * n)
    y = p.y_max * np.exp(-z)
    d1 = y * p.c * z
    d2 = d1 * (p.c * z - p.c)
    return d1, d2


def leach_rate(n, p: TransferParams):
    _check_rate(n)
    n = np.asarray(n, dtype=float)
    return p.alpha0 + n * (p.alpha1 + p.alpha2 * n)


# -- fitting -----------------------------------------------------------------

def _as_arrays(points):
    arr = np.asarray([(float(pt[0]), float(pt[1])) for pt in points], dtype=float)
    if arr.size == 0:
        return np.empty(0), np.empty(0)
    return arr[:, 0], arr[:, 1]


def _gompertz_model(theta, n):
    """Yield and Jacobian with respect to log parameters (ln y_max, ln b, ln c)."""
    y_max, b, c = np.exp(theta)
    e = np.exp(-c * n)
    y = y_max * np.exp(-b * e)
    jac = np.empty((n.size, 3))
    jac[:, 0] = y
    jac[:, 1] = -y * b * e
    jac[:, 2] = y * b * e * c * n
    return y, jac


def default_gompertz_init(n, v) -> TransferParams:
    y_max = 1.05 * float(v.max())
    at_min = float(v[n == n.min()].mean())
    b = math.log(y_max / at_min)
    c = 1.0 / float(n.mean())
    return TransferParams(y_max, b, c)


def fit_gompertz(points: Sequence, init: TransferParams | None = None,
                 max_iter: int = 500):
    """Least-squares Gompertz fit by Levenberg-Marquardt in log-parameter space.

    Returns ``(params, FitDiagnostics)``. Running out of iterations is not an
    error: the best iterate is returned with ``converged=False``.
    """
    n, v = _as_arrays(points)
    if n.size < 4 or np.unique(n).size < 3:
        raise DomainError("need at least 4 points with 3 distinct N rates")
    if np.any(n < 0) or np.any(v <= 0):
        raise DomainError("N rates must be >= 0 and yields > 0")
    if np.ptp(v) <= 1e-12 * v.max():
        raise SingularFit("all yields identical; the rate parameter is unidentifiable")

    p0 = init if init is not None else default_gompertz_init(n, v)
    if min(p0.y_max, p0.b, p0.c) <= 0:
        raise DomainError("initial parameters must be positive")
    theta = np.log([p0.y_max, p0.b, p0.c])

    y, jac = _gompertz_model(theta, n)
    r = y - v
    ssr = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        grad = jac.T @ r
        if np.linalg.norm(grad) < 1e-12:
            converged = True
            break
        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        # Marquardt scaling: solve in units where the damped diagonal is 1 + lam
        d = np.sqrt(diag)
        scaled = jtj / np.outer(d, d)
        improved = False
        solved_any = False
        while lam <= 1e16:
            a = scaled + lam * np.eye(3)
            try:
                if np.linalg.cond(a) > 1e14:
                    raise np.linalg.LinAlgError
                step = np.linalg.solve(a, -grad / d) / d
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            solved_any = True
            trial = theta + step
            y_t, jac_t = _gompertz_model(trial, n)
            r_t = y_t - v
            ssr_t = float(r_t @ r_t)
            if np.isfinite(ssr_t) and ssr_t <= ssr:
                rel_step = np.linalg.norm(step) / (np.linalg.norm(theta) + 1e-300)
                theta, y, jac, r, ssr = trial, y_t, jac_t, r_t, ssr_t
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not solved_any:
            raise SingularFit("Gompertz Jacobian rank deficient at every damping level")
        if not improved:
            # no descent direction left: at a minimum to working precision
            converged = True
            break
        if rel_step < 1e-10:
            converged = True
            break

    y_max, b, c = (float(x) for x in np.exp(theta))
    rmse = math.sqrt(ssr / n.size)
    return TransferParams(y_max, b, c), FitDiagnostics(rmse, it, converged)


def fit_quadratic(points: Sequence) -> LeachParams:
    """Nonnegative quadratic leaching fit with a strictly positive curvature.

    Active-set projection: fit unconstrained, clamp negative coefficients to
    zero and refit the rest; a clamped curvature is pinned at the smallest
    positive double.
    """
    n, v = _as_arrays(points)
    if np.unique(n).size < 3:
        raise DegenerateDesign("need at least 3 distinct N rates for a quadratic fit")
    scale = float(np.abs(n).max()) or 1.0
    t = n / scale
    design = np.column_stack([np.ones_like(t), t, t * t])

    fixed: dict[int, float] = {}
    while True:
        free = [j for j in range(3) if j not in fixed]
        rhs = v.copy()
        for j, val in fixed.items():
            rhs -= design[:, j] * val * scale**j
        coef = np.zeros(3)
        if free:
            sol, *_ = np.linalg.lstsq(design[:, free], rhs, rcond=None)
            coef[free] = sol
        for j, val in fixed.items():
            coef[j] = val * scale**j
        neg = [j for j in free if coef[j] < 0 or (j == 2 and coef[j] == 0)]
        if not neg:
            break
        for j in neg:
            fixed[j] = _TINY if j == 2 else 0.0

    alphas = coef / scale ** np.arange(3)
    if 2 in fixed:
        alphas[2] = _TINY
    alphas = np.maximum(alphas, 0.0)
    return LeachParams(float(alphas[0]), float(alphas[1]), float(alphas[2]))
