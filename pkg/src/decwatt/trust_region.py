"""Bounded nonlinear least squares by a trust-region reflective iteration.

Minimises ``sum(fun(x)**2)`` subject to ``lb <= x <= ub``.  Each iteration
solves the trust-region subproblem exactly (SVD plus a secular-equation
search for the Levenberg parameter) in variables rescaled by the
Coleman-Li diagonal and by Jacobian column norms.  Steps that would leave
the box are either truncated, reflected off the violated bound, or
replaced by a scaled anti-gradient step; the candidate with the lowest
model value wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolation

EPS = np.finfo(float).eps


@dataclass
class SolverResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    status: str
    nfev: int
    history: list = field(default_factory=list)
    grad_norm: float = np.inf


def fd_jacobian(fun, x, f0, rel_step=1e-7, lb=None, ub=None) -> np.ndarray:
    """Forward differences with step ``rel_step * max(1, |x_j|)``."""
    n = x.size
    J = np.empty((f0.size, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        if x[j] < 0:
            h = -h
        xp = x.copy()
        xp[j] = x[j] + h
        if ub is not None and (xp[j] > ub[j] or xp[j] < lb[j]):
            xp[j] = x[j] - h
        h = xp[j] - x[j]
        J[:, j] = (fun(xp) - f0) / h
    return J


def _column_norms(J: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(J ** 2, axis=0))
    norms[norms == 0] = 1.0
    return norms


def _cl_scaling(x, g, lb, ub):
    v = np.ones_like(x)
    dv = np.zeros_like(x)
    mask = (g < 0) & np.isfinite(ub)
    v[mask] = ub[mask] - x[mask]
    dv[mask] = -1.0
    mask = (g > 0) & np.isfinite(lb)
    v[mask] = x[mask] - lb[mask]
    dv[mask] = 1.0
    return v, dv


def _strictly_feasible(x, lb, ub, rstep=1e-10):
    x = x.copy()
    if rstep == 0:
        low = x <= lb
        x[low] = np.nextafter(lb[low], np.inf)
        high = x >= ub
        x[high] = np.nextafter(ub[high], -np.inf)
    else:
        low = x <= lb
        x[low] = lb[low] + rstep * np.maximum(1.0, np.abs(lb[low]))
        high = x >= ub
        x[high] = ub[high] - rstep * np.maximum(1.0, np.abs(ub[high]))
    both = (x < lb) | (x > ub)
    x[both] = 0.5 * (lb[both] + ub[both])
    return x


def _solve_subproblem(J, f, delta, diag=None):
    """argmin ||J p + f||^2 + p.diag.p subject to ||p|| <= delta."""
    if diag is not None and np.any(diag > 0):
        J = np.vstack([J, np.diag(np.sqrt(diag))])
        f = np.concatenate([f, np.zeros(diag.size)])
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    uf = U.T @ f
    tol = EPS * max(J.shape) * (s[0] if s.size else 0.0)
    keep = s > tol
    p = -Vt[keep].T @ (uf[keep] / s[keep])
    if np.linalg.norm(p) <= delta:
        return p, False

    su = s * uf

    def p_norm(alpha):
        return np.linalg.norm(su / (s ** 2 + alpha))

    lo, hi = 0.0, np.linalg.norm(su) / delta
    alpha = 0.0
    # phi(alpha) = ||p(alpha)|| - delta is decreasing and convex on [lo, hi].
    for _ in range(100):
        if alpha <= lo or alpha >= hi:
            alpha = max(0.001 * hi, np.sqrt(max(lo * hi, 0.0)))
        denom = s ** 2 + alpha
        norm = np.linalg.norm(su / denom)
        phi = norm - delta
        if abs(phi) < 1e-10 * delta:
            break
        if phi < 0:
            hi = alpha
        else:
            lo = alpha
        dphi = -np.sum(su ** 2 / denom ** 3) / norm
        alpha = alpha - (phi + delta) / delta * phi / dphi
        if hi - lo <= 1e-15 * hi:
            break
    p = -Vt.T @ (su / (s ** 2 + alpha))
    n = np.linalg.norm(p)
    if n > delta:
        p *= delta / n
    return p, True


def _quadratic(J, g, s, diag=None):
    Js = J @ s
    q = g @ s + 0.5 * (Js @ Js)
    if diag is not None:
        q += 0.5 * s @ (diag * s)
    return q


def _quadratic_1d(J, g, s, diag=None, s0=None):
    """Coefficients of t -> q(s0 + t s) = a t^2 + b t + c."""
    Js = J @ s
    a = 0.5 * (Js @ Js)
    b = g @ s
    if diag is not None:
        a += 0.5 * s @ (diag * s)
    c = 0.0
    if s0 is not None:
        Js0 = J @ s0
        b += Js0 @ Js
        c = _quadratic(J, g, s0, diag)
        if diag is not None:
            b += s0 @ (diag * s)
    return a, b, c


def _minimize_1d(a, b, lo, hi, c=0.0):
    ts = [lo, hi]
    if a > 0:
        t = -b / (2 * a)
        if lo < t < hi:
            ts.append(t)
    vals = [a * t * t + b * t + c for t in ts]
    i = int(np.argmin(vals))
    return ts[i], vals[i]


def _step_to_bound(x, s, lb, ub):
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.where(s > 0, (ub - x) / s, np.where(s < 0, (lb - x) / s, np.inf))
    t = float(np.min(steps))
    return t, steps == t


def _intersect_sphere(x, s, delta):
    a = s @ s
    if a == 0:
        return np.inf
    b = x @ s
    c = x @ x - delta ** 2
    return (-b + np.sqrt(max(b * b - a * c, 0.0))) / a


def _select_step(x, J_h, diag_h, g_h, p, p_h, d, delta, lb, ub, theta):
    if np.all((x + p > lb) & (x + p < ub)):
        return p, p_h, -_quadratic(J_h, g_h, p_h, diag_h)

    p_stride, hits = _step_to_bound(x, p, lb, ub)

    # reflect off the bound that was hit
    r_h = p_h.copy()
    r_h[hits] *= -1
    r = d * r_h
    p = p * p_stride
    p_h = p_h * p_stride
    x_on_bound = x + p

    to_tr = _intersect_sphere(p_h, r_h, delta)
    to_bound, _ = _step_to_bound(x_on_bound, r, lb, ub)
    r_stride = min(to_bound, to_tr)
    if r_stride > 0:
        r_lo = (1 - theta) * p_stride / r_stride
        r_hi = theta * to_bound if r_stride == to_bound else to_tr
    else:
        r_lo, r_hi = 0.0, -1.0
    if r_lo <= r_hi:
        a, b, c = _quadratic_1d(J_h, g_h, r_h, diag_h, s0=p_h)
        r_t, r_val = _minimize_1d(a, b, r_lo, r_hi, c)
        r_h = p_h + r_h * r_t
        r = d * r_h
    else:
        r_val = np.inf

    p_h = p_h * theta
    p = p * theta
    p_val = _quadratic(J_h, g_h, p_h, diag_h)

    ag_h = -g_h
    ag = d * ag_h
    to_tr = delta / np.linalg.norm(ag_h)
    to_bound, _ = _step_to_bound(x, ag, lb, ub)
    ag_stride = theta * to_bound if to_bound < to_tr else to_tr
    a, b, _ = _quadratic_1d(J_h, g_h, ag_h, diag_h)
    ag_t, ag_val = _minimize_1d(a, b, 0.0, ag_stride)

    best = int(np.argmin([p_val, r_val, ag_val]))
    if best == 0:
        return p, p_h, -p_val
    if best == 1:
        return r, r_h, -r_val
    return ag * ag_t, ag_h * ag_t, -ag_val


def trust_region_reflective(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    lb=None,
    ub=None,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    rel_step: float = 1e-7,
    gtol: float = 1e-9,
    xtol: float = 1e-12,
    max_iter: int = 500,
) -> SolverResult:
    """Minimise ``sum(fun(x)**2)`` within the box ``[lb, ub]``.

    Stops when the infinity norm of the scaled gradient of the objective
    drops below ``gtol * (1 + objective)`` or when a step is shorter than
    ``xtol * (xtol + ||x||)``.  Hitting ``max_iter`` returns the best point
    with ``converged=False``.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float).copy()
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).copy()
    if lb.shape != (n,) or ub.shape != (n,):
        raise BoundViolation("bounds must match the parameter vector")
    if np.any(lb >= ub):
        raise BoundViolation("every lower bound must be strictly below its upper bound")
    bounded = bool(np.any(np.isfinite(lb)) or np.any(np.isfinite(ub)))
    if bounded:
        x = _strictly_feasible(x, lb, ub)

    nfev = 0

    def evaluate(z):
        nonlocal nfev
        nfev += 1
        return np.asarray(fun(z), dtype=float)

    def jacobian(z, fz):
        if jac is not None:
            return np.asarray(jac(z), dtype=float)
        return fd_jacobian(evaluate, z, fz, rel_step, lb if bounded else None, ub if bounded else None)

    f = evaluate(x)
    if not np.all(np.isfinite(f)):
        raise BoundViolation("residuals are not finite at the initial point")
    J = jacobian(x, f)
    cost = float(f @ f)
    history = [cost]

    scale_inv = _column_norms(J)
    delta = np.linalg.norm(x * scale_inv)
    if delta == 0:
        delta = 1.0

    converged = False
    status = "max_iter"
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ f
        if bounded:
            v, dv = _cl_scaling(x, g, lb, ub)
        else:
            v, dv = np.ones(n), np.zeros(n)
        scale = 1.0 / scale_inv
        d = np.sqrt(v) * scale
        g_h = d * g
        # gradient of sum(f**2) with respect to the scaled variables
        grad_norm = 2.0 * float(np.max(np.abs(g_h))) if n else 0.0
        if grad_norm < gtol * (1.0 + cost):
            converged, status = True, "gtol"
            break
        J_h = J * d
        diag_h = g * dv * scale if bounded else None
        theta = max(0.995, 1.0 - float(np.max(np.abs(g_h))))

        accepted = False
        small_step = False
        while True:
            p_h, _ = _solve_subproblem(J_h, f, delta, diag_h)
            p = d * p_h
            if bounded:
                step, step_h, predicted = _select_step(x, J_h, diag_h, g_h, p, p_h, d, delta, lb, ub, theta)
                x_new = _strictly_feasible(x + step, lb, ub, rstep=0)
            else:
                step, step_h = p, p_h
                predicted = -_quadratic(J_h, g_h, p_h)
                x_new = x + step
            step_h_norm = float(np.linalg.norm(step_h))
            small_step = np.linalg.norm(step) < xtol * (xtol + np.linalg.norm(x))
            f_new = evaluate(x_new)
            if not np.all(np.isfinite(f_new)):
                delta = 0.25 * step_h_norm
                if small_step or delta == 0:
                    break
                continue
            cost_new = float(f_new @ f_new)
            correction = 0.5 * step_h @ (diag_h * step_h) if bounded else 0.0
            actual = 0.5 * (cost - cost_new) - correction
            if predicted > 0:
                ratio = actual / predicted
            elif predicted == actual == 0:
                ratio = 1.0
            else:
                ratio = 0.0
            if ratio < 0.25:
                delta = 0.25 * step_h_norm
            elif ratio > 0.75 and step_h_norm > 0.95 * delta:
                delta *= 2.0
            if actual > 0:
                accepted = True
                break
            if small_step or delta == 0:
                break

        if accepted:
            x, f, cost = x_new, f_new, cost_new
            history.append(cost)
            J = jacobian(x, f)
            scale_inv = np.maximum(scale_inv, _column_norms(J))
        if small_step:
            converged, status = True, "xtol"
            break

    return SolverResult(
        x=x, cost=cost, iterations=it, converged=converged, status=status,
        nfev=nfev, history=history, grad_norm=grad_norm,
    )
