"""Additive MARS trainer for the PE model.

Forward pass: greedily add reflected hinge pairs on single PE variables.
Backward pass: drop terms one at a time and keep the subset with the lowest
generalized cross-validation score.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .dataset import Dataset
from .errors import InsufficientRows, MissingVariables, NonPositiveEnergy
from .fit import FitResult, _provenance
from .models import PE_VARIABLES, HingeTerm, make_model, pe_vector

# relative size of an RSS reduction (or a projected column) treated as zero
_NEGLIGIBLE = 1e-12


def pe_matrix(dataset: Dataset) -> np.ndarray:
    rows = []
    for row in dataset.rows:
        try:
            rows.append(pe_vector(row.meta))
        except MissingVariables as exc:
            raise MissingVariables(f"stream {row.stream_id}: {exc}") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(PE_VARIABLES))


def knot_candidates(x: np.ndarray) -> np.ndarray:
    """Observed values strictly between the sample minimum and maximum."""
    u = np.unique(x)
    return u[1:-1]


def gcv_score(rss: float, n_terms: int, n_rows: int, penalty: float) -> float:
    c = n_terms + penalty * (n_terms - 1) / 2.0
    denom = 1.0 - c / n_rows
    if denom <= 0:
        return float("inf")
    return rss / (n_rows * denom * denom)


def _basis_columns(terms, X: np.ndarray) -> np.ndarray:
    return np.column_stack([t.basis(X[:, t.variable_index]) for t in terms])


def _solve(B: np.ndarray, w: np.ndarray, y: np.ndarray):
    A = B * w[:, None]
    t = y * w
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    r = t - A @ coef
    return coef, float(r @ r)


def _orth_append(Q: np.ndarray, col: np.ndarray) -> np.ndarray:
    norm0 = np.linalg.norm(col)
    if norm0 == 0:
        return Q
    v = col - Q @ (Q.T @ col)
    v = v - Q @ (Q.T @ v)
    norm = np.linalg.norm(v)
    if norm <= 1e-10 * norm0:
        return Q
    return np.column_stack([Q, v / norm])


def _best_pair(Q, r, w, X):
    """Best (reduction, variable, knot) over all hinge pairs."""
    best = (0.0, None, None)
    for i in range(X.shape[1]):
        x = X[:, i]
        knots = knot_candidates(x)
        if knots.size == 0:
            continue
        d = x[:, None] - knots[None, :]
        Hp = w[:, None] * np.maximum(0.0, d)
        Hn = w[:, None] * np.maximum(0.0, -d)
        P = Hp - Q @ (Q.T @ Hp)
        N = Hn - Q @ (Q.T @ Hn)
        a = np.einsum("ij,ij->j", P, P)
        b = np.einsum("ij,ij->j", P, N)
        c = np.einsum("ij,ij->j", N, N)
        gp = P.T @ r
        gn = N.T @ r
        scale_p = np.einsum("ij,ij->j", Hp, Hp)
        scale_n = np.einsum("ij,ij->j", Hn, Hn)
        ok_p = a > _NEGLIGIBLE * np.maximum(scale_p, 1e-300)
        ok_n = c > _NEGLIGIBLE * np.maximum(scale_n, 1e-300)
        det = a * c - b * b
        full = ok_p & ok_n & (det > 1e-9 * a * c)
        with np.errstate(divide="ignore", invalid="ignore"):
            red_full = (c * gp * gp - 2 * b * gp * gn + a * gn * gn) / det
            red_p = np.where(ok_p, gp * gp / a, 0.0)
            red_n = np.where(ok_n, gn * gn / c, 0.0)
        red = np.where(full, red_full, np.maximum(red_p, red_n))
        red = np.where(np.isfinite(red), red, 0.0)
        j = int(np.argmax(red))
        if red[j] > best[0]:
            best = (float(red[j]), i, float(knots[j]))
    return best


def forward_pass(X: np.ndarray, y: np.ndarray, w: np.ndarray, max_terms: int):
    terms = [HingeTerm(0, HingeTerm.CONSTANT, None, 0.0)]
    t = y * w
    total = float(t @ t)
    Q = _orth_append(np.zeros((len(y), 0)), w.copy())
    r = t - Q @ (Q.T @ t)
    steps = 0
    while len(terms) + 2 <= max_terms:
        rss = float(r @ r)
        if rss <= _NEGLIGIBLE * _NEGLIGIBLE * total:
            break
        red, var, knot = _best_pair(Q, r, w, X)
        if var is None or red <= _NEGLIGIBLE * total:
            break
        for direction in (HingeTerm.POS, HingeTerm.NEG):
            term = HingeTerm(var, direction, knot, 0.0)
            terms.append(term)
            Q = _orth_append(Q, w * term.basis(X[:, var]))
        r = t - Q @ (Q.T @ t)
        steps += 1
    return terms, steps


def backward_pass(terms, X: np.ndarray, y: np.ndarray, w: np.ndarray, penalty: float):
    """Greedy pruning. Returns (best_terms, best_gcv, gcv_trace)."""
    M = len(y)
    current = list(terms)
    _, rss = _solve(_basis_columns(current, X), w, y)
    best_terms, best_gcv = list(current), gcv_score(rss, len(current), M, penalty)
    trace = [best_gcv]
    while len(current) > 1:
        candidate = None
        for j in range(1, len(current)):
            trial = current[:j] + current[j + 1:]
            _, trial_rss = _solve(_basis_columns(trial, X), w, y)
            if candidate is None or trial_rss < candidate[0]:
                candidate = (trial_rss, trial)
        rss, current = candidate
        g = gcv_score(rss, len(current), M, penalty)
        trace.append(g)
        if g <= best_gcv:
            best_terms, best_gcv = list(current), g
    return best_terms, best_gcv, trace


def fit_mars_arrays(X: np.ndarray, y: np.ndarray, max_terms: int = 21, gcv_penalty: float = 3.0,
                    absolute_residuals: bool = False):
    """Core trainer on raw arrays. Returns (terms with coefficients, rss, forward steps)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(y) < 2:
        raise InsufficientRows(f"MARS needs at least 2 rows, got {len(y)}")
    if not absolute_residuals and np.any(y <= 0):
        raise NonPositiveEnergy("relative residuals need strictly positive targets")
    w = np.ones_like(y) if absolute_residuals else 1.0 / y
    terms, steps = forward_pass(X, y, w, max(1, int(max_terms)))
    terms, _, _ = backward_pass(terms, X, y, w, gcv_penalty)
    coef, rss = _solve(_basis_columns(terms, X), w, y)
    fitted = [t._replace(coefficient=float(c)) for t, c in zip(terms, coef)]
    return fitted, rss, steps


def fit_mars(
    dataset: Dataset,
    model_id: str = "PE",
    max_terms: int = 21,
    gcv_penalty: float = 3.0,
    absolute_residuals: bool = False,
    provenance: Optional[dict] = None,
) -> FitResult:
    if len(dataset) < 2:
        raise InsufficientRows(f"MARS needs at least 2 rows, got {len(dataset)}")
    X = pe_matrix(dataset)
    y = dataset.energies
    terms, rss, steps = fit_mars_arrays(X, y, max_terms, gcv_penalty, absolute_residuals)
    prov = _provenance(dataset, provenance)
    prov["residuals"] = "absolute" if absolute_residuals else "relative"
    model = make_model("PE", None, mars_basis=terms, provenance=prov)
    pred = _basis_columns(terms, X) @ np.array([t.coefficient for t in terms])
    r = (pred - y) / y
    return FitResult(model, float(r @ r), iterations=steps, converged=True)
