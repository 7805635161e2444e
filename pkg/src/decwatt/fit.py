"""Parameter estimation by relative-error least squares.

All estimators minimise ``sum(((E_hat - E) / E) ** 2)``.  Models that are
linear in their parameters get a direct weighted solve; H1T and H3 go
through :func:`decwatt.trust_region.trust_region_reflective`; PE is
trained by :func:`decwatt.mars.fit_mars`.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset
from .errors import (
    BoundViolation,
    DataError,
    DomainError,
    InsufficientRows,
    MissingVariables,
    NonPositiveEnergy,
    WrongKind,
)
from .models import (
    H1T_NORMALIZERS,
    LINEAR_MODELS,
    MODEL_IDS,
    TrainedModel,
    check_model_id,
    design_row,
    make_model,
    param_names,
)
from .trust_region import trust_region_reflective

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    model: TrainedModel
    objective_value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def quick_digest(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for row in dataset.rows:
        h.update(row.stream_id.encode("utf-8"))
        h.update(np.float64(row.energy_E).tobytes())
    return h.hexdigest()


def _provenance(dataset: Dataset, provenance: Optional[dict]) -> dict:
    prov = {"seed": None, "fold_spec": None, "dataset_digest": None}
    prov.update(provenance or {})
    if prov["dataset_digest"] is None:
        prov["dataset_digest"] = quick_digest(dataset)
    return prov


def _energies(dataset: Dataset) -> np.ndarray:
    E = dataset.energies
    if E.size and np.any(E <= 0):
        raise NonPositiveEnergy("relative error needs strictly positive energies")
    return E


def design_matrix(dataset: Dataset, model_id: str) -> np.ndarray:
    rows = []
    for row in dataset.rows:
        try:
            rows.append(design_row(model_id, row.meta, row.features.get(model_id)))
        except MissingVariables as exc:
            raise MissingVariables(f"stream {row.stream_id}: {exc}") from None
    return np.vstack(rows) if rows else np.zeros((0, 0))


def relative_lstsq(X: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Solve min ||(X c - E) / E|| with a column-equilibrated SVD solve.

    Rank-deficient systems get the minimum-norm solution of the
    equilibrated problem (identical to the plain minimum norm whenever the
    collinear columns have equal weighted norms, e.g. duplicates).
    """
    A = X / E[:, None]
    norms = np.sqrt(np.sum(A ** 2, axis=0))
    norms[norms == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / norms, np.ones(E.size), rcond=None)
    return coef / norms


def relative_objective(pred: np.ndarray, E: np.ndarray) -> float:
    r = (pred - E) / E
    return float(r @ r)


def fit_linear_relative(dataset: Dataset, model_id: str, provenance: Optional[dict] = None) -> FitResult:
    check_model_id(model_id)
    if model_id not in LINEAR_MODELS:
        raise WrongKind(f"{model_id} is not linear in its parameters")
    E = _energies(dataset)
    n_params = len(param_names(model_id))
    if len(dataset) < n_params:
        raise InsufficientRows(f"{model_id} needs at least {n_params} rows, got {len(dataset)}")
    X = design_matrix(dataset, model_id)
    coef = relative_lstsq(X, E)
    model = make_model(model_id, coef, provenance=_provenance(dataset, provenance))
    return FitResult(model, relative_objective(X @ coef, E), iterations=1, converged=True)


# -- nonlinear models ---------------------------------------------------------------

def _variables(dataset: Dataset, names: Sequence[str]) -> dict:
    out = {}
    for name in names:
        values = []
        for row in dataset.rows:
            try:
                values.append(row.meta.variable(name))
            except MissingVariables as exc:
                raise MissingVariables(f"stream {row.stream_id}: {exc}") from None
        out[name] = np.array(values, dtype=float)
    return out


def h1t_normalizers(dataset: Dataset) -> dict:
    v = _variables(dataset, ("S", "f", "q"))
    return {"S_max": float(v["S"].max()), "f_max": float(v["f"].max()), "q_min": float(v["q"].min())}


def _h1t_problem(dataset: Dataset, E: np.ndarray):
    v = _variables(dataset, ("S", "f", "q", "t_dec"))
    norm = h1t_normalizers(dataset)
    if min(norm.values()) <= 0 or np.any(v["t_dec"] <= 0):
        raise DomainError("H1T needs positive S, f, q and decoding times")
    logs = np.column_stack([
        np.log(v["S"] / norm["S_max"]),
        np.log(v["f"] / norm["f_max"]),
        np.log(v["q"] / norm["q_min"]),
    ])
    t = v["t_dec"]

    def predict(p):
        return p[0] * np.exp(logs @ p[1:]) * t

    # log-space regression: log(E/t) = log P_max + sum_j c_j log(ratio_j)
    A = np.column_stack([np.ones(E.size), logs])
    coef, *_ = np.linalg.lstsq(A, np.log(E / t), rcond=None)
    init = np.concatenate([[np.exp(coef[0])], coef[1:]])
    return predict, init, norm


def _h3_problem(dataset: Dataset, E: np.ndarray):
    v = _variables(dataset, ("S", "N", "b_pixel"))
    px = v["S"] * v["N"]
    bp = v["b_pixel"]
    if np.any(bp < 0):
        raise DomainError("H3 needs non-negative bits per pixel")

    def predict(p):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return p[0] + px * (p[1] + p[2] * bp ** p[3])

    a0 = float(np.mean(E / px))
    return predict, np.array([0.0, a0, a0, 1.0]), {}


def _linear_problem(dataset: Dataset, model_id: str, E: np.ndarray):
    X = design_matrix(dataset, model_id)

    def predict(p):
        return X @ p

    return predict, np.zeros(X.shape[1]), {}


def _bounds_arrays(bounds, names):
    if bounds is None:
        return None, None
    if isinstance(bounds, dict):
        pairs = [bounds.get(n, (-np.inf, np.inf)) for n in names]
    else:
        pairs = list(bounds)
    if len(pairs) != len(names):
        raise BoundViolation(f"expected {len(names)} bound pairs, got {len(pairs)}")
    lb = np.array([-np.inf if lo is None else lo for lo, _ in pairs], dtype=float)
    ub = np.array([np.inf if hi is None else hi for _, hi in pairs], dtype=float)
    return lb, ub


def fit_trust_region(
    dataset: Dataset,
    model_id: str,
    bounds=None,
    init: Optional[Sequence[float]] = None,
    provenance: Optional[dict] = None,
    max_iter: int = 500,
) -> FitResult:
    """Iterative relative-error fit for H1T and H3.

    Parameter-linear models are accepted too; that path exists to
    cross-check :func:`fit_linear_relative`.  ``bounds`` is a mapping
    ``name -> (lo, hi)`` or a sequence of pairs in parameter order.
    """
    check_model_id(model_id)
    if model_id == "PE":
        raise WrongKind("PE is trained by fit_mars")
    E = _energies(dataset)
    names = param_names(model_id)
    if len(dataset) < len(names):
        raise InsufficientRows(f"{model_id} needs at least {len(names)} rows, got {len(dataset)}")
    if model_id == "H1T":
        predict, x0, normalizers = _h1t_problem(dataset, E)
    elif model_id == "H3":
        predict, x0, normalizers = _h3_problem(dataset, E)
    else:
        predict, x0, normalizers = _linear_problem(dataset, model_id, E)
    if init is not None:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != (len(names),):
            raise DataError(f"init must have {len(names)} values")
    lb, ub = _bounds_arrays(bounds, names)
    if lb is not None:
        x0 = np.clip(x0, lb, ub)

    def residuals(p):
        return predict(p) / E - 1.0

    result = trust_region_reflective(residuals, x0, lb, ub, max_iter=max_iter)
    if not result.converged:
        log.warning("%s fit stopped after %d iterations without converging", model_id, result.iterations)
    model = make_model(model_id, result.x, normalizers=normalizers, provenance=_provenance(dataset, provenance))
    return FitResult(model, result.cost, result.iterations, result.converged, result.history)


def fit_model(
    dataset: Dataset,
    model_id: str,
    provenance: Optional[dict] = None,
    absolute_residuals: bool = False,
    max_terms: int = 21,
    gcv_penalty: float = 3.0,
    bounds=None,
) -> FitResult:
    """Dispatch to the estimator appropriate for ``model_id``."""
    check_model_id(model_id)
    if model_id in LINEAR_MODELS:
        return fit_linear_relative(dataset, model_id, provenance)
    if model_id == "PE":
        from .mars import fit_mars

        return fit_mars(dataset, max_terms=max_terms, gcv_penalty=gcv_penalty,
                        absolute_residuals=absolute_residuals, provenance=provenance)
    return fit_trust_region(dataset, model_id, bounds=bounds, provenance=provenance)


def predict_dataset(model: TrainedModel, dataset: Dataset) -> np.ndarray:
    return np.array([model.predict(r.meta, r.features.get(model.model_id)) for r in dataset.rows])


__all__ = [
    "FitResult", "fit_linear_relative", "fit_trust_region", "fit_model", "relative_lstsq",
    "relative_objective", "design_matrix", "predict_dataset", "h1t_normalizers", "MODEL_IDS",
    "H1T_NORMALIZERS",
]
