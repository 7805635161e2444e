"""The nine decoding-energy estimators.

Every predictor returns joules.  Models that are linear in their
parameters also expose a design row (``design_row``) so that fitting can
treat them uniformly as ``E ~ row @ params``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DomainError,
    MissingVariables,
    NonPositiveNormalizer,
    WrongKind,
)
from .features import FeatureVector, feature_ids

MODEL_IDS = ("FA", "FS", "PE", "M", "T", "H1T", "H2T", "H2", "H3")
LINEAR_MODELS = ("FA", "FS", "M", "T", "H2T", "H2")
NONLINEAR_MODELS = ("H1T", "H3")

PE_VARIABLES = ("pe_if", "pe_l1dm")

PARAM_NAMES = {
    "M": ("e_ra", "e_wa"),
    "T": ("E_0", "P_mean"),
    "H1T": ("P_max", "c_S", "c_f", "c_q"),
    "H2T": ("c1", "c2", "c3", "c4"),
    "H2": ("c1", "c2", "c3", "c4"),
    "H3": ("C", "h3_alpha", "h3_beta", "gamma"),
}
H1T_NORMALIZERS = ("S_max", "f_max", "q_min")

# Parameter count per model; PE depends on the fitted spline.
ARITY = {"FA": 90, "FS": 27, "PE": None, "M": 2, "T": 2, "H1T": 7, "H2T": 4, "H2": 4, "H3": 4}


def check_model_id(model_id: str) -> str:
    if model_id not in MODEL_IDS:
        raise WrongKind(f"unknown model {model_id!r}; expected one of {', '.join(MODEL_IDS)}")
    return model_id


def param_names(model_id: str) -> tuple[str, ...]:
    check_model_id(model_id)
    if model_id in ("FA", "FS"):
        return tuple(fid.key for fid in feature_ids(model_id))
    if model_id == "PE":
        raise WrongKind("PE parameters are the coefficients of its fitted basis")
    return PARAM_NAMES[model_id]


# -- variables --------------------------------------------------------------

def _finite(name, value):
    if value is not None and not math.isfinite(value):
        raise DataError(f"{name} must be finite, got {value}")


@dataclass(frozen=True)
class BitstreamMeta:
    frame_size_S: int
    num_frames_N: int
    frame_rate_f: float
    qp_q: int
    bitrate_b: float
    bits_per_pixel: float
    intra_fraction_alpha: float
    decode_time_t: Optional[float] = None
    pe_counts: Optional[dict] = None
    mem_counts: Optional[dict] = None

    def __post_init__(self):
        if self.frame_size_S < 1 or self.num_frames_N < 1:
            raise DataError("frame size and frame count must be >= 1")
        for name in ("frame_rate_f", "bitrate_b", "bits_per_pixel", "intra_fraction_alpha", "decode_time_t"):
            _finite(name, getattr(self, name))
        if not 0.0 <= self.intra_fraction_alpha <= 1.0:
            raise DataError(f"intra fraction must lie in [0, 1], got {self.intra_fraction_alpha}")
        for group in (self.pe_counts, self.mem_counts):
            for k, v in (group or {}).items():
                _finite(k, v)

    @property
    def total_bits(self) -> float:
        return self.bits_per_pixel * self.frame_size_S * self.num_frames_N

    @property
    def intra_frames(self) -> float:
        return self.intra_fraction_alpha * self.num_frames_N

    def variable(self, name: str) -> float:
        """Look up a model variable by its short name; raise if absent."""
        getters = {
            "S": lambda m: m.frame_size_S,
            "N": lambda m: m.num_frames_N,
            "f": lambda m: m.frame_rate_f,
            "q": lambda m: m.qp_q,
            "b": lambda m: m.bitrate_b,
            "b_pixel": lambda m: m.bits_per_pixel,
            "alpha": lambda m: m.intra_fraction_alpha,
            "t_dec": lambda m: m.decode_time_t,
            "pe_if": lambda m: (m.pe_counts or {}).get("instruction_fetches"),
            "pe_l1dm": lambda m: (m.pe_counts or {}).get("l1d_misses"),
            "n_ra": lambda m: (m.mem_counts or {}).get("ram_reads_n_ra"),
            "n_wa": lambda m: (m.mem_counts or {}).get("writes_n_wa"),
        }
        try:
            value = getters[name](self)
        except KeyError:
            raise DataError(f"unknown variable {name!r}") from None
        if value is None:
            raise MissingVariables(f"bit stream variable {name!r} is not available")
        return float(value)


class VariableSpec(NamedTuple):
    names: tuple
    execution_required: bool


def variables_required(model_id: str) -> VariableSpec:
    check_model_id(model_id)
    table = {
        "PE": (PE_VARIABLES, True),
        "M": (("n_ra", "n_wa"), True),
        "T": (("t_dec",), True),
        "H1T": (("S", "f", "q", "t_dec"), True),
        "H2T": (("alpha", "b", "t_dec"), True),
        "H2": (("alpha", "b_pixel", "N", "S"), False),
        "H3": (("b_pixel", "N", "S"), False),
    }
    if model_id in ("FA", "FS"):
        return VariableSpec(tuple(fid.key for fid in feature_ids(model_id)), False)
    names, ex = table[model_id]
    return VariableSpec(names, ex)


# -- predictors ---------------------------------------------------------------

def predict_feature_linear(features: FeatureVector, energies: Sequence[float]) -> float:
    energies = np.asarray(energies, dtype=float)
    n = features.as_array()
    if energies.shape != n.shape:
        raise DimensionMismatch(
            f"{features.model_kind} vector has {n.size} entries but {energies.size} energies were given"
        )
    return float(n @ energies)


class HingeTerm(NamedTuple):
    variable_index: int
    direction: str  # "constant" | "max(0,x-k)" | "max(0,k-x)"
    knot_k: Optional[float]
    coefficient: float

    CONSTANT = "constant"
    POS = "max(0,x-k)"
    NEG = "max(0,k-x)"

    def basis(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.direction == HingeTerm.CONSTANT:
            return np.ones_like(x)
        if self.direction == HingeTerm.POS:
            return np.maximum(0.0, x - self.knot_k)
        if self.direction == HingeTerm.NEG:
            return np.maximum(0.0, self.knot_k - x)
        raise DataError(f"unknown hinge direction {self.direction!r}")

    def to_dict(self) -> dict:
        return {
            "variable": PE_VARIABLES[self.variable_index] if self.direction != HingeTerm.CONSTANT else None,
            "variable_index": self.variable_index,
            "direction": self.direction,
            "knot": self.knot_k,
            "coefficient": self.coefficient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HingeTerm":
        term = cls(int(d["variable_index"]), d["direction"], d.get("knot"), float(d["coefficient"]))
        if term.direction not in (cls.CONSTANT, cls.POS, cls.NEG):
            raise DataError(f"unknown hinge direction {term.direction!r}")
        if term.direction != cls.CONSTANT and (term.knot_k is None or not math.isfinite(term.knot_k)):
            raise DataError("hinge terms need a finite knot")
        return term


def pe_vector(meta: BitstreamMeta) -> np.ndarray:
    return np.array([meta.variable(name) for name in PE_VARIABLES])


def predict_mars(meta: BitstreamMeta, basis: Sequence[HingeTerm]) -> float:
    x = pe_vector(meta)
    return float(sum(t.coefficient * float(t.basis(x[t.variable_index])) for t in basis))


def predict_ram(meta: BitstreamMeta, e_ra: float, e_wa: float) -> float:
    return e_ra * meta.variable("n_ra") + e_wa * meta.variable("n_wa")


def predict_time(meta: BitstreamMeta, E_0: float, P_mean: float) -> float:
    return E_0 + P_mean * meta.variable("t_dec")


def predict_h1t(meta: BitstreamMeta, params: Sequence[float], normalizers: dict) -> float:
    P_max, c_S, c_f, c_q = params
    S_max, f_max, q_min = (float(normalizers[k]) for k in H1T_NORMALIZERS)
    if min(S_max, f_max, q_min) <= 0:
        raise NonPositiveNormalizer(f"H1T normalizers must be positive: {normalizers}")
    t = meta.variable("t_dec")
    S, f, q = meta.variable("S"), meta.variable("f"), meta.variable("q")
    return P_max * (S / S_max) ** c_S * (f / f_max) ** c_f * (q / q_min) ** c_q * t


def predict_h2t(meta: BitstreamMeta, params: Sequence[float]) -> float:
    c1, c2, c3, c4 = params
    a, b, t = meta.variable("alpha"), meta.variable("b"), meta.variable("t_dec")
    return (c1 * a * b + c2 * a + c3 * b + c4) * t


def predict_h2(meta: BitstreamMeta, params: Sequence[float]) -> float:
    c1, c2, c3, c4 = params
    a, bp = meta.variable("alpha"), meta.variable("b_pixel")
    pixels = meta.variable("N") * meta.variable("S")
    return (c1 * a * bp + c2 * a + c3 * bp + c4) * pixels


def predict_h3(meta: BitstreamMeta, params: Sequence[float]) -> float:
    C, h3_alpha, h3_beta, gamma = params
    bp = meta.variable("b_pixel")
    if bp < 0 or (bp == 0 and gamma < 0):
        raise DomainError(f"b_pixel={bp} with gamma={gamma} is outside the model domain")
    return C + meta.variable("S") * meta.variable("N") * (h3_alpha + h3_beta * bp ** gamma)


def design_row(model_id: str, meta: Optional[BitstreamMeta], features: Optional[FeatureVector]) -> np.ndarray:
    """Row r with prediction ``r @ params`` for the parameter-linear models."""
    if model_id in ("FA", "FS"):
        if features is None:
            raise MissingVariables(f"{model_id} needs a feature vector")
        if features.model_kind != model_id:
            raise DimensionMismatch(f"{model_id} model given a {features.model_kind} vector")
        return features.as_array()
    if meta is None:
        raise MissingVariables(f"{model_id} needs bit stream variables")
    v = meta.variable
    if model_id == "M":
        return np.array([v("n_ra"), v("n_wa")])
    if model_id == "T":
        return np.array([1.0, v("t_dec")])
    if model_id == "H2T":
        a, b, t = v("alpha"), v("b"), v("t_dec")
        return np.array([a * b * t, a * t, b * t, t])
    if model_id == "H2":
        a, bp = v("alpha"), v("b_pixel")
        px = v("N") * v("S")
        return np.array([a * bp * px, a * px, bp * px, px])
    raise WrongKind(f"{model_id} is not linear in its parameters")


# -- trained models ------------------------------------------------------------

@dataclass(frozen=True)
class TrainedModel:
    model_id: str
    param_names: tuple
    params: tuple
    normalizers: dict = field(default_factory=dict)
    mars_basis: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        check_model_id(self.model_id)
        if len(self.param_names) != len(self.params):
            raise DimensionMismatch("parameter names and values differ in length")
        expected = ARITY[self.model_id]
        if expected is not None and self.arity != expected:
            raise DimensionMismatch(f"{self.model_id} needs {expected} parameters, got {self.arity}")
        if self.model_id == "PE" and len(self.mars_basis) != len(self.params):
            raise DimensionMismatch("PE parameters must match its basis terms")

    @property
    def arity(self) -> int:
        # Table I counts the H1T normalizers among its parameters.
        extra = len(H1T_NORMALIZERS) if self.model_id == "H1T" else 0
        return len(self.params) + extra

    def named_params(self) -> dict:
        return dict(zip(self.param_names, self.params))

    def predict(self, meta: Optional[BitstreamMeta] = None, features: Optional[FeatureVector] = None) -> float:
        mid = self.model_id
        if mid in ("FA", "FS"):
            if features is None:
                raise MissingVariables(f"{mid} needs a feature vector")
            if features.model_kind != mid:
                raise DimensionMismatch(f"{mid} model given a {features.model_kind} vector")
            return predict_feature_linear(features, self.params)
        if meta is None:
            raise MissingVariables(f"{mid} needs bit stream variables")
        if mid == "PE":
            return predict_mars(meta, self.mars_basis)
        if mid == "M":
            return predict_ram(meta, *self.params)
        if mid == "T":
            return predict_time(meta, *self.params)
        if mid == "H1T":
            return predict_h1t(meta, self.params, self.normalizers)
        if mid == "H2T":
            return predict_h2t(meta, self.params)
        if mid == "H2":
            return predict_h2(meta, self.params)
        return predict_h3(meta, self.params)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "params": [[n, float(v)] for n, v in zip(self.param_names, self.params)],
            "normalizers": {k: float(v) for k, v in self.normalizers.items()},
            "mars_basis": [t.to_dict() for t in self.mars_basis],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        try:
            names = tuple(p[0] for p in doc["params"])
            values = tuple(float(p[1]) for p in doc["params"])
            return cls(
                model_id=doc["model_id"],
                param_names=names,
                params=values,
                normalizers={k: float(v) for k, v in doc.get("normalizers", {}).items()},
                mars_basis=tuple(HingeTerm.from_dict(t) for t in doc.get("mars_basis", [])),
                provenance=doc.get("provenance", {}),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise DataError(f"malformed trained-model document: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"trained-model file is not JSON: {exc}") from None
        return cls.from_dict(doc)


def make_model(model_id: str, params, **kwargs) -> TrainedModel:
    """Build a TrainedModel from a bare parameter vector."""
    if model_id == "PE":
        basis = tuple(kwargs.pop("mars_basis"))
        names = tuple(f"B{i}" for i in range(len(basis)))
        return TrainedModel("PE", names, tuple(t.coefficient for t in basis), mars_basis=basis, **kwargs)
    names = param_names(model_id)
    return TrainedModel(model_id, names, tuple(float(p) for p in params), **kwargs)
