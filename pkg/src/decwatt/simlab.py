"""Software stand-in for the measurement lab.

Power-trace integration, the repeat-until-confident measurement protocol,
and a seeded generator of synthetic data sets whose energies follow a
hidden model (the ground truth for fitting and CV tests).
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, DatasetRow, GroupKey
from .errors import (
    ConfigInvalid,
    DomainError,
    MismatchedTraces,
    NonPositiveMean,
    TooFewSamples,
    NumericalError,
)
from .features import FA_IDS, FS_IDS, INDEX, FeatureId, FeatureVector, count_events
from .models import (
    H1T_NORMALIZERS,
    MODEL_IDS,
    PE_VARIABLES,
    BitstreamMeta,
    HingeTerm,
    TrainedModel,
    make_model,
    param_names,
)
from .trace import StreamBegin, TraceProfile, generate_frame_events

log = logging.getLogger(__name__)


# -- power traces ---------------------------------------------------------------

@dataclass(frozen=True)
class PowerTrace:
    sample_period: float
    samples: tuple

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(float(s) for s in self.samples))
        if not (self.sample_period > 0 and math.isfinite(self.sample_period)):
            raise DomainError(f"sample period must be positive, got {self.sample_period}")
        if len(self.samples) < 2:
            raise DomainError("a power trace needs at least 2 samples")
        if not all(math.isfinite(s) and s >= 0 for s in self.samples):
            raise DomainError("power samples must be finite and non-negative")

    @property
    def duration(self) -> float:
        return self.sample_period * (len(self.samples) - 1)


def integrate_decoding_energy(p_dec: PowerTrace, p_idle: PowerTrace) -> float:
    """Trapezoidal area between the decoding and idle power curves."""
    if p_dec.sample_period != p_idle.sample_period or len(p_dec.samples) != len(p_idle.samples):
        raise MismatchedTraces("decode and idle traces must share sample period and duration")
    d = np.asarray(p_dec.samples) - np.asarray(p_idle.samples)
    return float(p_dec.sample_period * (d.sum() - 0.5 * (d[0] + d[-1])))


def bump_traces(idle_watts: float, extra_watts: float, start: float, stop: float,
                total: float, period: float) -> tuple[PowerTrace, PowerTrace]:
    """Idle trace and a decode trace raised by ``extra_watts`` on [start, stop)."""
    n = int(round(total / period)) + 1
    t = np.arange(n) * period
    idle = np.full(n, float(idle_watts))
    dec = idle + np.where((t >= start - 1e-9) & (t < stop - 1e-9), extra_watts, 0.0)
    return PowerTrace(period, tuple(dec)), PowerTrace(period, tuple(idle))


# -- Student-t critical values --------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 100000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise NumericalError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise DomainError("incomplete beta needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"incomplete beta needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    return 1.0 - tail if t >= 0 else tail


def student_t_critical(alpha: float, dof: int) -> float:
    """Two-sided critical value: CDF(t) = 1 - (1 - alpha) / 2."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if int(dof) != dof or dof < 1:
        raise DomainError(f"degrees of freedom must be an integer >= 1, got {dof}")
    p = 1.0 - (1.0 - alpha) / 2.0
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, dof) < p:
        lo, hi = hi, hi * 2.0
    while hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- confidence-interval protocol -------------------------------------------------------

@dataclass(frozen=True)
class CiDecision:
    accepted: bool
    delta_c: float


@dataclass(frozen=True)
class MeasurementRecord:
    stream_id: str
    samples_E: tuple
    mean: float
    stddev: float
    m: int
    accepted: bool = False
    delta_c: float = float("nan")
    dropped: tuple = ()

    @classmethod
    def from_samples(cls, samples: Sequence[float], stream_id: str = "", **kw) -> "MeasurementRecord":
        x = np.asarray(samples, dtype=float)
        sd = float(x.std(ddof=1)) if x.size >= 2 else float("nan")
        return cls(stream_id, tuple(x.tolist()), float(x.mean()) if x.size else float("nan"), sd, int(x.size), **kw)


def ci_stop_decision(record: MeasurementRecord, alpha: float = 0.99, beta: float = 0.02) -> CiDecision:
    if record.m < 2:
        raise TooFewSamples(f"the confidence rule needs m >= 2 samples, got {record.m}")
    if not record.mean > 0:
        raise NonPositiveMean(f"mean energy must be > 0, got {record.mean}")
    delta_c = 2.0 * record.stddev / math.sqrt(record.m) * student_t_critical(alpha, record.m - 1)
    return CiDecision(delta_c < beta * record.mean, delta_c)


def simulate_measurement_series(
    true_energy: float,
    noise_rel_sigma: float,
    seed: int,
    alpha: float = 0.99,
    beta: float = 0.02,
    max_m: int = 1000,
    drop_outliers: bool = False,
    stream_id: str = "",
) -> MeasurementRecord:
    """Repeat noisy measurements until the confidence rule accepts or ``max_m`` is hit.

    With ``drop_outliers`` a new sample further than 3 sigma from the mean
    of the kept samples is discarded (needs at least 3 kept samples).
    """
    if not true_energy > 0:
        raise DomainError("true energy must be > 0")
    if noise_rel_sigma < 0:
        raise DomainError("noise must be >= 0")
    max_m = max(2, int(max_m))
    rng = np.random.default_rng(seed)
    draw = lambda: true_energy * (1.0 + noise_rel_sigma * rng.standard_normal())
    kept = [draw(), draw()]
    dropped = []
    draws = 2
    while True:
        rec = MeasurementRecord.from_samples(kept, stream_id)
        decision = ci_stop_decision(rec, alpha, beta)
        if decision.accepted or draws >= max_m:
            return MeasurementRecord(stream_id, rec.samples_E, rec.mean, rec.stddev, rec.m,
                                     decision.accepted, decision.delta_c, tuple(dropped))
        s = draw()
        draws += 1
        if drop_outliers and len(kept) >= 3 and rec.stddev > 0 and abs(s - rec.mean) > 3.0 * rec.stddev:
            dropped.append(s)
        else:
            kept.append(s)


# -- synthetic data sets ---------------------------------------------------------

# name, width, height, frame rate
SEQUENCES = (
    ("PeopleOnStreet", 2560, 1600, 30.0),
    ("Traffic", 2560, 1600, 30.0),
    ("Kimono", 1920, 1080, 24.0),
    ("RaceHorsesC", 832, 480, 30.0),
    ("BasketballPass", 416, 240, 50.0),
    ("BlowingBubbles", 416, 240, 50.0),
    ("BQSquare", 416, 240, 60.0),
    ("RaceHorsesD", 416, 240, 30.0),
    ("vidyo3", 1280, 720, 60.0),
    ("SlideEditing", 1280, 720, 30.0),
)
RESOLUTIONS = tuple(sorted({(w, h) for _, w, h, _ in SEQUENCES}))
CONFIGS = ("intra", "lowdelay_P", "lowdelay", "randomaccess")
QPS = (10, 32, 45)
MAX_FRAMES = 8
_CTU_PIXELS = 64 * 64


def _slice_type(config: str, frame_index: int, rng: random.Random) -> str:
    if config == "intra" or frame_index == 0:
        return "I"
    if config == "lowdelay_P":
        return "P"
    if config == "lowdelay":
        return "B"
    return "B" if rng.random() < 0.8 else "P"


def default_hidden_params(model_id: str) -> dict:
    """Plausible ground-truth parameters (joules, watts) for each model."""
    g = np.random.default_rng(7919)
    if model_id == "FA":
        e = g.uniform(0.5, 2.0, len(FA_IDS)) * 2e-6
        e[INDEX["FA"][FeatureId("E_0")]] = 4e-3
        e[INDEX["FA"][FeatureId("SAO_allComps")]] = -1.0e-6
        # chroma blocks sit one level deeper, so depth-1 chroma counters never fire
        for name in ("TrIntraC", "TrInterC"):
            e[INDEX["FA"][FeatureId(name, 1)]] = 0.0
        return dict(zip(param_names("FA"), e.tolist()))
    if model_id == "FS":
        e = g.uniform(0.5, 2.0, len(FS_IDS)) * 5e-6
        e[INDEX["FS"][FeatureId("E_0")]] = 4e-3
        return dict(zip(param_names("FS"), e.tolist()))
    table = {
        "M": [2.0e-9, 3.5e-9],
        "T": [2.0e-3, 1.6],
        "H1T": [2.4, 0.12, -0.05, -0.08],
        "H2T": [4.0e-9, 0.3, 2.0e-8, 1.2],
        "H2": [3.0e-9, 6.0e-9, 1.0e-8, 2.0e-8],
        "H3": [1.0e-3, 1.5e-8, 1.0e-8, 0.8],
    }
    if model_id == "PE":
        return {"const": 1.0e-3, "pe_if": 2.0e-9, "pe_l1dm": 6.0e-8}
    return dict(zip(param_names(model_id), table[model_id]))


def hidden_model(model_id: str, params: Optional[dict] = None, seed: Optional[int] = None) -> TrainedModel:
    params = dict(default_hidden_params(model_id), **(params or {}))
    prov = {"seed": seed, "fold_spec": None, "dataset_digest": None, "role": "hidden truth"}
    if model_id == "PE":
        # a linear truth written as hinges with knots at zero
        basis = [HingeTerm(0, HingeTerm.CONSTANT, None, float(params["const"]))]
        basis += [HingeTerm(i, HingeTerm.POS, 0.0, float(params[v])) for i, v in enumerate(PE_VARIABLES)]
        return make_model("PE", None, mars_basis=basis, provenance=prov)
    names = param_names(model_id)
    unknown = set(params) - set(names)
    if unknown:
        raise ConfigInvalid(f"unknown {model_id} parameters {sorted(unknown)}")
    normalizers = {}
    if model_id == "H1T":
        S_max = max(w * h for _, w, h, _ in SEQUENCES)
        f_max = max(f for *_, f in SEQUENCES)
        normalizers = dict(zip(H1T_NORMALIZERS, (float(S_max), f_max, float(min(QPS)))))
    return make_model(model_id, [params[n] for n in names], normalizers=normalizers, provenance=prov)


@dataclass
class GeneratorConfig:
    model_id: str = "FS"
    hidden_params: dict = field(default_factory=dict)
    noise_rel_sigma: float = 0.0
    seed: int = 0
    trace_size_range: tuple = (1, 20)  # CTUs coded per picture
    ctu_fraction: float = 0.02  # share of a picture's CTUs that are traced
    measure: bool = False  # pass energies through simulate_measurement_series
    alpha: float = 0.99
    beta: float = 0.02
    max_m: int = 50
    qps: tuple = QPS
    configs: tuple = CONFIGS
    max_frames: int = MAX_FRAMES
    fixed_point_log: bool = False

    def validate(self) -> None:
        if self.model_id not in MODEL_IDS:
            raise ConfigInvalid(f"unknown model {self.model_id!r}")
        if not (self.noise_rel_sigma >= 0 and math.isfinite(self.noise_rel_sigma)):
            raise ConfigInvalid("noise_rel_sigma must be >= 0")
        lo, hi = self.trace_size_range
        if not 1 <= lo <= hi:
            raise ConfigInvalid(f"bad trace_size_range {self.trace_size_range}")
        if not self.ctu_fraction > 0:
            raise ConfigInvalid("ctu_fraction must be > 0")
        if not self.qps or any(not 0 <= q <= 51 for q in self.qps):
            raise ConfigInvalid(f"QPs must lie in 0..51, got {self.qps}")
        if not self.configs or any(c not in CONFIGS for c in self.configs):
            raise ConfigInvalid(f"configs must be drawn from {CONFIGS}")
        if not 1 <= self.max_frames:
            raise ConfigInvalid("max_frames must be >= 1")
        if not 0 < self.alpha < 1 or not self.beta > 0:
            raise ConfigInvalid("need 0 < alpha < 1 and beta > 0")


# Hardware-side constants that turn trace statistics into execution
# variables. Fixed across seeds: they describe one decoding system.
_SYS = np.random.default_rng(104729)
_TIME_PER_COUNT = _SYS.uniform(0.5, 2.0, len(FA_IDS)) * 2e-6
_IF_PER_COUNT = _SYS.uniform(0.5, 2.0, len(FA_IDS)) * 400.0
_L1_PER_COUNT = _SYS.uniform(0.5, 2.0, len(FA_IDS)) * 12.0
_RA_PER_COUNT = _SYS.uniform(0.5, 2.0, len(FA_IDS)) * 300.0
_WA_PER_COUNT = _SYS.uniform(0.5, 2.0, len(FA_IDS)) * 150.0
_BITS_PER_EVENT = 14.0
del _SYS


def _group_grid(config: GeneratorConfig) -> list:
    return [(name, cfg, qp) for name, *_ in SEQUENCES for cfg in config.configs for qp in config.qps]


def generate_dataset(config: GeneratorConfig, n_rows: Optional[int] = None) -> tuple[Dataset, TrainedModel]:
    """Synthetic data set with (sequence, config, QP) groups coded at 1..max_frames frames.

    Groups are visited in a seeded order and each contributes up to
    ``max_frames`` rows; ``n_rows`` defaults to the full grid. Returns the
    data set and the hidden model that produced its energies.
    """
    config.validate()
    grid = _group_grid(config)
    if n_rows is None:
        n_rows = len(grid) * config.max_frames
    if n_rows < 1:
        raise ConfigInvalid("n_rows must be >= 1")
    truth = hidden_model(config.model_id, config.hidden_params, config.seed)
    rng = random.Random(config.seed)
    noise = np.random.default_rng(config.seed)
    order = list(range(len(grid)))
    rng.shuffle(order)
    sequences = {name: (w * h, f) for name, w, h, f in SEQUENCES}
    base_fa, base_fs = count_events([StreamBegin()])

    rows = []
    visit = 0
    while len(rows) < n_rows:
        name, cfg, qp = grid[order[visit % len(grid)]]
        replica = visit // len(grid)
        visit += 1
        seq = name if replica == 0 else f"{name}~{replica}"
        S, fps = sequences[name]
        lo, hi = config.trace_size_range
        n_ctus = int(min(max(round(S / _CTU_PIXELS * config.ctu_fraction), lo), hi))
        profile = TraceProfile.draw(rng, qp=qp)
        fa, fs = base_fa.copy(), base_fs.copy()
        bits = t_dec = 0.0
        pe_if = pe_l1 = n_ra = n_wa = 0.0
        intra = 0
        for n in range(1, config.max_frames + 1):
            if len(rows) >= n_rows:
                break
            st = _slice_type(cfg, n - 1, rng)
            events = generate_frame_events(rng, n_ctus, st, profile, n_slices=1)
            f_fa, f_fs = count_events(events, config.fixed_point_log)
            fa += f_fa
            fs += f_fs
            scale = (S / _CTU_PIXELS) / n_ctus
            bits += _BITS_PER_EVENT * len(events) * scale
            t_dec += float(f_fa @ _TIME_PER_COUNT) * scale + 2e-9 * S
            pe_if += float(f_fa @ _IF_PER_COUNT) * scale + 5.0 * S
            pe_l1 += float(f_fa @ _L1_PER_COUNT) * scale + 0.2 * S
            n_ra += float(f_fa @ _RA_PER_COUNT) * scale + 1.5 * S
            n_wa += float(f_fa @ _WA_PER_COUNT) * scale + 1.0 * S
            intra += st == "I"
            meta = BitstreamMeta(
                frame_size_S=S, num_frames_N=n, frame_rate_f=fps, qp_q=qp,
                bitrate_b=bits * fps / n, bits_per_pixel=bits / (S * n),
                intra_fraction_alpha=intra / n, decode_time_t=t_dec,
                pe_counts={"instruction_fetches": pe_if, "l1d_misses": pe_l1},
                mem_counts={"ram_reads_n_ra": n_ra, "writes_n_wa": n_wa},
            )
            feats = {"FA": FeatureVector.from_array("FA", fa), "FS": FeatureVector.from_array("FS", fs)}
            E = truth.predict(meta, feats.get(config.model_id))
            if not E > 0:
                raise ConfigInvalid(f"hidden {config.model_id} model gives non-positive energy {E}")
            sid = f"{seq}_{cfg}_q{qp}_n{n}"
            if config.noise_rel_sigma > 0:
                if config.measure:
                    rec = simulate_measurement_series(
                        E, config.noise_rel_sigma, int(noise.integers(2 ** 63)),
                        config.alpha, config.beta, config.max_m, stream_id=sid)
                    E = rec.mean
                else:
                    E = E * (1.0 + config.noise_rel_sigma * noise.standard_normal())
                if not E > 0:
                    E = abs(E) or 1e-12
            rows.append(DatasetRow(sid, meta, float(E), GroupKey(seq, cfg, qp), n, feats))
    return Dataset(rows), truth


__all__ = [
    "PowerTrace", "integrate_decoding_energy", "bump_traces", "regularized_incomplete_beta",
    "student_t_cdf", "student_t_critical", "CiDecision", "MeasurementRecord", "ci_stop_decision",
    "simulate_measurement_series", "SEQUENCES", "RESOLUTIONS", "CONFIGS", "QPS", "GeneratorConfig",
    "default_hidden_params", "hidden_model", "generate_dataset",
]
