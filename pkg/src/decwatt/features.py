"""Bit-stream feature numbers for the accurate (FA) and simple (FS) models.

Feature ids follow the row order of the feature table, depth ascending
within a label.  ``count_features`` makes one pass over a trace and applies
the per-event counting rules; log-valued features (MVD, val) use the exact
``log2(v + 2)`` unless ``fixed_point_log`` is set.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Optional

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateStreamBegin,
    MissingStreamBegin,
    WrongKind,
)
from .trace import (
    BiPu,
    BoundaryStrength,
    Cbf,
    Coeff,
    CoeffG1,
    CoeffRemaining,
    CsbfNonDc,
    CuInter,
    CuIntra,
    CuSkip,
    IntraLumaMode,
    MotionVector,
    MvdLarge,
    PuInter,
    SaoCtu,
    Slice,
    StreamBegin,
    SyntaxEventTrace,
    TransformSkip,
    validate_event,
)

KINDS = ("FA", "FS")


class FeatureId(NamedTuple):
    name: str
    depth: Optional[int] = None

    @property
    def key(self) -> str:
        return self.name if self.depth is None else f"{self.name}({self.depth})"

    @classmethod
    def from_key(cls, key: str) -> "FeatureId":
        if key.endswith(")") and "(" in key:
            name, _, depth = key[:-1].partition("(")
            return cls(name, int(depth))
        return cls(key, None)

    def __str__(self) -> str:
        return self.key


# (label, depths or None, in FS, in FA) in table order
_TABLE = [
    ("E_0", None, True, True),
    ("Islice", None, True, True),
    ("PBslice", None, True, True),
    ("intraCU", None, True, True),
    ("pla", range(1, 5), False, True),
    ("dc", range(1, 5), False, True),
    ("hvd", range(1, 5), False, True),
    ("ang", range(1, 5), False, True),
    ("all", range(1, 5), True, False),
    ("noMPM", None, False, True),
    ("skip", range(0, 4), True, True),
    ("merge", range(0, 4), False, True),
    ("mergeSMP", range(0, 4), False, True),
    ("mergeAMP", range(0, 3), False, True),
    ("inter", range(0, 4), False, True),
    ("interSMP", range(0, 4), False, True),
    ("interAMP", range(0, 3), False, True),
    ("interCU", range(0, 4), True, False),
    ("fracpelHor", range(0, 4), False, True),
    ("fracpelVer", range(0, 4), False, True),
    ("fracpelAvg", None, True, False),
    ("chrHalfpel", range(0, 4), False, True),
    ("bi", None, True, True),
    ("MVD", None, False, True),
    ("coeff", None, True, True),
    ("coeffg1", None, False, True),
    ("CSBF", None, False, True),
    ("val", None, True, True),
    ("TrIntraY", range(1, 5), False, True),
    ("TrIntraC", range(1, 5), False, True),
    ("TrInterY", range(1, 5), False, True),
    ("TrInterC", range(1, 5), False, True),
    ("Tr", range(1, 5), True, False),
    ("TSF", None, False, True),
    ("Bs0", None, False, True),
    ("Bs1", None, False, True),
    ("Bs2", None, False, True),
    ("Bs", None, True, False),
    ("SAO_Y_BO", None, False, True),
    ("SAO_Y_EO", None, False, True),
    ("SAO_Y", None, True, False),
    ("SAO_C_BO", None, False, True),
    ("SAO_C_EO", None, False, True),
    ("SAO_C", None, True, False),
    ("SAO_allComps", None, False, True),
]


def _enumerate(column: int) -> tuple[FeatureId, ...]:
    ids = []
    for row in _TABLE:
        if not row[column]:
            continue
        label, depths = row[0], row[1]
        if depths is None:
            ids.append(FeatureId(label))
        else:
            ids.extend(FeatureId(label, d) for d in depths)
    return tuple(ids)


FS_IDS = _enumerate(2)
FA_IDS = _enumerate(3)
IDS = {"FA": FA_IDS, "FS": FS_IDS}
INDEX = {kind: {fid: i for i, fid in enumerate(ids)} for kind, ids in IDS.items()}

# Real-valued by construction; everything else is an integer count.
REAL_VALUED = frozenset({"fracpelHor", "fracpelVer", "fracpelAvg", "chrHalfpel", "bi", "MVD", "val"})

# FS entries that cannot be rebuilt from an FA vector.
FS_NON_DERIVABLE = frozenset(FeatureId("interCU", d) for d in range(4))


def feature_ids(kind: str) -> tuple[FeatureId, ...]:
    try:
        return IDS[kind]
    except KeyError:
        raise WrongKind(f"unknown feature kind {kind!r}") from None


# -- logarithm of Exp-Golomb coded values ---------------------------------------

def exact_log2(v: int) -> float:
    return math.log2(v + 2)


def fixed_point_log2(v: int) -> float:
    """Bit-position approximation of ``log2(v + 2)``.

    Position of the highest set bit, plus 0.585 when the next lower bit is
    set as well.
    """
    x = v + 2
    p = x.bit_length() - 1
    if p >= 1 and (x >> (p - 1)) & 1:
        return p + 0.585
    return float(p)


# -- feature vectors -----------------------------------------------------------

@dataclass
class FeatureVector:
    model_kind: str
    counts: dict

    def __post_init__(self):
        ids = feature_ids(self.model_kind)
        counts = {fid: 0.0 for fid in ids}
        for fid, value in self.counts.items():
            fid = FeatureId.from_key(fid) if isinstance(fid, str) else FeatureId(*fid)
            if fid not in counts:
                raise DimensionMismatch(f"{fid.key} is not a {self.model_kind} feature")
            value = float(value)
            if not math.isfinite(value) or value < 0:
                raise DataError(f"count for {fid.key} must be finite and >= 0, got {value}")
            counts[fid] = value
        self.counts = counts

    def __getitem__(self, key) -> float:
        if isinstance(key, str):
            key = FeatureId.from_key(key)
        return self.counts[key]

    def as_array(self) -> np.ndarray:
        return np.array([self.counts[fid] for fid in feature_ids(self.model_kind)], dtype=float)

    @classmethod
    def from_array(cls, kind: str, values) -> "FeatureVector":
        ids = feature_ids(kind)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(ids),):
            raise DimensionMismatch(f"{kind} needs {len(ids)} values, got {values.shape}")
        return cls(kind, dict(zip(ids, values.tolist())))

    def nonzero(self) -> dict:
        return {fid.key: v for fid, v in self.counts.items() if v}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureVector)
            and self.model_kind == other.model_kind
            and self.counts == other.counts
        )


class _Counter:
    """Accumulates FA and FS counts in the same pass."""

    def __init__(self, fixed_point_log: bool = False):
        self.fa = np.zeros(len(FA_IDS))
        self.fs = np.zeros(len(FS_IDS))
        self.log2 = fixed_point_log2 if fixed_point_log else exact_log2
        self._fa = INDEX["FA"]
        self._fs = INDEX["FS"]

    def _a(self, name, depth=None, inc=1.0):
        self.fa[self._fa[FeatureId(name, depth)]] += inc

    def _s(self, name, depth=None, inc=1.0):
        self.fs[self._fs[FeatureId(name, depth)]] += inc

    def _both(self, name, depth=None, inc=1.0):
        self._a(name, depth, inc)
        self._s(name, depth, inc)

    def add(self, ev) -> None:
        t = type(ev)
        if t is Coeff:
            self._both("coeff")
        elif t is Cbf:
            d = ev.depth if ev.plane == "Y" else min(ev.depth + 1, 4)
            suffix = "Y" if ev.plane == "Y" else "C"
            self._a(("TrIntra" if ev.intra else "TrInter") + suffix, d)
            self._s("Tr", d)
        elif t is BoundaryStrength:
            self._a(f"Bs{ev.bs}")
            self._s("Bs")
        elif t is CoeffG1:
            self._a("coeffg1")
        elif t is CoeffRemaining:
            self._both("val", inc=self.log2(ev.value))
        elif t is MotionVector:
            self._motion(ev)
        elif t is PuInter:
            if ev.part_mode == 0:
                shape = ""
            elif ev.part_mode in (1, 2):
                shape = "SMP"
            else:
                shape = "AMP"
            self._a(("merge" if ev.merge else "inter") + shape, ev.depth)
        elif t is IntraLumaMode:
            m = ev.mode
            if m == 0:
                label = "pla"
            elif m == 1:
                label = "dc"
            elif m in (2, 10, 26, 34):
                label = "hvd"
            else:
                label = "ang"
            self._a(label, ev.depth)
            self._s("all", ev.depth)
            if not ev.mpm_hit:
                self._a("noMPM")
        elif t is CuIntra:
            self._both("intraCU")
        elif t is CuInter:
            self._s("interCU", ev.depth)
        elif t is CuSkip:
            self._both("skip", ev.depth)
        elif t is BiPu:
            self._both("bi", inc=(ev.pb_w / 4) * (ev.pb_h / 4))
        elif t is MvdLarge:
            self._a("MVD", inc=self.log2(ev.abs_mvd_minus2))
        elif t is CsbfNonDc:
            self._a("CSBF")
        elif t is TransformSkip:
            self._a("TSF")
        elif t is SaoCtu:
            self._sao(ev)
        elif t is Slice:
            self._both("Islice" if ev.slice_type == "I" else "PBslice")
        elif t is StreamBegin:
            self._both("E_0")
        else:
            raise DataError(f"not a syntax event: {ev!r}")

    def _motion(self, ev: MotionVector) -> None:
        area = ev.pb_w * ev.pb_h
        frac_x = ev.mv_x % 4 != 0
        frac_y = ev.mv_y % 4 != 0
        luma = 0.0
        if frac_y:
            self._a("fracpelVer", ev.depth, area)
            luma += area
        if frac_x:
            hor = area + (6 * ev.pb_w if frac_y else 0)
            self._a("fracpelHor", ev.depth, hor)
            luma += hor
        if luma:
            self._s("fracpelAvg", inc=luma)
        chroma = (ev.pb_w / 2) * (ev.pb_h / 2)
        # Python's % is already the non-negative remainder for a positive modulus.
        if ev.mv_x % 8 == 4:
            self._a("chrHalfpel", ev.depth, chroma)
        if ev.mv_y % 8 == 4:
            self._a("chrHalfpel", ev.depth, chroma)

    def _sao(self, ev: SaoCtu) -> None:
        if ev.type_y:
            self._a("SAO_Y_BO" if ev.type_y == 1 else "SAO_Y_EO")
            self._s("SAO_Y")
        for tc in (ev.type_cb, ev.type_cr):
            if tc:
                self._a("SAO_C_BO" if tc == 1 else "SAO_C_EO")
                self._s("SAO_C")
        if ev.type_y and ev.type_cb and ev.type_cr:
            self._a("SAO_allComps")


def count_events(events: Iterable, fixed_point_log: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Raw (FA, FS) count arrays for an event sequence, in id order.

    Does not require a StreamBegin; used to count single pictures whose
    counts are later summed into whole-stream vectors.
    """
    counter = _Counter(fixed_point_log)
    add = counter.add
    for ev in events:
        add(ev)
    return counter.fa, counter.fs


def count_features(trace: SyntaxEventTrace, kind: str = "FA", fixed_point_log: bool = False) -> FeatureVector:
    feature_ids(kind)
    if not trace.events or not isinstance(trace.events[0], StreamBegin):
        raise MissingStreamBegin("trace must start with SB")
    fa, fs = count_events(trace.events, fixed_point_log)
    if fa[INDEX["FA"][FeatureId("E_0")]] != 1:
        raise DuplicateStreamBegin("trace must contain exactly one SB")
    return FeatureVector.from_array(kind, fa if kind == "FA" else fs)


def count_features_checked(trace: SyntaxEventTrace, kind: str = "FA", fixed_point_log: bool = False) -> FeatureVector:
    """Like :func:`count_features` but range-checks every event first.

    Traces built in memory bypass the parser; use this when their origin is
    not trusted.
    """
    for i, ev in enumerate(trace.events):
        validate_event(ev, i + 1)
    return count_features(trace, kind, fixed_point_log)


def aggregate_fa_to_fs(fa: FeatureVector) -> dict:
    """Every FS entry derivable from an FA vector.

    Returns a mapping FeatureId -> value covering all FS ids except the
    per-depth ``interCU`` counters, which FA does not track.
    """
    if fa.model_kind != "FA":
        raise WrongKind(f"expected an FA vector, got {fa.model_kind}")
    c = fa.counts
    out = {}
    for fid in FS_IDS:
        name, d = fid
        if fid in FS_NON_DERIVABLE:
            continue
        if name == "all":
            out[fid] = sum(c[FeatureId(label, d)] for label in ("pla", "dc", "hvd", "ang"))
        elif name == "fracpelAvg":
            out[fid] = sum(c[FeatureId("fracpelVer", k)] + c[FeatureId("fracpelHor", k)] for k in range(4))
        elif name == "Tr":
            out[fid] = sum(c[FeatureId(label, d)] for label in ("TrIntraY", "TrIntraC", "TrInterY", "TrInterC"))
        elif name == "Bs":
            out[fid] = c[FeatureId("Bs0")] + c[FeatureId("Bs1")] + c[FeatureId("Bs2")]
        elif name == "SAO_Y":
            out[fid] = c[FeatureId("SAO_Y_BO")] + c[FeatureId("SAO_Y_EO")]
        elif name == "SAO_C":
            out[fid] = c[FeatureId("SAO_C_BO")] + c[FeatureId("SAO_C_EO")]
        else:
            out[fid] = c[fid]
    return out


# -- CSV ------------------------------------------------------------------------

def format_count(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_feature_csv(vector: FeatureVector, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["feature", "depth", "count"])
    for fid in feature_ids(vector.model_kind):
        writer.writerow([fid.name, "" if fid.depth is None else fid.depth, format_count(vector.counts[fid])])


def feature_csv_text(vector: FeatureVector) -> str:
    buf = io.StringIO()
    write_feature_csv(vector, buf)
    return buf.getvalue()


def read_feature_csv(fh, kind: str | None = None) -> FeatureVector:
    """Read a ``feature,depth,count`` file; the kind is inferred from its ids."""
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != ["feature", "depth", "count"]:
        raise DataError(f"bad feature CSV header {header!r}")
    counts = {}
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            raise DataError(f"bad feature CSV row {row!r}")
        name, depth, value = row
        counts[FeatureId(name, int(depth) if depth else None)] = float(value)
    if kind is None:
        for candidate in KINDS:
            if set(counts) == set(IDS[candidate]):
                kind = candidate
                break
        else:
            raise DimensionMismatch(f"feature CSV with {len(counts)} ids matches neither FA nor FS")
    elif set(counts) != set(IDS[kind]):
        raise DimensionMismatch(f"feature CSV does not hold the {len(IDS[kind])} {kind} ids")
    return FeatureVector(kind, counts)


def vector_from_mapping(kind: str, mapping: Mapping) -> FeatureVector:
    return FeatureVector(kind, dict(mapping))
