"""Decoder-instrumentation event traces.

A trace is the offline record of the counter hooks a modified HEVC decoder
would fire while parsing a bit stream.  One event per line::

    # comment
    SB
    SL t=I
    CUI d=0
    ILM d=1 m=26 mpm=1
    CBF d=1 c=Cb intra=1

The full grammar lives in ``docs/trace_format.md``.  Every field is range
checked when parsed; the first violation raises.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, TextIO, Union

from .errors import (
    DuplicateStreamBegin,
    MalformedLine,
    MissingStreamBegin,
    RangeViolation,
)

AMP_PART_MODES = frozenset({4, 5, 6, 7})
SMP_PART_MODES = frozenset({1, 2})
PLANES = ("Y", "Cb", "Cr")
SLICE_TYPES = ("I", "P", "B")


# -- event variants ----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class StreamBegin:
    TAG = "SB"


@dataclass(frozen=True, slots=True)
class Slice:
    slice_type: str
    TAG = "SL"


@dataclass(frozen=True, slots=True)
class CuIntra:
    depth: int
    TAG = "CUI"


@dataclass(frozen=True, slots=True)
class CuInter:
    depth: int
    TAG = "CUP"


@dataclass(frozen=True, slots=True)
class CuSkip:
    depth: int
    TAG = "CUS"


@dataclass(frozen=True, slots=True)
class IntraLumaMode:
    depth: int
    mode: int
    mpm_hit: bool
    TAG = "ILM"


@dataclass(frozen=True, slots=True)
class PuInter:
    depth: int
    merge: bool
    part_mode: int
    TAG = "PU"


@dataclass(frozen=True, slots=True)
class MotionVector:
    depth: int
    pb_w: int
    pb_h: int
    mv_x: int
    mv_y: int
    TAG = "MV"


@dataclass(frozen=True, slots=True)
class BiPu:
    depth: int
    pb_w: int
    pb_h: int
    TAG = "BI"


@dataclass(frozen=True, slots=True)
class MvdLarge:
    abs_mvd_minus2: int
    TAG = "MVD"


@dataclass(frozen=True, slots=True)
class Coeff:
    TAG = "C"


@dataclass(frozen=True, slots=True)
class CoeffG1:
    TAG = "CG1"


@dataclass(frozen=True, slots=True)
class CsbfNonDc:
    TAG = "CSB"


@dataclass(frozen=True, slots=True)
class CoeffRemaining:
    value: int
    TAG = "CR"


@dataclass(frozen=True, slots=True)
class Cbf:
    depth: int
    plane: str
    intra: bool
    TAG = "CBF"


@dataclass(frozen=True, slots=True)
class TransformSkip:
    TAG = "TSF"


@dataclass(frozen=True, slots=True)
class BoundaryStrength:
    bs: int
    TAG = "BS"


@dataclass(frozen=True, slots=True)
class SaoCtu:
    type_y: int
    type_cb: int
    type_cr: int
    TAG = "SAO"


SyntaxEvent = Union[
    StreamBegin, Slice, CuIntra, CuInter, CuSkip, IntraLumaMode, PuInter,
    MotionVector, BiPu, MvdLarge, Coeff, CoeffG1, CsbfNonDc, CoeffRemaining,
    Cbf, TransformSkip, BoundaryStrength, SaoCtu,
]

EVENT_TYPES = (
    StreamBegin, Slice, CuIntra, CuInter, CuSkip, IntraLumaMode, PuInter,
    MotionVector, BiPu, MvdLarge, Coeff, CoeffG1, CsbfNonDc, CoeffRemaining,
    Cbf, TransformSkip, BoundaryStrength, SaoCtu,
)


@dataclass(frozen=True)
class SyntaxEventTrace:
    stream_id: str
    events: tuple

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator:
        return iter(self.events)


# -- wire schema ---------------------------------------------------------------
# (file key, attribute, value kind, range)
# kinds: "int" (inclusive range or None), "bool", "enum" (tuple of values)

def _r(lo, hi=None):
    return (lo, hi)


_SCHEMA: dict[type, list[tuple[str, str, str, object]]] = {
    StreamBegin: [],
    Slice: [("t", "slice_type", "enum", SLICE_TYPES)],
    CuIntra: [("d", "depth", "int", _r(0, 4))],
    CuInter: [("d", "depth", "int", _r(0, 3))],
    CuSkip: [("d", "depth", "int", _r(0, 3))],
    IntraLumaMode: [
        ("d", "depth", "int", _r(1, 4)),
        ("m", "mode", "int", _r(0, 34)),
        ("mpm", "mpm_hit", "bool", None),
    ],
    PuInter: [
        ("d", "depth", "int", _r(0, 3)),
        ("merge", "merge", "bool", None),
        ("part", "part_mode", "int", _r(0, 7)),
    ],
    MotionVector: [
        ("d", "depth", "int", _r(0, 3)),
        ("w", "pb_w", "int", _r(4)),
        ("h", "pb_h", "int", _r(4)),
        ("x", "mv_x", "int", None),
        ("y", "mv_y", "int", None),
    ],
    BiPu: [
        ("d", "depth", "int", _r(0, 3)),
        ("w", "pb_w", "int", _r(4)),
        ("h", "pb_h", "int", _r(4)),
    ],
    MvdLarge: [("v", "abs_mvd_minus2", "int", _r(0))],
    Coeff: [],
    CoeffG1: [],
    CsbfNonDc: [],
    CoeffRemaining: [("v", "value", "int", _r(0))],
    Cbf: [
        ("d", "depth", "int", _r(1, 4)),
        ("c", "plane", "enum", PLANES),
        ("intra", "intra", "bool", None),
    ],
    TransformSkip: [],
    BoundaryStrength: [("bs", "bs", "int", _r(0, 2))],
    SaoCtu: [
        ("y", "type_y", "int", _r(0, 2)),
        ("cb", "type_cb", "int", _r(0, 2)),
        ("cr", "type_cr", "int", _r(0, 2)),
    ],
}

TAGS: dict[str, type] = {cls.TAG: cls for cls in EVENT_TYPES}

_INT_RE = re.compile(r"^[+-]?[0-9]+$")


def _check_block(cls, values: dict, line_no: int | None) -> None:
    """Cross-field checks that a per-field range table cannot express."""
    if cls is PuInter:
        if values["part_mode"] == 3:
            raise RangeViolation("part_mode 3 (NxN) is not an inter partition", line_no, "part")
        if values["part_mode"] in AMP_PART_MODES and values["depth"] > 2:
            raise RangeViolation("asymmetric partitions only exist at depths 0..2", line_no, "part")
    elif cls in (MotionVector, BiPu):
        for key, attr in (("w", "pb_w"), ("h", "pb_h")):
            if values[attr] % 4:
                raise RangeViolation(f"{attr} must be a multiple of 4", line_no, key)
        if values["pb_w"] * values["pb_h"] < 16:
            raise RangeViolation("prediction block smaller than 16 pels", line_no, "w")


def _parse_value(kind: str, spec, raw: str, key: str, line_no: int | None):
    if kind == "enum":
        if raw not in spec:
            raise RangeViolation(f"{key}={raw!r} not in {spec}", line_no, key)
        return raw
    if not _INT_RE.match(raw):
        raise MalformedLine(f"{key}={raw!r} is not a decimal integer", line_no)
    value = int(raw)
    if kind == "bool":
        if value not in (0, 1):
            raise RangeViolation(f"{key}={raw} is not a boolean (0/1)", line_no, key)
        return bool(value)
    lo, hi = spec if spec is not None else (None, None)
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise RangeViolation(f"{key}={value} outside [{lo}, {hi if hi is not None else 'inf'}]", line_no, key)
    return value


def parse_event(line: str, line_no: int | None = None):
    """Parse one non-comment line into an event object."""
    parts = line.split()
    if not parts:
        raise MalformedLine("empty event line", line_no)
    cls = TAGS.get(parts[0])
    if cls is None:
        raise MalformedLine(f"unknown tag {parts[0]!r}", line_no)
    schema = _SCHEMA[cls]
    given: dict[str, str] = {}
    for token in parts[1:]:
        key, sep, raw = token.partition("=")
        if not sep or not key or not raw:
            raise MalformedLine(f"expected key=value, got {token!r}", line_no)
        if key in given:
            raise MalformedLine(f"duplicate key {key!r}", line_no)
        given[key] = raw
    expected = [entry[0] for entry in schema]
    unknown = set(given) - set(expected)
    if unknown:
        raise MalformedLine(f"unexpected keys for {cls.TAG}: {sorted(unknown)}", line_no)
    missing = [k for k in expected if k not in given]
    if missing:
        raise MalformedLine(f"missing keys for {cls.TAG}: {missing}", line_no)
    values = {}
    for key, attr, kind, spec in schema:
        values[attr] = _parse_value(kind, spec, given[key], key, line_no)
    _check_block(cls, values, line_no)
    return cls(**values)


def validate_event(event, line_no: int | None = None) -> None:
    """Range-check an in-memory event by round-tripping it through the schema."""
    parse_event(format_event(event), line_no)


def format_event(event) -> str:
    cls = type(event)
    out = [cls.TAG]
    for key, attr, kind, _ in _SCHEMA[cls]:
        value = getattr(event, attr)
        if kind == "bool":
            value = int(bool(value))
        out.append(f"{key}={value}")
    return " ".join(out)


def _lines(source) -> Iterable[str]:
    if isinstance(source, bytes):
        return source.decode("utf-8").splitlines()
    if isinstance(source, str):
        return source.splitlines()
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.splitlines()


def parse_trace(source: Union[str, bytes, TextIO], stream_id: str = "") -> SyntaxEventTrace:
    """Parse trace text (str, bytes, or a readable file object).

    Blank lines and lines starting with ``#`` are skipped.  Line numbers in
    errors are 1-based physical lines.
    """
    events = []
    seen_begin = False
    for line_no, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        event = parse_event(line, line_no)
        if isinstance(event, StreamBegin):
            if seen_begin:
                raise DuplicateStreamBegin("second SB event", line_no)
            seen_begin = True
        elif not seen_begin:
            raise MissingStreamBegin(f"{event.TAG} before SB", line_no)
        events.append(event)
    if not seen_begin:
        raise MissingStreamBegin("trace has no SB event")
    return SyntaxEventTrace(stream_id, tuple(events))


def serialize_trace(trace: SyntaxEventTrace) -> str:
    return "".join(format_event(ev) + "\n" for ev in trace.events)


def write_trace(trace: SyntaxEventTrace, fh: TextIO) -> None:
    fh.write(serialize_trace(trace))


def read_trace_file(path) -> SyntaxEventTrace:
    path = Path(path)
    with open(path, "rb") as fh:
        return parse_trace(fh.read(), stream_id=path.stem)


# -- random traces -------------------------------------------------------------

@dataclass
class TraceProfile:
    """Per-stream coding statistics driving the random generator.

    Drawn once per bit stream so that feature counts vary independently
    across streams (a fitting data set needs full column rank).
    """

    p_split: float = 0.4
    p_skip: float = 0.3
    p_intra_in_inter: float = 0.1
    p_nxn: float = 0.3
    p_merge: float = 0.5
    p_amp: float = 0.2
    p_smp: float = 0.3
    p_bi: float = 0.5
    p_frac: float = 0.6
    p_mvd_large: float = 0.4
    p_mpm: float = 0.6
    p_cbf_luma: float = 0.6
    p_cbf_chroma: float = 0.3
    coeff_density: float = 0.3
    p_g1: float = 0.4
    p_remaining: float = 0.3
    p_tsf: float = 0.2
    p_sao: tuple = (0.5, 0.25, 0.25)
    bs_weights: tuple = (0.5, 0.3, 0.2)
    edges_per_cu: int = 2

    @classmethod
    def draw(cls, rng: random.Random, qp: int | None = None) -> "TraceProfile":
        u = rng.uniform
        # Higher QP means fewer residuals and more skipping.
        q = 0.5 if qp is None else min(max(qp / 51.0, 0.0), 1.0)
        sao_off = u(0.1, 0.8)
        sao_bo = u(0.0, 1.0 - sao_off)
        bs0 = u(0.2, 0.7)
        bs1 = u(0.0, 1.0 - bs0)
        return cls(
            p_split=u(0.15, 0.6),
            p_skip=u(0.05, 0.3) + 0.4 * q,
            p_intra_in_inter=u(0.02, 0.25),
            p_nxn=u(0.05, 0.6),
            p_merge=u(0.2, 0.8),
            p_amp=u(0.0, 0.4),
            p_smp=u(0.1, 0.4),
            p_bi=u(0.1, 0.9),
            p_frac=u(0.2, 0.95),
            p_mvd_large=u(0.1, 0.8),
            p_mpm=u(0.3, 0.9),
            p_cbf_luma=u(0.3, 0.95) * (1.2 - q),
            p_cbf_chroma=u(0.05, 0.6) * (1.2 - q),
            coeff_density=u(0.05, 0.6) * (1.2 - q),
            p_g1=u(0.1, 0.7),
            p_remaining=u(0.05, 0.6),
            p_tsf=u(0.0, 0.5),
            p_sao=(sao_off, sao_bo, 1.0 - sao_off - sao_bo),
            bs_weights=(bs0, bs1, 1.0 - bs0 - bs1),
            edges_per_cu=rng.randint(1, 4),
        )


_PART_DIMS = {
    0: lambda s: [(s, s)],
    1: lambda s: [(s, s // 2)] * 2,
    2: lambda s: [(s // 2, s)] * 2,
    4: lambda s: [(s, s // 4), (s, 3 * s // 4)],
    5: lambda s: [(s, 3 * s // 4), (s, s // 4)],
    6: lambda s: [(s // 4, s), (3 * s // 4, s)],
    7: lambda s: [(3 * s // 4, s), (s // 4, s)],
}


def _choice(rng: random.Random, weights) -> int:
    x = rng.random()
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if x < acc:
            return i
    return len(weights) - 1


class _FrameBuilder:
    def __init__(self, rng: random.Random, profile: TraceProfile, out: list):
        self.rng = rng
        self.p = profile
        self.out = out

    def tu_depths(self, depth: int) -> list:
        # transform blocks are at most 32x32, so a 64x64 CU always splits once
        td = max(depth, 1)
        if td < 4 and self.rng.random() < self.p.p_split * 0.5:
            td += 1
        return [td] * 4 ** (td - depth)

    def residual(self, tu_depths: list, intra: bool) -> None:
        rng, p, out = self.rng, self.p, self.out
        for td in tu_depths:
            planes = []
            if rng.random() < p.p_cbf_luma:
                planes.append("Y")
            for plane in ("Cb", "Cr"):
                if rng.random() < p.p_cbf_chroma:
                    planes.append(plane)
            for plane in planes:
                out.append(Cbf(td, plane, intra))
                size = 64 >> td if plane == "Y" else 64 >> min(td + 1, 4)
                n_sub = max(1, (size // 4) ** 2 // 16)
                for _ in range(n_sub - 1):
                    if rng.random() < p.coeff_density:
                        out.append(CsbfNonDc())
                n_coeff = 1 + int(rng.random() * p.coeff_density * 12)
                for _ in range(n_coeff):
                    out.append(Coeff())
                    if rng.random() < p.p_g1:
                        out.append(CoeffG1())
                        if rng.random() < p.p_remaining:
                            out.append(CoeffRemaining(int(rng.expovariate(0.15))))
                if td == 4 and rng.random() < p.p_tsf:
                    out.append(TransformSkip())

    def motion(self, depth: int, w: int, h: int, slice_type: str, merge: bool) -> None:
        rng, p, out = self.rng, self.p, self.out
        bi = slice_type == "B" and rng.random() < p.p_bi and w * h > 32
        for _ in range(2 if bi else 1):
            if rng.random() < p.p_frac:
                mv_x = rng.randint(-64, 64)
                mv_y = rng.randint(-64, 64)
            else:
                mv_x = 4 * rng.randint(-16, 16)
                mv_y = 4 * rng.randint(-16, 16)
            out.append(MotionVector(depth, w, h, mv_x, mv_y))
            if not merge:
                for _ in range(2):
                    if rng.random() < p.p_mvd_large:
                        out.append(MvdLarge(int(rng.expovariate(0.1))))
        if bi:
            out.append(BiPu(depth, w, h))

    def cu(self, depth: int, slice_type: str) -> None:
        rng, p, out = self.rng, self.p, self.out
        if depth < 3 and rng.random() < p.p_split:
            for _ in range(4):
                self.cu(depth + 1, slice_type)
            return
        size = 64 >> depth
        if slice_type != "I" and rng.random() < p.p_skip:
            out.append(CuSkip(depth))
            self.motion(depth, size, size, slice_type, merge=True)
        elif slice_type == "I" or rng.random() < p.p_intra_in_inter:
            out.append(CuIntra(depth))
            # intra sample prediction runs once per luma transform block
            if depth == 3 and rng.random() < p.p_nxn:
                tbs = [4] * 4
                for td in tbs:
                    out.append(IntraLumaMode(td, rng.randint(0, 34), rng.random() < p.p_mpm))
            else:
                tbs = self.tu_depths(depth)
                mode, mpm = rng.randint(0, 34), rng.random() < p.p_mpm
                for td in tbs:
                    out.append(IntraLumaMode(td, mode, mpm))
            self.residual(tbs, intra=True)
        else:
            out.append(CuInter(depth))
            x = rng.random()
            if depth <= 2 and x < p.p_amp:
                part = rng.choice((4, 5, 6, 7))
            elif x < p.p_amp + p.p_smp:
                part = rng.choice((1, 2))
            else:
                part = 0
            for w, h in _PART_DIMS[part](size):
                merge = rng.random() < p.p_merge
                out.append(PuInter(depth, merge, part))
                self.motion(depth, w, h, slice_type, merge)
            self.residual(self.tu_depths(depth), intra=False)
        for _ in range(p.edges_per_cu):
            out.append(BoundaryStrength(_choice(rng, p.bs_weights)))

    def ctu(self, slice_type: str) -> None:
        self.cu(0, slice_type)
        p = self.p
        self.out.append(SaoCtu(
            _choice(self.rng, p.p_sao), _choice(self.rng, p.p_sao), _choice(self.rng, p.p_sao)
        ))


def generate_frame_events(
    rng: random.Random,
    n_ctus: int,
    slice_type: str,
    profile: TraceProfile,
    n_slices: int = 1,
) -> list:
    """Events of one coded picture (no StreamBegin)."""
    out: list = []
    builder = _FrameBuilder(rng, profile, out)
    n_slices = max(1, min(n_slices, n_ctus))
    bounds = [round(i * n_ctus / n_slices) for i in range(n_slices + 1)]
    for s in range(n_slices):
        out.append(Slice(slice_type))
        for _ in range(bounds[s + 1] - bounds[s]):
            builder.ctu(slice_type)
    return out


def generate_random_trace(seed: int, size_hint: int, stream_id: str | None = None) -> SyntaxEventTrace:
    """Deterministic random trace with roughly ``size_hint`` coding tree units.

    Every event variant is reachable; the profile itself is drawn from the
    seed, so two seeds differ in both structure and statistics.
    """
    if size_hint < 1:
        raise ValueError("size_hint must be >= 1")
    rng = random.Random(seed)
    profile = TraceProfile.draw(rng, qp=rng.choice((10, 22, 32, 45)))
    events: list = [StreamBegin()]
    remaining = size_hint
    first = True
    while remaining > 0:
        n = min(remaining, rng.randint(1, max(1, size_hint // 2 + 1)))
        slice_type = "I" if first else rng.choice(SLICE_TYPES)
        first = False
        events.extend(generate_frame_events(rng, n, slice_type, profile, n_slices=rng.randint(1, 2)))
        remaining -= n
    return SyntaxEventTrace(stream_id if stream_id is not None else f"rand{seed}", tuple(events))


def event_fields(event) -> dict:
    return {f.name: getattr(event, f.name) for f in fields(event)}


__all__ = [
    "SyntaxEvent", "SyntaxEventTrace", "TraceProfile",
    "parse_trace", "parse_event", "serialize_trace", "write_trace", "read_trace_file",
    "format_event", "validate_event", "generate_random_trace", "generate_frame_events",
    "EVENT_TYPES", "TAGS",
] + [cls.__name__ for cls in EVENT_TYPES]
