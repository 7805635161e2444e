"""Error metrics, k-fold cross-validation, frame-level differencing and report tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import Dataset, DatasetRow
from .errors import (
    DataError,
    EmptyList,
    MissingFrameCount,
    NonMonotoneGroup,
    NonPositiveEnergy,
    TooFewRows,
)
from .features import FeatureVector
from .fit import fit_model, predict_dataset
from .models import BitstreamMeta, check_model_id

log = logging.getLogger(__name__)


def relative_error(estimate: float, measured: float) -> float:
    if not measured > 0:
        raise NonPositiveEnergy(f"measured energy must be > 0, got {measured}")
    return (estimate - measured) / measured


def mean_abs_error(errors: Iterable[float]) -> float:
    errs = list(errors)
    if not errs:
        raise EmptyList("mean of an empty error list")
    return math.fsum(abs(e) for e in errs) / len(errs)


# -- cross-validation -------------------------------------------------------------

def fold_assignment(n_rows: int, seed: int, folds: int = 10) -> np.ndarray:
    """Fold index per row: a seeded permutation dealt out round-robin."""
    perm = np.random.default_rng(seed).permutation(n_rows)
    out = np.empty(n_rows, dtype=int)
    out[perm] = np.arange(n_rows) % folds
    return out


@dataclass
class CvReport:
    model_id: str
    errors: list  # signed relative error per row, dataset order
    fold_assignment: dict  # stream_id -> fold
    seed: int
    folds: int = 10
    system: str = ""
    stream_ids: list = field(default_factory=list)

    @property
    def mean_abs_error(self) -> float:
        return mean_abs_error(self.errors)

    @property
    def per_fold_errors(self) -> list:
        out = [[] for _ in range(self.folds)]
        for sid, err in zip(self.stream_ids, self.errors):
            out[self.fold_assignment[sid]].append(err)
        return out

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "system": self.system,
            "seed": self.seed,
            "folds": self.folds,
            "mean_abs_error": self.mean_abs_error,
            "rows": [
                {"stream_id": sid, "fold": int(self.fold_assignment[sid]), "error": float(e)}
                for sid, e in zip(self.stream_ids, self.errors)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "CvReport":
        try:
            rows = doc["rows"]
            return cls(
                model_id=check_model_id(doc["model_id"]),
                errors=[float(r["error"]) for r in rows],
                fold_assignment={r["stream_id"]: int(r["fold"]) for r in rows},
                seed=int(doc["seed"]),
                folds=int(doc.get("folds", 10)),
                system=str(doc.get("system", "")),
                stream_ids=[r["stream_id"] for r in rows],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed CV report: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CvReport":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"CV report is not JSON: {exc}") from None


def cross_validate(dataset: Dataset, model_id: str, seed: int, folds: int = 10,
                   system: str = "", **fit_kwargs) -> CvReport:
    """k-fold CV: fit on k-1 folds, record relative errors on the held-out fold."""
    check_model_id(model_id)
    if folds < 2:
        raise DataError("cross-validation needs at least 2 folds")
    n = len(dataset)
    if n < folds:
        raise TooFewRows(f"{n} rows cannot be split into {folds} folds")
    assign = fold_assignment(n, seed, folds)
    E = dataset.energies
    errors = np.empty(n)
    for k in range(folds):
        held = np.flatnonzero(assign == k)
        train = dataset.subset(np.flatnonzero(assign != k))
        prov = {"seed": seed, "fold_spec": f"{k}/{folds}"}
        result = fit_model(train, model_id, provenance=prov, **fit_kwargs)
        pred = predict_dataset(result.model, dataset.subset(held))
        errors[held] = (pred - E[held]) / E[held]
    ids = [r.stream_id for r in dataset.rows]
    return CvReport(
        model_id=model_id,
        errors=[float(e) for e in errors],
        fold_assignment={sid: int(a) for sid, a in zip(ids, assign)},
        seed=seed,
        folds=folds,
        system=system,
        stream_ids=ids,
    )


# -- frame-level differencing ---------------------------------------------------------

@dataclass
class DroppedRow:
    stream_id: str
    reason: str


def _delta_meta(cur: BitstreamMeta, prev: BitstreamMeta) -> tuple[BitstreamMeta, list]:
    """Difference extensive variables; keep S, f and q. Returns (meta, negative names)."""
    negative = []

    def diff(name, a, b):
        if a is None or b is None:
            return None
        d = a - b
        if d < 0:
            negative.append(name)
        return d

    bits = diff("bits", cur.total_bits, prev.total_bits)
    intra = diff("intra_frames", cur.intra_frames, prev.intra_frames)
    t = diff("t_dec", cur.decode_time_t, prev.decode_time_t)

    def diff_group(a, b):
        if a is None or b is None:
            return None
        return {k: diff(k, a[k], b[k]) for k in a}

    S = cur.frame_size_S
    meta = BitstreamMeta(
        frame_size_S=S,
        num_frames_N=1,
        frame_rate_f=cur.frame_rate_f,
        qp_q=cur.qp_q,
        bitrate_b=max(bits, 0.0) * cur.frame_rate_f,
        bits_per_pixel=max(bits, 0.0) / S,
        intra_fraction_alpha=min(max(round(intra, 9), 0.0), 1.0),
        decode_time_t=t,
        pe_counts=diff_group(cur.pe_counts, prev.pe_counts),
        mem_counts=diff_group(cur.mem_counts, prev.mem_counts),
    )
    return meta, negative


def _delta_features(cur: dict, prev: dict) -> tuple[dict, list]:
    out, negative = {}, []
    for kind, vec in cur.items():
        if kind not in prev:
            continue
        d = vec.as_array() - prev[kind].as_array()
        if np.any(d < 0):
            negative.append(f"{kind} features")
        out[kind] = FeatureVector.from_array(kind, np.maximum(d, 0.0))
    return out, negative


def frame_level_differences(dataset: Dataset) -> tuple[Dataset, list]:
    """Per-frame rows from groups coded with 1..n frames.

    Frame 1 keeps its own measurement; frame n > 1 gets E(n) - E(n-1) and the
    matching deltas of every extensive variable.  Rows with ΔE <= 0 or with a
    negative count delta are dropped and returned in the second element.
    """
    groups: dict = {}
    for row in dataset.rows:
        if row.frame_count is None:
            raise MissingFrameCount(f"stream {row.stream_id} has no frame_count")
        groups.setdefault(row.group_key, []).append(row)
    out, dropped = [], []
    for key, rows in groups.items():
        rows = sorted(rows, key=lambda r: r.frame_count)
        counts = [r.frame_count for r in rows]
        if counts != list(range(1, len(rows) + 1)):
            raise NonMonotoneGroup(f"group {tuple(key)} has frame counts {counts}, expected 1..{len(rows)}")
        out.append(rows[0])
        for prev, cur in zip(rows, rows[1:]):
            dE = cur.energy_E - prev.energy_E
            if not dE > 0:
                dropped.append(DroppedRow(cur.stream_id, f"non-positive energy delta {dE!r}"))
                continue
            meta, neg = _delta_meta(cur.meta, prev.meta)
            feats, neg_f = _delta_features(cur.features, prev.features)
            if neg or neg_f:
                dropped.append(DroppedRow(cur.stream_id, "negative delta in " + ", ".join(neg + neg_f)))
                continue
            out.append(DatasetRow(cur.stream_id, meta, dE, key, cur.frame_count, feats))
    if dropped:
        log.warning("frame-level differencing dropped %d of %d rows", len(dropped), len(dataset))
    return Dataset(out), dropped


def frame_level_energies(dataset: Dataset) -> Dataset:
    return frame_level_differences(dataset)[0]


# -- reports ------------------------------------------------------------------

AVERAGE_LABEL = "∅"


@dataclass
class ReportTable:
    systems: list
    models: list
    cells: dict  # (system, model) -> mean |ε| as a fraction

    def row_mean(self, system) -> Optional[float]:
        vals = [self.cells[(system, m)] for m in self.models if (system, m) in self.cells]
        return sum(vals) / len(vals) if vals else None

    def col_mean(self, model) -> Optional[float]:
        vals = [self.cells[(s, model)] for s in self.systems if (s, model) in self.cells]
        return sum(vals) / len(vals) if vals else None

    def grand_mean(self) -> Optional[float]:
        vals = list(self.cells.values())
        return sum(vals) / len(vals) if vals else None


def _pct(value: Optional[float]) -> str:
    return "" if value is None else f"{100.0 * value:.2f}%"


def build_table(reports: Sequence[CvReport]) -> ReportTable:
    systems, models, cells = [], [], {}
    for rep in reports:
        if rep.system not in systems:
            systems.append(rep.system)
        if rep.model_id not in models:
            models.append(rep.model_id)
        cells[(rep.system, rep.model_id)] = rep.mean_abs_error
    return ReportTable(systems, models, cells)


def report_csv(reports: Sequence[CvReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["system", "model", "mean_abs_error_percent"])
    for rep in reports:
        w.writerow([rep.system, rep.model_id, f"{100.0 * rep.mean_abs_error:.2f}"])
    return buf.getvalue()


def report_text(reports: Sequence[CvReport]) -> str:
    table = build_table(reports)
    with_col = len(table.models) > 1
    with_row = len(table.systems) > 1
    header = ["system"] + list(table.models) + ([AVERAGE_LABEL] if with_col else [])
    lines = []
    for s in table.systems:
        row = [s or "-"] + [_pct(table.cells.get((s, m))) for m in table.models]
        if with_col:
            row.append(_pct(table.row_mean(s)))
        lines.append(row)
    if with_row:
        row = [AVERAGE_LABEL] + [_pct(table.col_mean(m)) for m in table.models]
        if with_col:
            row.append(_pct(table.grand_mean()))
        lines.append(row)
    grid = [header] + lines
    widths = [max(len(r[i]) for r in grid) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule] + [fmt(r) for r in lines]) + "\n"


@dataclass
class ReportDocument:
    table: ReportTable
    csv: str
    text: str


def render_report(reports: Sequence[CvReport]) -> ReportDocument:
    reports = list(reports)
    return ReportDocument(build_table(reports), report_csv(reports), report_text(reports))
