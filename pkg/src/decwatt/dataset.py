"""Training/validation data sets and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .errors import DataError, DimensionMismatch, NonPositiveEnergy
from .features import KINDS, FeatureId, FeatureVector, feature_ids, format_count, read_feature_csv
from .models import BitstreamMeta

BASE_COLUMNS = (
    "stream_id", "sequence", "config", "qp", "frame_count", "S", "N", "f", "b",
    "b_pixel", "alpha", "t_dec", "pe_if", "pe_l1dm", "n_ra", "n_wa", "energy_J",
)
_OPTIONAL = ("t_dec", "pe_if", "pe_l1dm", "n_ra", "n_wa", "frame_count")


class GroupKey(NamedTuple):
    sequence: str
    config: str
    qp: int


@dataclass(frozen=True)
class DatasetRow:
    stream_id: str
    meta: BitstreamMeta
    energy_E: float
    group_key: GroupKey
    frame_count: Optional[int] = None
    features: dict = field(default_factory=dict)

    def feature_vector(self, kind: str) -> Optional[FeatureVector]:
        return self.features.get(kind)


@dataclass
class Dataset:
    rows: list

    def __post_init__(self):
        self.rows = list(self.rows)
        seen = set()
        for row in self.rows:
            if row.stream_id in seen:
                raise DataError(f"duplicate stream_id {row.stream_id!r}")
            seen.add(row.stream_id)
            if not (row.energy_E > 0 and math.isfinite(row.energy_E)):
                raise NonPositiveEnergy(f"{row.stream_id}: energy must be > 0, got {row.energy_E}")

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, idx):
        return self.rows[idx]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.rows[i] for i in indices])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy_E for r in self.rows], dtype=float)

    def with_energies(self, energies) -> "Dataset":
        return Dataset([replace(r, energy_E=float(e)) for r, e in zip(self.rows, energies)])

    def kinds(self) -> tuple:
        return tuple(k for k in KINDS if self.rows and all(k in r.features for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_dataset_csv(self, buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


# -- CSV -------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_dataset_csv(dataset: Dataset, fh) -> None:
    kinds = dataset.kinds()
    feature_cols = [(k, fid) for k in kinds for fid in feature_ids(k)]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(BASE_COLUMNS) + [f"{k}:{fid.key}" for k, fid in feature_cols])
    for r in dataset.rows:
        m = r.meta
        pe = m.pe_counts or {}
        mem = m.mem_counts or {}
        base = [
            r.stream_id, r.group_key.sequence, r.group_key.config, str(int(r.group_key.qp)),
            _fmt(r.frame_count), str(m.frame_size_S), str(m.num_frames_N), _fmt(m.frame_rate_f),
            _fmt(m.bitrate_b), _fmt(m.bits_per_pixel), _fmt(m.intra_fraction_alpha),
            _fmt(m.decode_time_t), _fmt(pe.get("instruction_fetches")), _fmt(pe.get("l1d_misses")),
            _fmt(mem.get("ram_reads_n_ra")), _fmt(mem.get("writes_n_wa")), _fmt(r.energy_E),
        ]
        feats = [format_count(r.features[k].counts[fid]) for k, fid in feature_cols]
        writer.writerow(base + feats)


def _num(row: dict, key: str, line_no: int, cast=float, optional=False):
    raw = (row.get(key) or "").strip()
    if not raw:
        if optional:
            return None
        raise DataError(f"row {line_no}: column {key!r} is empty")
    try:
        value = cast(raw) if cast is not int else int(float(raw))
    except ValueError:
        raise DataError(f"row {line_no}: column {key!r} has non-numeric value {raw!r}") from None
    if cast is float and not math.isfinite(value):
        raise DataError(f"row {line_no}: column {key!r} is not finite")
    return value


def read_dataset_csv(fh) -> Dataset:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    required = [c for c in BASE_COLUMNS if c not in _OPTIONAL]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"dataset CSV lacks columns {missing}")
    feature_cols: dict = {}
    for col in header:
        kind, sep, key = col.partition(":")
        if sep and kind in KINDS:
            feature_cols.setdefault(kind, []).append((col, FeatureId.from_key(key)))
    for kind, cols in feature_cols.items():
        if {fid for _, fid in cols} != set(feature_ids(kind)):
            raise DimensionMismatch(f"dataset has a partial set of {kind} feature columns")
    rows = []
    for line_no, raw in enumerate(reader, start=2):
        pe_if = _num(raw, "pe_if", line_no, optional=True)
        pe_l1 = _num(raw, "pe_l1dm", line_no, optional=True)
        n_ra = _num(raw, "n_ra", line_no, optional=True)
        n_wa = _num(raw, "n_wa", line_no, optional=True)
        qp = _num(raw, "qp", line_no, int)
        meta = BitstreamMeta(
            frame_size_S=_num(raw, "S", line_no, int),
            num_frames_N=_num(raw, "N", line_no, int),
            frame_rate_f=_num(raw, "f", line_no),
            qp_q=qp,
            bitrate_b=_num(raw, "b", line_no),
            bits_per_pixel=_num(raw, "b_pixel", line_no),
            intra_fraction_alpha=_num(raw, "alpha", line_no),
            decode_time_t=_num(raw, "t_dec", line_no, optional=True),
            pe_counts=None if pe_if is None or pe_l1 is None else {
                "instruction_fetches": pe_if, "l1d_misses": pe_l1},
            mem_counts=None if n_ra is None or n_wa is None else {
                "ram_reads_n_ra": n_ra, "writes_n_wa": n_wa},
        )
        features = {
            kind: FeatureVector(kind, {fid: _num(raw, col, line_no) for col, fid in cols})
            for kind, cols in feature_cols.items()
        }
        energy = _num(raw, "energy_J", line_no)
        if energy <= 0:
            raise NonPositiveEnergy(f"row {line_no}: energy_J must be > 0, got {energy}")
        rows.append(DatasetRow(
            stream_id=raw["stream_id"],
            meta=meta,
            energy_E=energy,
            group_key=GroupKey(raw["sequence"], raw["config"], qp),
            frame_count=_num(raw, "frame_count", line_no, int, optional=True),
            features=features,
        ))
    return Dataset(rows)


def load_dataset(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_dataset_csv(fh)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_dataset_csv(dataset, fh)


def attach_features(dataset: Dataset, directory) -> Dataset:
    """Join per-stream feature CSVs named ``<stream_id>.csv`` onto the rows."""
    directory = Path(directory)
    rows = []
    for r in dataset.rows:
        path = directory / f"{r.stream_id}.csv"
        if not path.exists():
            raise DataError(f"no feature file for stream {r.stream_id!r} in {directory}")
        with open(path, newline="", encoding="utf-8") as fh:
            vec = read_feature_csv(fh)
        rows.append(replace(r, features={**r.features, vec.model_kind: vec}))
    return Dataset(rows)
