"""Small dataset builders shared by several test modules."""

from __future__ import annotations

import numpy as np

from decwatt.dataset import Dataset, DatasetRow, GroupKey
from decwatt.features import FeatureVector
from decwatt.models import BitstreamMeta
from decwatt.simlab import RESOLUTIONS


def random_meta(rng, n_frames=None):
    w, h = RESOLUTIONS[rng.integers(len(RESOLUTIONS))]
    S = int(w * h)
    N = int(n_frames or rng.integers(1, 9))
    f = float(rng.choice([24, 30, 50, 60]))
    bpp = float(rng.uniform(0.01, 2.0))
    return BitstreamMeta(
        frame_size_S=S, num_frames_N=N, frame_rate_f=f, qp_q=int(rng.choice([10, 32, 45])),
        bitrate_b=bpp * S * f, bits_per_pixel=bpp,
        intra_fraction_alpha=float(rng.integers(0, N + 1)) / N,
        decode_time_t=float(rng.uniform(0.1, 20.0)),
        pe_counts={"instruction_fetches": float(rng.uniform(1e6, 1e9)), "l1d_misses": float(rng.uniform(1e3, 1e7))},
        mem_counts={"ram_reads_n_ra": float(rng.uniform(1e6, 1e9)), "writes_n_wa": float(rng.uniform(1e6, 1e9))},
    )


def random_meta_dataset(seed, n_rows=40):
    """Rows with random variables and unrelated positive energies."""
    rng = np.random.default_rng(seed)
    rows = [DatasetRow(f"r{i}", random_meta(rng), float(rng.uniform(0.5, 50.0)), GroupKey("s", "c", 32), 1)
            for i in range(n_rows)]
    return Dataset(rows)


def model_dataset(model, seed, n_rows=60, noise=0.0):
    """Rows whose energies follow ``model`` exactly, up to optional multiplicative noise."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_rows):
        m = random_meta(rng)
        E = model.predict(m) * (1.0 + noise * rng.standard_normal())
        rows.append(DatasetRow(f"r{i}", m, float(E), GroupKey("s", "c", 32), 1))
    return Dataset(rows)


def single_feature_dataset(kind, counts_by_row, energies):
    """Feature rows where only the given FeatureId counts are non-zero."""
    rows = []
    for i, (counts, E) in enumerate(zip(counts_by_row, energies)):
        v = FeatureVector.from_array(kind, np.zeros(27 if kind == "FS" else 90))
        full = dict(v.counts)
        full.update(counts)
        meta = BitstreamMeta(frame_size_S=100, num_frames_N=1, frame_rate_f=30.0, qp_q=32, bitrate_b=0.0,
                             bits_per_pixel=0.0, intra_fraction_alpha=0.0)
        rows.append(DatasetRow(f"r{i}", meta, float(E), GroupKey("s", "c", 32), 1, {kind: FeatureVector(kind, full)}))
    return Dataset(rows)
