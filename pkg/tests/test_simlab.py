from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decwatt.errors import ConfigInvalid, DomainError, MismatchedTraces, NonPositiveMean, TooFewSamples
from decwatt.evaluation import frame_level_differences
from decwatt.simlab import (
    CONFIGS,
    QPS,
    RESOLUTIONS,
    SEQUENCES,
    GeneratorConfig,
    MeasurementRecord,
    PowerTrace,
    bump_traces,
    ci_stop_decision,
    generate_dataset,
    integrate_decoding_energy,
    regularized_incomplete_beta,
    simulate_measurement_series,
    student_t_cdf,
    student_t_critical,
)

stats = pytest.importorskip("scipy.stats")
special = pytest.importorskip("scipy.special")


# -- integration --------------------------------------------------------------------

def test_identical_curves_integrate_to_zero():
    p = PowerTrace(0.1, (1.0, 2.0, 3.0, 2.5))
    assert integrate_decoding_energy(p, p) == 0.0


def test_rectangular_bump():
    dec, idle = bump_traces(2.0, 0.5, 0.5, 22.0, 30.0, 0.01)
    assert integrate_decoding_energy(dec, idle) == pytest.approx(10.75, abs=1e-9)


def test_negative_area_returned_as_is():
    dec, idle = PowerTrace(1.0, (1.0, 1.0, 1.0)), PowerTrace(1.0, (2.0, 2.0, 2.0))
    assert integrate_decoding_energy(dec, idle) == pytest.approx(-2.0)


def test_mismatched_traces():
    with pytest.raises(MismatchedTraces):
        integrate_decoding_energy(PowerTrace(0.1, (1, 2, 3)), PowerTrace(0.2, (1, 2, 3)))
    with pytest.raises(MismatchedTraces):
        integrate_decoding_energy(PowerTrace(0.1, (1, 2, 3)), PowerTrace(0.1, (1, 2)))


def test_power_trace_validation():
    with pytest.raises(DomainError):
        PowerTrace(0.1, (1.0,))
    with pytest.raises(DomainError):
        PowerTrace(0.0, (1.0, 2.0))
    with pytest.raises(DomainError):
        PowerTrace(0.1, (1.0, -2.0))


def _piecewise_linear(rng, n_knots, T):
    knots_t = np.concatenate([[0.0], np.sort(rng.uniform(0, T, n_knots)), [T]])
    knots_p = rng.uniform(0.5, 5.0, knots_t.size)
    return lambda t: np.interp(t, knots_t, knots_p)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_refinement_oracle(seed):
    rng = np.random.default_rng(seed)
    T = 10.0
    dec_f, idle_f = _piecewise_linear(rng, 6, T), _piecewise_linear(rng, 3, T)
    n = 200001
    t = np.linspace(0, T, n)
    dec, idle = PowerTrace(T / (n - 1), tuple(dec_f(t))), PowerTrace(T / (n - 1), tuple(idle_f(t)))
    ours = integrate_decoding_energy(dec, idle)
    # midpoint Riemann sum on a 10x finer grid
    fine = np.linspace(0, T, 10 * (n - 1) + 1)
    mid = 0.5 * (fine[1:] + fine[:-1])
    oracle = float(np.sum(dec_f(mid) - idle_f(mid)) * (fine[1] - fine[0]))
    scale = float(np.sum(np.abs(dec_f(mid) - idle_f(mid))) * (fine[1] - fine[0]))
    assert abs(ours - oracle) <= 1e-6 * scale


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(0, 5), b=st.floats(0, 5))
def test_integration_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    n = 50
    idle = rng.uniform(0.5, 1.0, n)
    p1, p2 = idle + rng.uniform(0, 1, n), idle + rng.uniform(0, 1, n)
    idle_t = PowerTrace(0.01, tuple(idle))
    i1 = integrate_decoding_energy(PowerTrace(0.01, tuple(p1)), idle_t)
    i2 = integrate_decoding_energy(PowerTrace(0.01, tuple(p2)), idle_t)
    combo = PowerTrace(0.01, tuple(a * p1 + b * p2))
    scaled_idle = PowerTrace(0.01, tuple((a + b) * idle))
    assert integrate_decoding_energy(combo, scaled_idle) == pytest.approx(a * i1 + b * i2, rel=1e-9, abs=1e-12)


# -- Student-t ----------------------------------------------------------------------

def test_t_critical_examples():
    assert student_t_critical(0.99, 9) == pytest.approx(3.24984, abs=1e-4)
    assert student_t_critical(0.99, 10 ** 6) == pytest.approx(2.57583, abs=1e-4)
    with pytest.raises(DomainError):
        student_t_critical(0.0, 5)
    with pytest.raises(DomainError):
        student_t_critical(0.99, 0)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 0.95, 0.99, 0.999])
@pytest.mark.parametrize("dof", [1, 2, 3, 5, 9, 11, 30, 100, 1000])
def test_t_critical_against_scipy(alpha, dof):
    assert student_t_critical(alpha, dof) == pytest.approx(stats.t.ppf(1 - (1 - alpha) / 2, dof), abs=1e-8)


@settings(max_examples=80, deadline=None)
@given(a=st.floats(0.1, 50), b=st.floats(0.1, 50), x=st.floats(0, 1))
def test_incomplete_beta_against_scipy(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-10)


def test_t_cdf_symmetry():
    for dof in (1, 4, 30):
        for t in (0.3, 1.7, 6.0):
            assert student_t_cdf(t, dof) + student_t_cdf(-t, dof) == pytest.approx(1.0, abs=1e-14)
    assert student_t_cdf(0.0, 7) == pytest.approx(0.5)


# -- confidence-interval rule -------------------------------------------------------------

def _record(mean, sd, m):
    return MeasurementRecord("x", (), mean, sd, m)


def test_ci_examples():
    zero = MeasurementRecord.from_samples([5.0, 5.0])
    d = ci_stop_decision(zero)
    assert d.accepted and d.delta_c == 0.0
    d10 = ci_stop_decision(_record(100.0, 1.0, 10))
    assert not d10.accepted
    assert d10.delta_c == pytest.approx(2 / math.sqrt(10) * 3.2498355, rel=1e-7)
    # the quoted value 2.0555 is a loose rounding of 2.05538
    assert d10.delta_c == pytest.approx(2.0555, abs=2e-4)
    d12 = ci_stop_decision(_record(100.0, 1.0, 12))
    assert d12.accepted
    assert d12.delta_c == pytest.approx(2 / math.sqrt(12) * 3.1058065, rel=1e-7)
    assert d12.delta_c == pytest.approx(1.7932, abs=1e-4)


def test_ci_errors():
    with pytest.raises(TooFewSamples):
        ci_stop_decision(MeasurementRecord.from_samples([1.0]))
    with pytest.raises(NonPositiveMean):
        ci_stop_decision(_record(0.0, 1.0, 4))


@settings(max_examples=100, deadline=None)
@given(mean=st.floats(0.1, 1e3), s1=st.floats(0, 50), s2=st.floats(0, 50), m=st.integers(2, 200))
def test_ci_monotone_in_sigma(mean, s1, s2, m):
    lo, hi = sorted((s1, s2))
    if not ci_stop_decision(_record(mean, lo, m)).accepted:
        assert not ci_stop_decision(_record(mean, hi, m)).accepted


def test_delta_c_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(2, 40))
        x = rng.uniform(1, 2) * (1 + rng.uniform(0, 0.1) * rng.standard_normal(m))
        rec = MeasurementRecord.from_samples(x)
        mean = sum(x) / m
        sd = math.sqrt(sum((v - mean) ** 2 for v in x) / (m - 1))
        expect = 2 * sd / math.sqrt(m) * stats.t.ppf(0.995, m - 1)
        assert ci_stop_decision(rec).delta_c == pytest.approx(expect, rel=1e-8)


def test_measurement_series_noise_free():
    rec = simulate_measurement_series(3.5, 0.0, seed=1)
    assert rec.accepted and rec.m == 2 and rec.mean == 3.5


def test_measurement_series_deterministic():
    assert simulate_measurement_series(2.0, 0.01, seed=9) == simulate_measurement_series(2.0, 0.01, seed=9)
    assert simulate_measurement_series(2.0, 0.01, seed=9) != simulate_measurement_series(2.0, 0.01, seed=10)


def test_measurement_series_cap():
    rec = simulate_measurement_series(1.0, 0.5, seed=0, max_m=5)
    assert rec.m == 5 and not rec.accepted


def test_measurement_series_outlier_option():
    dropping = simulate_measurement_series(1.0, 0.2, seed=4, max_m=600, drop_outliers=True)
    assert dropping.dropped
    draws = dropping.m + len(dropping.dropped)
    # the same seed replays the same draws; nothing is discarded without the option
    plain = simulate_measurement_series(1.0, 0.2, seed=4, max_m=draws)
    assert plain.dropped == () and plain.m == draws
    assert sorted(plain.samples_E) == sorted(dropping.samples_E + dropping.dropped)
    kept = np.array(dropping.samples_E)
    assert all(abs(d - kept.mean()) > 2.5 * kept.std(ddof=1) for d in dropping.dropped)


def test_measurement_coverage():
    runs = 1000
    hits = sum(abs(simulate_measurement_series(5.0, 0.005, seed=s).mean - 5.0) / 5.0 <= 0.01 for s in range(runs))
    floor = 0.99 - 3 * math.sqrt(0.99 * 0.01 / runs)
    assert hits / runs >= floor


# -- dataset generation ----------------------------------------------------------------

def test_resolutions_from_sequence_table():
    ds, _ = generate_dataset(GeneratorConfig(model_id="H2", seed=2))
    sizes = {w * h for w, h in RESOLUTIONS}
    assert {r.meta.frame_size_S for r in ds.rows} <= sizes
    assert min(sizes) == 416 * 240 and max(sizes) == 2560 * 1600
    assert {r.group_key.qp for r in ds.rows} <= set(QPS)
    assert len(SEQUENCES) == 10


def test_group_structure(clean_by_model):
    ds, _ = clean_by_model("FS")
    assert len(ds) == 10 * len(CONFIGS) * len(QPS) * 8
    groups = {}
    for r in ds.rows:
        groups.setdefault(r.group_key, []).append(r.frame_count)
    assert all(sorted(v) == list(range(1, 9)) for v in groups.values())
    frames, dropped = frame_level_differences(ds)
    assert len(frames) == len(ds) and not dropped


def test_generator_deterministic():
    cfg = GeneratorConfig(model_id="FS", seed=13, noise_rel_sigma=0.02)
    a, _ = generate_dataset(cfg, 40)
    b, _ = generate_dataset(cfg, 40)
    assert a.to_csv() == b.to_csv()
    c, _ = generate_dataset(GeneratorConfig(model_id="FS", seed=14, noise_rel_sigma=0.02), 40)
    assert a.to_csv() != c.to_csv()


def test_row_count_honoured():
    assert len(generate_dataset(GeneratorConfig(seed=1), 37)[0]) == 37
    assert len(generate_dataset(GeneratorConfig(seed=1), 1000)[0]) == 1000


def test_noiseless_energies_follow_truth():
    for model_id in ("FA", "FS", "PE", "M", "T", "H1T", "H2T", "H2", "H3"):
        ds, truth = generate_dataset(GeneratorConfig(model_id=model_id, seed=6), 30)
        for r in ds.rows:
            assert truth.predict(r.meta, r.features.get(model_id)) == pytest.approx(r.energy_E, rel=1e-12)


def test_hidden_energies_positive_except_sao_all():
    _, truth = generate_dataset(GeneratorConfig(model_id="FA", seed=0), 5)
    negative = [n for n, v in truth.named_params().items() if v < 0]
    assert negative == ["SAO_allComps"]


def test_measured_dataset_is_close_to_truth():
    cfg = GeneratorConfig(model_id="FS", seed=3, noise_rel_sigma=0.005, measure=True)
    ds, truth = generate_dataset(cfg, 40)
    for r in ds.rows:
        assert abs(r.energy_E / truth.predict(r.meta, r.features["FS"]) - 1) < 0.03


@pytest.mark.parametrize("bad", [
    dict(model_id="XX"), dict(noise_rel_sigma=-1.0), dict(trace_size_range=(3, 1)),
    dict(qps=(60,)), dict(configs=("fast",)), dict(max_frames=0), dict(alpha=1.0),
])
def test_config_invalid(bad):
    with pytest.raises(ConfigInvalid):
        generate_dataset(GeneratorConfig(**bad), 5)
    with pytest.raises(ConfigInvalid):
        generate_dataset(GeneratorConfig(hidden_params={"nope": 1.0}, model_id="H2"), 5)
