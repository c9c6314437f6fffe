import math

import numpy as np
import pytest

from mpqkd import sim
from mpqkd.freqref import (EstimateTable, InsufficientCountsError, NoSignalError, estimate_beat,
                           padded_spectrum, phase_from_counts, read_bins_csv, residual_phase_bound,
                           residual_phase_error_rate, sliding_estimates, write_estimates_csv)
from mpqkd.presets import preset_config

N_WINDOW = 500_000  # 500 us of 1 ns bins


def cosine(freq, n=N_WINDOW, phase=0.3):
    t = np.arange(n) * 1e-9
    return 1.0 + np.cos(2 * math.pi * freq * t + phase)


def test_pure_cosine():
    est = estimate_beat(cosine(34.0e6), 2)
    assert abs(est.delta_f_hz - 34.0e6) <= 1000
    assert est.resolution_hz == pytest.approx(1000.0)


def test_resolution_follows_pad_factor():
    assert estimate_beat(cosine(1e6, n=1000), 4).resolution_hz == pytest.approx(1e9 / 4000)


def test_dc_only_has_no_signal():
    with pytest.raises(NoSignalError):
        estimate_beat(np.zeros(1000))
    with pytest.raises(NoSignalError):
        estimate_beat(np.full(1000, 0.1))


def test_bad_arguments():
    with pytest.raises(ValueError):
        estimate_beat([], 2)
    with pytest.raises(ValueError):
        estimate_beat(cosine(1e6, n=100), 0)


def test_scaling_invariance():
    rng = np.random.default_rng(0)
    x = rng.poisson(0.05 * cosine(21.3e6, n=200_000))
    assert estimate_beat(x).delta_f_hz == estimate_beat(7 * x).delta_f_hz


def test_parseval():
    rng = np.random.default_rng(1)
    x = rng.poisson(0.3, size=100_000).astype(float)
    spec, n_fft = padded_spectrum(x, 2)
    y = x - x.mean()
    # one-sided spectrum: interior bins appear twice in the full transform
    power = (spec[0] ** 2 + spec[-1] ** 2 + 2 * np.sum(spec[1:-1] ** 2)) / n_fft
    assert power == pytest.approx(np.sum(y ** 2), rel=1e-9)


def test_interpolation_refines_off_grid_peak():
    f = 34.0004e6
    raw = estimate_beat(cosine(f), 2).delta_f_hz
    fine = estimate_beat(cosine(f), 2, interpolate=True).delta_f_hz
    assert abs(fine - f) < abs(raw - f)


def test_sliding_boundaries_and_constant_beat():
    x = np.concatenate([cosine(30e6), cosine(30e6, phase=2.0)])
    est = sliding_estimates(x, 500)
    assert len(est) == 2
    assert est[0].delta_f_hz == est[1].delta_f_hz
    assert est[1].window_start == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        sliding_estimates(x[:1000], 500)


def test_sliding_tracks_drift_and_jitter():
    cfg = preset_config(202.31)
    trace = sim.channel_trace(cfg, 0.05, np.random.default_rng(5))
    bins = sim.generate_reference_counts(trace, 1e6, 500, 1, 6, n_windows=100)
    est = np.array([e.delta_f_hz for e in sliding_estimates(bins, 500)])
    truth = trace.delta_f_hz.reshape(100, 5).mean(axis=1)
    assert np.max(np.abs(est - truth)) <= 1000
    assert np.std(np.diff(est)) == pytest.approx(cfg.beat_jitter_std_hz, rel=0.2)


def test_estimate_table_lookup():
    from mpqkd.freqref import BeatEstimate
    est = [BeatEstimate(10.0, 0.0, 1.0, 1.0), BeatEstimate(20.0, 5e-4, 1.0, 1.0)]
    table = EstimateTable(est, 5e-4, 99.0, sign=-1.0)
    got = table.lookup([0.0, 4.9e-4, 5e-4, 9e-4, 1e-3, 2.0])
    assert got.tolist() == [99.0, 99.0, -10.0, -10.0, -20.0, -20.0]


def test_residual_phase_error_rate_values():
    assert residual_phase_error_rate(0.0) == 0.25
    assert residual_phase_error_rate(0.3961) == pytest.approx(0.2694, abs=5e-5)
    assert residual_phase_error_rate(0.1489) == pytest.approx(0.2528, abs=5e-5)


def test_residual_phase_bound_scaling():
    b = residual_phase_bound(1000.0, 50_000, 5e8)
    assert b == pytest.approx(2 * math.pi * 500 * 1e-4)
    assert residual_phase_bound(1000.0, 10_000, 5e8, 652.282) < 0.3961


def test_phase_from_counts():
    assert phase_from_counts(600, 0) == 0.0
    assert phase_from_counts(300, 300) == pytest.approx(math.pi / 2)
    with pytest.raises(InsufficientCountsError):
        phase_from_counts(300, 299)
    with pytest.raises(ValueError):
        phase_from_counts(-1, 700)


def test_phase_from_counts_binomial_oracle():
    rng = np.random.default_rng(9)
    theta = 1.0
    c0 = rng.binomial(600, (1 + math.cos(theta)) / 2, size=2000)
    est = np.array([phase_from_counts(int(a), 600 - int(a)) for a in c0])
    assert np.mean(np.abs(est - theta) <= 0.1) >= 0.95


def test_csv_io(tmp_path):
    path = tmp_path / "bins.csv"
    path.write_text("count\n" + "\n".join(str(int(v)) for v in np.round(cosine(1e8, n=2000) * 3)) + "\n")
    bins = read_bins_csv(path)
    assert len(bins) == 2000
    est = sliding_estimates(bins, 1.0)
    write_estimates_csv(est, tmp_path / "est.csv")
    lines = (tmp_path / "est.csv").read_text().splitlines()
    assert lines[0] == "window_start_s,delta_f_hz,peak_magnitude" and len(lines) == 3
