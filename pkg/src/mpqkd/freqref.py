"""Beat-frequency estimation from binned reference-light counts.

Each window of reference detections is mean-subtracted, zero-padded and
Fourier transformed, and the laser frequency difference is read off the
largest non-DC peak. The window is rectangular and, by default, the peak is
the raw argmax, so the resolution is 1 / (pad_factor * window length).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_PHASE_COUNTS = 600
TWO_PI = 2.0 * math.pi


class NoSignalError(ValueError):
    """The window has no oscillating component to estimate."""


class InsufficientCountsError(ValueError):
    pass


@dataclass(frozen=True)
class BeatEstimate:
    delta_f_hz: float
    window_start: float
    resolution_hz: float
    peak_magnitude: float


def padded_spectrum(bins, pad_factor: int = 2) -> tuple[np.ndarray, int]:
    """|rfft| of the mean-subtracted window zero-padded to ``pad_factor`` times its length."""
    x = np.asarray(bins, dtype=float)
    n_fft = pad_factor * x.size
    return np.abs(np.fft.rfft(x - x.mean(), n=n_fft)), n_fft


def estimate_beat(bins, pad_factor: int = 2, *, bin_s: float = 1e-9, window_start: float = 0.0,
                  interpolate: bool = False) -> BeatEstimate:
    """FFT peak of one window of counts sampled every ``bin_s`` seconds."""
    x = np.asarray(bins, dtype=float)
    if x.size == 0:
        raise ValueError("empty window")
    if pad_factor < 1:
        raise ValueError("pad_factor must be >= 1")
    if np.ptp(x) == 0:
        raise NoSignalError("window carries no beat signal")
    spec, n_fft = padded_spectrum(x, pad_factor)
    resolution = 1.0 / (n_fft * bin_s)
    # exclude DC and, for even lengths, the Nyquist bin
    top = len(spec) - 1 if n_fft % 2 == 0 else len(spec)
    peak = 1 + int(np.argmax(spec[1:top]))
    offset = 0.0
    if interpolate and 1 < peak < top - 1:
        a, b, c = np.log(spec[peak - 1:peak + 2] + 1e-300)
        denom = a - 2 * b + c
        offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
    return BeatEstimate((peak + offset) * resolution, window_start, resolution, float(spec[peak]))


def sliding_estimates(bins, window_us: float, pad_factor: int = 2, *, bin_ns: float = 1.0,
                      t0: float = 0.0, interpolate: bool = False) -> list[BeatEstimate]:
    """One estimate per complete contiguous window of ``window_us``."""
    per = window_us * 1e3 / bin_ns
    if abs(per - round(per)) > 1e-9:
        raise ValueError("bin width must divide the window")
    per = int(round(per))
    x = np.asarray(bins)
    n_windows = len(x) // per
    if n_windows == 0:
        raise ValueError("stream shorter than one window")
    bin_s = bin_ns * 1e-9
    return [estimate_beat(x[i * per:(i + 1) * per], pad_factor, bin_s=bin_s,
                          window_start=t0 + i * per * bin_s, interpolate=interpolate)
            for i in range(n_windows)]


class EstimateTable:
    """Lookup of the latest estimate whose window ended at or before time t.

    Times before the first window end fall back to ``fallback_hz`` (the
    calibrated beat frequency). ``sign`` converts the FFT magnitude to the
    signed detuning convention used by the sifting formula.
    """

    def __init__(self, estimates: list[BeatEstimate], window_s: float, fallback_hz: float,
                 sign: float = 1.0):
        self.estimates = list(estimates)
        self.window_s = window_s
        self.fallback_hz = fallback_hz
        self.sign = sign
        self._ends = np.array([e.window_start + window_s for e in self.estimates])
        self._values = sign * np.array([e.delta_f_hz for e in self.estimates])

    def lookup(self, t):
        t = np.asarray(t, dtype=float)
        # tolerate float rounding at exact window boundaries
        i = np.searchsorted(self._ends, t * (1 + 1e-12) + 1e-15, side="right") - 1
        values = np.concatenate([[self.fallback_hz], self._values])
        return values[i + 1]

    def __len__(self) -> int:
        return len(self.estimates)


def residual_phase_error_rate(delta):
    """X-basis error rate for a constant residual phase delta: (2 - cos delta)/4."""
    return (2.0 - np.cos(delta)) / 4.0


def residual_phase_bound(resolution_hz: float, l_max: int, clock_hz: float,
                         jitter_hz: float = 0.0) -> float:
    """Worst-case residual phase 2 pi df_err dt over the longest pairing gap.

    The frequency error is half the FFT resolution plus the beat drift since
    the estimate was taken.
    """
    return TWO_PI * (resolution_hz / 2.0 + jitter_hz) * l_max / clock_hz


def phase_from_counts(c0: int, c1: int, min_counts: int = MIN_PHASE_COUNTS) -> float:
    """Interferometer phase in [0, pi] from the two output-port counts."""
    if c0 < 0 or c1 < 0:
        raise ValueError("counts must be non-negative")
    total = c0 + c1
    if total < min_counts:
        raise InsufficientCountsError(f"need at least {min_counts} counts, got {total}")
    return math.acos(max(-1.0, min(1.0, (c0 - c1) / total)))


def write_estimates_csv(estimates: list[BeatEstimate], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_s", "delta_f_hz", "peak_magnitude"])
        for e in estimates:
            w.writerow([repr(e.window_start), repr(e.delta_f_hz), repr(e.peak_magnitude)])


def read_bins_csv(path: str | Path) -> np.ndarray:
    """Counts from a one-column CSV (an optional non-numeric header is skipped)."""
    rows = []
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append(float(row[-1]))
            except ValueError:
                if n == 0:
                    continue
                raise ValueError(f"{path}: line {n + 1}: not a count: {row[-1]!r}") from None
    return np.array(rows)
