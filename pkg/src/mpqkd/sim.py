"""Monte-Carlo simulation of sources, channels, interference and detection.

Clicks are rare (~1e-3 per round at 200 km), so the core sampler draws only
the rounds in which at least one detector fired. For phase-randomised
coherent inputs the no-click probability (1-d)^2 exp(-(k_a + k_b)) does not
depend on the relative phase, so the clicked rounds form a Bernoulli
process over the round index. Each clicked round then gets its intensity
classes, phases and click pattern from the exact conditional law.
Ground-truth photon numbers come from the photon-number (Fock) posterior
given the class pair and click pattern. Averaged over phases, that joint
law is the same as the coherent-state one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .model import (Detections, IntensityClass, PairArrays, RoundTags, SystemConfig)

TWO_PI = 2.0 * math.pi
CHANNEL_STEP_S = 100e-6
MAX_PHOTONS = 20

# seed-sequence sub-streams of one block
_TRACE, _EVENTS, _FILL, _REFERENCE = range(4)


# --- detector model -------------------------------------------------------------


def click_probabilities(kappa_a, kappa_b, relative_phase, dark_prob):
    """Click probabilities of detectors L and R behind a 50:50 beam splitter.

    ``kappa_a``/``kappa_b`` are detected mean photon numbers (source intensity
    times channel transmittance times detector efficiency). Broadcasts over
    numpy arrays.
    """
    kappa_a = np.asarray(kappa_a, dtype=float)
    kappa_b = np.asarray(kappa_b, dtype=float)
    if np.any(kappa_a < 0) or np.any(kappa_b < 0):
        raise ValueError("detected mean photon numbers must be non-negative")
    if not 0.0 <= dark_prob < 1.0:
        raise ValueError("dark_prob must lie in [0, 1)")
    cross = 2.0 * np.sqrt(kappa_a * kappa_b) * np.cos(relative_phase)
    total = kappa_a + kappa_b
    p_l = 1.0 - (1.0 - dark_prob) * np.exp(-np.maximum(total + cross, 0.0) / 2.0)
    p_r = 1.0 - (1.0 - dark_prob) * np.exp(-np.maximum(total - cross, 0.0) / 2.0)
    return p_l, p_r


def detected_intensities(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Detected mean photon numbers per intensity class for Alice and Bob."""
    eta_a = cfg.alice.channel_transmittance * cfg.det_efficiency
    eta_b = cfg.bob.channel_transmittance * cfg.det_efficiency
    return cfg.alice.intensities * eta_a, cfg.bob.intensities * eta_b


# --- channel --------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelState:
    delta_f_hz: float
    phase_offset_rad: float


def evolve_channel(state: ChannelState, dt: float, cfg: SystemConfig,
                   rng: np.random.Generator) -> ChannelState:
    """Advance the laser detuning and fiber phase random walks by ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    phase_step = cfg.phase_drift_std_rad * math.sqrt(dt / CHANNEL_STEP_S)
    freq_step = cfg.beat_jitter_std_hz * math.sqrt(dt / (cfg.t_r_us * 1e-6))
    return ChannelState(state.delta_f_hz + freq_step * rng.standard_normal(),
                        state.phase_offset_rad + phase_step * rng.standard_normal())


@dataclass(frozen=True)
class ChannelTrace:
    """Piecewise-constant channel state, one entry per 100 us step.

    ``beat_phase0[i]`` is the accumulated laser beat phase 2*pi*integral(df dt)
    at the start of step i, so the beat phase is continuous in time.
    """

    delta_f_hz: np.ndarray
    phase_offset_rad: np.ndarray
    beat_phase0: np.ndarray
    step_s: float = CHANNEL_STEP_S

    @property
    def duration_s(self) -> float:
        return len(self.delta_f_hz) * self.step_s

    def _step(self, t):
        return np.minimum((np.asarray(t) / self.step_s).astype(np.int64), len(self.delta_f_hz) - 1)

    def state_at(self, t: float) -> ChannelState:
        i = int(self._step(t))
        return ChannelState(float(self.delta_f_hz[i]), float(self.phase_offset_rad[i]))

    def beat_phase(self, t):
        i = self._step(t)
        return self.beat_phase0[i] + TWO_PI * self.delta_f_hz[i] * (np.asarray(t) - i * self.step_s)

    def charlie_phase(self, t):
        """Phase the channel adds to theta_a - theta_b at time ``t``: beat phase plus fiber offset."""
        return self.beat_phase(t) + self.phase_offset_rad[self._step(t)]


def channel_trace(cfg: SystemConfig, duration_s: float, rng: np.random.Generator) -> ChannelTrace:
    n = max(1, math.ceil(duration_s / CHANNEL_STEP_S - 1e-9))
    freq_step = cfg.beat_jitter_std_hz * math.sqrt(CHANNEL_STEP_S / (cfg.t_r_us * 1e-6))
    start_phase, start_offset = rng.uniform(0.0, TWO_PI, size=2)
    steps = rng.standard_normal((2, n - 1))
    delta_f = cfg.beat_center_hz + np.concatenate([[0.0], np.cumsum(freq_step * steps[0])])
    offset = start_offset + np.concatenate([[0.0], np.cumsum(cfg.phase_drift_std_rad * steps[1])])
    beat0 = start_phase + np.concatenate([[0.0], np.cumsum(TWO_PI * delta_f[:-1] * CHANNEL_STEP_S)])
    return ChannelTrace(delta_f, offset, beat0)


# --- photon-number ground truth ---------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    photon_count_a: np.ndarray
    photon_count_b: np.ndarray

    def take(self, idx) -> "GroundTruth":
        return GroundTruth(self.photon_count_a[idx], self.photon_count_b[idx])


def _thinning_matrix(eta: float) -> np.ndarray:
    n = np.arange(MAX_PHOTONS + 1)[:, None]
    k = np.arange(MAX_PHOTONS + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        logb = (gammaln(n + 1) - gammaln(k + 1) - gammaln(np.maximum(n - k, 0) + 1)
                + k * np.log(eta) + (n - k) * np.log1p(-eta))
    out = np.where(k <= n, np.exp(logb), 0.0)
    if eta == 1.0:
        out = (n == k).astype(float)
    return out


def pattern_given_detected(ka: int, kb: int, dark_prob: float) -> np.ndarray:
    """P(pattern) for ``ka``/``kb`` detected photons from the two inputs.

    Patterns are indexed none, L, R, LR. Indistinguishable photons leave
    the beam splitter all in one port with probability C(K, ka) / 2^K each
    (K = ka + kb), which gives Hong-Ou-Mandel bunching for ka = kb = 1.
    """
    K = ka + kb
    if K == 0:
        lit = {(0, 0): 1.0}
    else:
        one_port = math.comb(K, ka) / 2.0 ** K
        lit = {(1, 0): one_port, (0, 1): one_port, (1, 1): 1.0 - 2.0 * one_port}
    out = np.zeros(4)
    d = dark_prob
    for (lit_l, lit_r), p in lit.items():
        pl = 1.0 if lit_l else d
        pr = 1.0 if lit_r else d
        out[0] += p * (1 - pl) * (1 - pr)
        out[1] += p * pl * (1 - pr)
        out[2] += p * (1 - pl) * pr
        out[3] += p * pl * pr
    return out


@lru_cache(maxsize=32)
def _posterior_cdf(eta_a: float, eta_b: float, dark_prob: float,
                   intens_a: tuple, intens_b: tuple) -> np.ndarray:
    size = MAX_PHOTONS + 1
    q = np.empty((4, size, size))
    for ka in range(size):
        for kb in range(size):
            q[:, ka, kb] = pattern_given_detected(ka, kb, dark_prob)
    ta, tb = _thinning_matrix(eta_a), _thinning_matrix(eta_b)
    # P(pattern | n_a, n_b)
    given_n = np.einsum("ak,bl,pkl->pab", ta, tb, q)
    n = np.arange(size)
    cdf = np.empty((3, 3, 4, size * size))
    for ca in range(3):
        for cb in range(3):
            pa = _poisson_pmf(n, intens_a[ca])
            pb = _poisson_pmf(n, intens_b[cb])
            joint = given_n * pa[None, :, None] * pb[None, None, :]
            for pat in range(4):
                w = joint[pat].ravel()
                total = w.sum()
                if total > 0:
                    cdf[ca, cb, pat] = np.cumsum(w) / total
                else:
                    cdf[ca, cb, pat] = 1.0
    return cdf


def _poisson_pmf(n: np.ndarray, tau: float) -> np.ndarray:
    if tau == 0.0:
        return (n == 0).astype(float)
    p = np.exp(-tau + n * math.log(tau) - gammaln(n + 1))
    return p / p.sum()


def photon_posterior_cdf(cfg: SystemConfig) -> np.ndarray:
    """CDF over (n_a, n_b) photon numbers per (class_a, class_b, click pattern)."""
    eta_a = cfg.alice.channel_transmittance * cfg.det_efficiency
    eta_b = cfg.bob.channel_transmittance * cfg.det_efficiency
    return _posterior_cdf(eta_a, eta_b, cfg.dark_prob,
                          tuple(cfg.alice.intensities), tuple(cfg.bob.intensities))


def sample_photons(cfg: SystemConfig, class_a, class_b, pattern, rng) -> GroundTruth:
    cdf = photon_posterior_cdf(cfg)
    size = MAX_PHOTONS + 1
    rows = (np.asarray(class_a, np.int64) * 3 + np.asarray(class_b, np.int64)) * 4 + np.asarray(pattern, np.int64)
    flat = cdf.reshape(-1, size * size)
    idx = np.empty(len(rows), dtype=np.int64)
    u = rng.random(len(rows))
    for r in np.unique(rows):
        sel = rows == r
        idx[sel] = np.minimum(np.searchsorted(flat[r], u[sel], side="right"), size * size - 1)
    return GroundTruth((idx // size).astype(np.uint16), (idx % size).astype(np.uint16))


# --- block simulation -------------------------------------------------------------


@dataclass(frozen=True)
class EventBlock:
    """Rounds of one block in which at least one detector clicked."""

    n_rounds: int
    clock_hz: float
    index: np.ndarray
    tags: RoundTags
    detections: Detections
    truth: GroundTruth
    trace: ChannelTrace

    def __len__(self) -> int:
        return len(self.index)

    def times(self, index=None) -> np.ndarray:
        return (self.index if index is None else np.asarray(index)) / self.clock_hz


@dataclass(frozen=True)
class SimBlock:
    """Every round of one block (dense form, for record files and small runs)."""

    tags: RoundTags
    detections: Detections
    truth: GroundTruth
    trace: ChannelTrace
    clock_hz: float

    def __len__(self) -> int:
        return len(self.tags)

    def events(self) -> EventBlock:
        idx = np.flatnonzero(self.detections.click_l | self.detections.click_r)
        return EventBlock(len(self), self.clock_hz, idx, self.tags.take(idx),
                          self.detections.take(idx), self.truth.take(idx), self.trace)


def _streams(seed: int, block_index: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed, spawn_key=(block_index,))
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _class_priors(cfg: SystemConfig, force_class):
    pa, pb = cfg.alice.probabilities, cfg.bob.probabilities
    if force_class is not None:
        pa = np.eye(3)[int(force_class[0])]
        pb = np.eye(3)[int(force_class[1])]
    return pa, pb


def _bernoulli_positions(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    if q <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if q >= 1.0:
        return np.arange(n, dtype=np.int64)
    chunks, last = [], -1
    while last < n - 1:
        size = int(n * q + 6 * math.sqrt(n * q) + 16)
        pos = last + np.cumsum(rng.geometric(q, size=size), dtype=np.int64)
        chunks.append(pos)
        last = int(pos[-1])
    pos = np.concatenate(chunks)
    return pos[pos < n]


def simulate_events(cfg: SystemConfig, seed: int, n_rounds: int | None = None, *,
                    block_index: int = 0, force_class: tuple[int, int] | None = None,
                    equal_phases: bool = False) -> EventBlock:
    """Simulate one block and return only the rounds with a click.

    ``force_class`` pins both parties to fixed intensity classes and
    ``equal_phases`` gives Bob Alice's phase in every round (test harnesses).
    The result depends only on (cfg, seed, n_rounds, block_index).
    """
    n = cfg.n_rounds if n_rounds is None else int(n_rounds)
    rng_trace, rng, _, _ = _streams(seed, block_index)
    trace = channel_trace(cfg, n / cfg.clock_hz, rng_trace)
    kap_a, kap_b = detected_intensities(cfg)
    d = cfg.dark_prob
    pa, pb = _class_priors(cfg, force_class)
    p_any = 1.0 - (1.0 - d) ** 2 * np.exp(-(kap_a[:, None] + kap_b[None, :]))
    weight = pa[:, None] * pb[None, :] * p_any
    q = float(weight.sum())

    index = _bernoulli_positions(n, q, rng)
    k = len(index)
    pair = rng.choice(9, size=k, p=(weight / q).ravel()) if k else np.empty(0, np.int64)
    class_a = (pair // 3).astype(np.uint8)
    class_b = (pair % 3).astype(np.uint8)
    phase_a = rng.uniform(0.0, TWO_PI, size=k)
    phase_b = phase_a.copy() if equal_phases else rng.uniform(0.0, TWO_PI, size=k)
    t = index / cfg.clock_hz
    phi = phase_a - phase_b + trace.charlie_phase(t)
    p_l, p_r = click_probabilities(kap_a[class_a], kap_b[class_b], phi, d)
    only_l = p_l * (1.0 - p_r)
    only_r = (1.0 - p_l) * p_r
    u = rng.random(k) * (only_l + only_r + p_l * p_r)
    click_l = (u < only_l) | (u >= only_l + only_r)
    click_r = u >= only_l
    pattern = click_l.astype(np.int64) + 2 * click_r.astype(np.int64)
    truth = sample_photons(cfg, class_a, class_b, pattern, rng)
    return EventBlock(n, cfg.clock_hz, index, RoundTags(class_a, class_b, phase_a, phase_b),
                      Detections(click_l, click_r), truth, trace)


def simulate_block(cfg: SystemConfig, seed: int, n_rounds: int | None = None, *,
                   block_index: int = 0, force_class: tuple[int, int] | None = None,
                   equal_phases: bool = False) -> SimBlock:
    """Dense per-round output of a block.

    Clicked rounds are identical to ``simulate_events`` with the same
    arguments. The remaining rounds are filled from the class/phase/photon
    law conditioned on no click.
    """
    ev = simulate_events(cfg, seed, n_rounds, block_index=block_index,
                         force_class=force_class, equal_phases=equal_phases)
    n = ev.n_rounds
    _, _, rng, _ = _streams(seed, block_index)
    kap_a, kap_b = detected_intensities(cfg)
    pa, pb = _class_priors(cfg, force_class)
    p_none = (1.0 - cfg.dark_prob) ** 2 * np.exp(-(kap_a[:, None] + kap_b[None, :]))
    weight = (pa[:, None] * pb[None, :] * p_none).ravel()
    quiet = np.ones(n, dtype=bool)
    quiet[ev.index] = False
    n_quiet = int(quiet.sum())

    class_a = np.empty(n, np.uint8)
    class_b = np.empty(n, np.uint8)
    pair = rng.choice(9, size=n_quiet, p=weight / weight.sum())
    class_a[quiet], class_b[quiet] = pair // 3, pair % 3
    class_a[ev.index], class_b[ev.index] = ev.tags.class_a, ev.tags.class_b
    phase_a = rng.uniform(0.0, TWO_PI, size=n)
    phase_b = phase_a.copy() if equal_phases else rng.uniform(0.0, TWO_PI, size=n)
    phase_a[ev.index], phase_b[ev.index] = ev.tags.phase_a, ev.tags.phase_b
    quiet_truth = sample_photons(cfg, class_a[quiet], class_b[quiet], np.zeros(n_quiet, np.int64), rng)
    photons_a = np.empty(n, np.uint16)
    photons_b = np.empty(n, np.uint16)
    photons_a[quiet], photons_b[quiet] = quiet_truth.photon_count_a, quiet_truth.photon_count_b
    photons_a[ev.index], photons_b[ev.index] = ev.truth.photon_count_a, ev.truth.photon_count_b
    click_l = np.zeros(n, bool)
    click_r = np.zeros(n, bool)
    click_l[ev.index], click_r[ev.index] = ev.detections.click_l, ev.detections.click_r
    return SimBlock(RoundTags(class_a, class_b, phase_a, phase_b), Detections(click_l, click_r),
                    GroundTruth(photons_a, photons_b), ev.trace, cfg.clock_hz)


def expected_click_fraction(cfg: SystemConfig, n_phase: int = 4096) -> float:
    """P(exactly one detector clicks), averaged over classes and the relative phase.

    Midpoint quadrature over a uniform phase; the integrand is a
    trigonometric polynomial in exp(cos), so this converges spectrally.
    """
    kap_a, kap_b = detected_intensities(cfg)
    pa, pb = cfg.alice.probabilities, cfg.bob.probabilities
    phi = (np.arange(n_phase) + 0.5) * TWO_PI / n_phase
    total = 0.0
    for ca in range(3):
        for cb in range(3):
            p_l, p_r = click_probabilities(kap_a[ca], kap_b[cb], phi, cfg.dark_prob)
            total += pa[ca] * pb[cb] * float(np.mean(p_l * (1 - p_r) + (1 - p_l) * p_r))
    return total


# --- reference light --------------------------------------------------------------


def generate_reference_counts(trace: ChannelTrace, mean_rate_hz: float, t_r_us: float, bin_ns: float,
                              seed, *, t0: float = 0.0, n_windows: int = 1,
                              visibility: float = 1.0) -> np.ndarray:
    """Binned detections of the reference beat note over ``n_windows`` windows.

    Counts per bin are Poisson with mean rate * bin * (1 + V cos(beat phase)),
    the beat phase being the laser beat plus the fiber phase offset, sampled
    at the bin centre.
    """
    if mean_rate_hz < 0:
        raise ValueError("mean rate must be non-negative")
    bins_per_window = t_r_us * 1e3 / bin_ns
    if abs(bins_per_window - round(bins_per_window)) > 1e-9:
        raise ValueError("bin width must divide the window")
    n_bins = int(round(bins_per_window)) * n_windows
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mean_rate_hz == 0:
        return np.zeros(n_bins, dtype=np.int32)
    bin_s = bin_ns * 1e-9
    t = t0 + (np.arange(n_bins) + 0.5) * bin_s
    phase = trace.charlie_phase(t)
    lam = mean_rate_hz * bin_s * (1.0 + visibility * np.cos(phase))
    return rng.poisson(lam).astype(np.int32)


def reference_rng(seed: int, block_index: int) -> np.random.Generator:
    return _streams(seed, block_index)[_REFERENCE]


# --- X-pair harness ------------------------------------------------------------------


def simulate_residual_pairs(cfg: SystemConfig, n_pairs: int, residual_phase: float, seed: int) -> PairArrays:
    """Decoy/decoy X pairs whose only phase error is an injected constant residual.

    Bob's round-k phase is chosen so that the announced phase differences
    match exactly (half the pairs at 0, half at pi), the laser detuning is 0,
    and the round-k interference phase is shifted by ``residual_phase``.
    Both rounds are conditioned on a single click. Pairs are drawn as pairs,
    skipping the pairing stage.
    """
    rng = np.random.default_rng(seed)
    kap_a, kap_b = detected_intensities(cfg)
    ka, kb = kap_a[IntensityClass.DECOY], kap_b[IntensityClass.DECOY]
    d = cfg.dark_prob
    bound = 2.0 * (1.0 - (1.0 - d) * math.exp(-(math.sqrt(ka) + math.sqrt(kb)) ** 2 / 2.0))

    def p_single(phi):
        p_l, p_r = click_probabilities(ka, kb, phi, d)
        return p_l, p_r, p_l * (1 - p_r) + (1 - p_l) * p_r

    cols = {name: [] for name in ("aj", "ak", "bj", "branch", "u")}
    have = 0
    while have < n_pairs:
        m = int((n_pairs - have) * 1.2) + 64
        aj, ak, bj = rng.uniform(0.0, TWO_PI, size=(3, m))
        branch = rng.integers(0, 2, size=m)
        phi_j = aj - bj
        # announced differences equal (or differ by pi): theta_b_k = theta_b_j - (aj - ak) - branch*pi
        phi_k = phi_j + branch * math.pi + residual_phase
        acc = p_single(phi_j)[2] * p_single(phi_k)[2] / bound ** 2
        keep = rng.random(m) < acc
        for name, arr in (("aj", aj), ("ak", ak), ("bj", bj), ("branch", branch)):
            cols[name].append(arr[keep])
        have += int(keep.sum())
    aj, ak, bj, branch = (np.concatenate(cols[c])[:n_pairs] for c in ("aj", "ak", "bj", "branch"))
    bk = np.mod(bj - (aj - ak) - branch * math.pi, TWO_PI)
    phi_j = aj - bj
    phi_k = phi_j + branch * math.pi + residual_phase

    def single_click(phi):
        p_l, p_r, p1 = p_single(phi)
        left = rng.random(len(phi)) * p1 < p_l * (1 - p_r)
        return Detections(left, ~left)

    det_j, det_k = single_click(phi_j), single_click(phi_k)
    decoy = np.full(n_pairs, IntensityClass.DECOY, np.uint8)
    j = 2 * np.arange(n_pairs, dtype=np.int64)
    return PairArrays(j, j + 1, RoundTags(decoy, decoy, aj, bj), RoundTags(decoy, decoy, ak, bk),
                      det_j, det_k)
