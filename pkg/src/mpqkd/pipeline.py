"""End-to-end runs: simulate, reference, pair, sift, tally, estimate, report.

Each block of ``cfg.n_rounds`` rounds is simulated from its own seed
stream and paired on its own (pairs never cross block boundaries), so
tallies of disjoint blocks add up and blocks can run in any order or in
parallel. The report is a deterministic function of (config, seed, number
of blocks, frequency source).
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .estimate import ChainResult, run_chain
from .freqref import EstimateTable, estimate_beat
from .model import PairArrays, SystemConfig, TallyTable, config_to_dict, validate_config
from .pairing import pair_positions
from .siftmap import tally_pairs
from .sim import EventBlock, generate_reference_counts, reference_rng, simulate_events

FREQ_SOURCES = ("fft", "truth", "fixed")

_ASSUMPTIONS = {
    "pairing": "pairs never cross block boundaries",
    "x_sifting_half_width": "pi/M around 0 and pi",
    "binary_entropy": "standard -x log2 x - (1-x) log2 (1-x)",
    "detector_model": "threshold detectors, dark counts per gate = rate / clock",
    "statistical_skr": "expected-value rate without finite-size corrections; not security grade",
}


@dataclass(frozen=True)
class BlockResult:
    tallies: TallyTable
    n11_z_true: int
    n_pairs: int
    n_windows: int
    delta_f_sum_hz: float


def _delta_f_for_times(ev: EventBlock, cfg: SystemConfig, times: np.ndarray, source: str,
                       seed: int, block_index: int) -> tuple[np.ndarray, int, float]:
    if source == "fixed":
        return np.full(len(times), cfg.beat_center_hz), 0, 0.0
    if source == "truth":
        return ev.trace.delta_f_hz[ev.trace._step(times)], 0, 0.0
    if source != "fft":
        raise ValueError(f"unknown frequency source {source!r}; choose from {FREQ_SOURCES}")
    window_s = cfg.t_r_us * 1e-6
    n_windows = windows_needed(cfg, ev.n_rounds, times)
    estimates = [estimate_beat(counts, cfg.pad_factor, bin_s=cfg.bin_ns * 1e-9, window_start=w * window_s)
                 for w, counts in enumerate(reference_windows(ev, cfg, seed, block_index, n_windows))]
    table = EstimateTable(estimates, window_s, cfg.beat_center_hz, math.copysign(1.0, cfg.beat_center_hz))
    return table.lookup(times), n_windows, float(sum(e.delta_f_hz for e in estimates))


def windows_needed(cfg: SystemConfig, n_rounds: int, times: np.ndarray) -> int:
    """Complete reference windows that end no later than the last lookup time."""
    window_s = cfg.t_r_us * 1e-6
    last = float(times.max()) if len(times) else 0.0
    return min(int(last / window_s + 1e-9), int(n_rounds / cfg.clock_hz / window_s + 1e-9))


def reference_windows(ev: EventBlock, cfg: SystemConfig, seed: int, block_index: int, n_windows: int):
    """Binned reference counts, one array per window, from the block's reference stream."""
    rng = reference_rng(seed, block_index)
    window_s = cfg.t_r_us * 1e-6
    for w in range(n_windows):
        yield generate_reference_counts(ev.trace, cfg.ref_rate_hz, cfg.t_r_us, cfg.bin_ns, rng,
                                        t0=w * window_s, visibility=cfg.ref_visibility)


def process_events(ev: EventBlock, cfg: SystemConfig, *, freq_source: str = "fft", seed: int = 0,
                   block_index: int = 0) -> BlockResult:
    pos_j, pos_k = pair_positions(ev.index, ev.tags, ev.detections, cfg.l_max)
    pairs = PairArrays(ev.index[pos_j], ev.index[pos_k], ev.tags.take(pos_j), ev.tags.take(pos_k),
                       ev.detections.take(pos_j), ev.detections.take(pos_k))
    df, n_windows, df_sum = _delta_f_for_times(ev, cfg, pairs.k / cfg.clock_hz, freq_source,
                                               seed, block_index)
    tallies = tally_pairs(pairs, df, cfg.clock_hz, cfg.m_slices)
    return BlockResult(tallies, count_single_photon_z(ev, pos_j, pos_k), len(pairs), n_windows, df_sum)


def count_single_photon_z(ev: EventBlock, pos_j: np.ndarray, pos_k: np.ndarray) -> int:
    """Z pairs in which each party emitted exactly one photon over the pair."""
    from .siftmap import _LABEL_TABLE, _MU
    ca = _LABEL_TABLE[ev.tags.class_a[pos_j].astype(np.intp), ev.tags.class_a[pos_k].astype(np.intp)]
    cb = _LABEL_TABLE[ev.tags.class_b[pos_j].astype(np.intp), ev.tags.class_b[pos_k].astype(np.intp)]
    na = ev.truth.photon_count_a[pos_j].astype(np.int64) + ev.truth.photon_count_a[pos_k]
    nb = ev.truth.photon_count_b[pos_j].astype(np.int64) + ev.truth.photon_count_b[pos_k]
    return int(np.count_nonzero((ca == _MU) & (cb == _MU) & (na == 1) & (nb == 1)))


def run_block(cfg: SystemConfig, seed: int, block_index: int, freq_source: str = "fft") -> BlockResult:
    ev = simulate_events(cfg, seed, block_index=block_index)
    return process_events(ev, cfg, freq_source=freq_source, seed=seed, block_index=block_index)


def _run_block_args(args):
    return run_block(*args)


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("MPQKD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"MPQKD_THREADS must be an integer, got {env!r}") from None
    return 1


def config_hash(cfg: SystemConfig) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    seed: int
    n_blocks: int
    n_rounds_total: int
    freq_source: str
    version: str = __version__
    started_at: float = 0.0
    finished_at: float = 0.0

    def to_dict(self, *, with_times: bool = True) -> dict:
        d = {"config_hash": self.config_hash, "seed": self.seed, "n_blocks": self.n_blocks,
             "n_rounds_total": self.n_rounds_total, "freq_source": self.freq_source,
             "version": self.version}
        if with_times:
            d.update(started_at=self.started_at, finished_at=self.finished_at)
        return d


@dataclass
class ExperimentRun:
    cfg: SystemConfig
    tallies: TallyTable
    chain: ChainResult
    statistical: ChainResult
    manifest: RunManifest
    n11_z_true: int | None = None
    mean_delta_f_hz: float | None = None
    extra_warnings: list[str] = field(default_factory=list)

    def report(self) -> dict:
        return build_report(self)

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True) + "\n"


def _chain_dict(chain: ChainResult) -> dict:
    d = {
        "n11_z_lower": chain.n11.n11_z_lower,
        "e11_ph_upper": chain.e_ph.e11_ph_upper if chain.e_ph else None,
        "skr_bpp": chain.rate.bits_per_pulse,
        "skr_bps": chain.rate.bits_per_second,
        "leak_ec_bits": chain.rate.leak_ec,
        "plob_bpp": chain.plob,
        "skr_over_plob": chain.skr_over_plob,
        "intermediates": {**chain.n11.intermediates, **(chain.e_ph.intermediates if chain.e_ph else {})},
        "warnings": list(chain.warnings),
    }
    return _clean(d)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def build_report(run: ExperimentRun) -> dict:
    cfg = run.cfg
    return _clean({
        "manifest": run.manifest.to_dict(with_times=False),
        "config": config_to_dict(cfg),
        "assumptions": {**_ASSUMPTIONS, "f_ec": cfg.f_ec,
                        "epsilons": {k: getattr(cfg.epsilons, k) for k in vars(cfg.epsilons)}},
        "tallies": run.tallies.to_dict(),
        "error_rate_z": run.tallies.error_rate_z,
        "error_rate_x": run.tallies.error_rate_x,
        "finite_key": _chain_dict(run.chain),
        "statistical": {"label": "statistical estimate, not security grade", **_chain_dict(run.statistical)},
        "simulation": {"n11_z_true": run.n11_z_true, "mean_delta_f_hz_estimated": run.mean_delta_f_hz},
        "warnings": list(run.extra_warnings) + list(run.chain.warnings),
    })


def finish(cfg: SystemConfig, tallies: TallyTable, manifest: RunManifest, *, n11_true=None,
           mean_df=None, warnings=()) -> ExperimentRun:
    n_total = max(manifest.n_rounds_total, 1)
    chain = run_chain(tallies, cfg, n_total)
    stat = run_chain(tallies, cfg, n_total, finite=False)
    return ExperimentRun(cfg, tallies, chain, stat, manifest, n11_true, mean_df, list(warnings))


def run_experiment(cfg: SystemConfig, seed: int, n_blocks: int, *, freq_source: str = "fft",
                   workers: int | None = None) -> ExperimentRun:
    """Simulate ``n_blocks`` blocks of ``cfg.n_rounds`` rounds and run the estimation chain."""
    validate_config(cfg)
    if n_blocks < 0:
        raise ValueError("n_blocks must be non-negative")
    if freq_source not in FREQ_SOURCES:
        raise ValueError(f"unknown frequency source {freq_source!r}; choose from {FREQ_SOURCES}")
    started = time.time()
    jobs = [(cfg, seed, b, freq_source) for b in range(n_blocks)]
    n_workers = min(worker_count(workers), max(n_blocks, 1))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_run_block_args, jobs))
    else:
        results = [run_block(*job) for job in jobs]
    tallies = TallyTable()
    for r in results:
        tallies = tallies + r.tallies
    n_windows = sum(r.n_windows for r in results)
    mean_df = sum(r.delta_f_sum_hz for r in results) / n_windows if n_windows else None
    manifest = RunManifest(config_hash(cfg), seed, n_blocks, n_blocks * cfg.n_rounds, freq_source,
                           started_at=started, finished_at=time.time())
    warnings = ["no blocks simulated"] if n_blocks == 0 else []
    return finish(cfg, tallies, manifest, n11_true=sum(r.n11_z_true for r in results),
                  mean_df=mean_df, warnings=warnings)


def replay_records(path, cfg: SystemConfig, *, fixed_delta_f_hz: float | None = None) -> ExperimentRun:
    """Apply the pairing/sifting/estimation chain to a record file.

    The detuning comes from the reference sidecar when present, otherwise
    from ``fixed_delta_f_hz`` (default: the configured beat centre).
    """
    from .records import read_records
    from .pairing import gather_pairs
    from .freqref import sliding_estimates

    validate_config(cfg)
    rec = read_records(path)
    if rec.clock_hz != cfg.clock_hz:
        raise ValueError(f"record clock {rec.clock_hz:g} Hz differs from config clock {cfg.clock_hz:g} Hz")
    # the record length is the block length
    cfg = cfg.replace(n_rounds=len(rec))
    index = np.arange(len(rec), dtype=np.int64)
    pairs = gather_pairs(index, rec.tags, rec.detections, cfg.l_max)
    times = pairs.k / cfg.clock_hz
    mean_df = None
    if rec.reference is not None:
        ref = rec.reference
        est = sliding_estimates(ref.counts, ref.window_us, cfg.pad_factor, bin_ns=ref.bin_ns, t0=ref.t0)
        table = EstimateTable(est, ref.window_us * 1e-6, cfg.beat_center_hz,
                              math.copysign(1.0, cfg.beat_center_hz))
        df = table.lookup(times)
        mean_df = float(np.mean([e.delta_f_hz for e in est]))
    else:
        df = cfg.beat_center_hz if fixed_delta_f_hz is None else fixed_delta_f_hz
    tallies = tally_pairs(pairs, df, cfg.clock_hz, cfg.m_slices)
    n11_true = None
    if rec.photons is not None:
        # reuse the event-level counter on the dense data
        from .sim import EventBlock, GroundTruth
        ev = EventBlock(len(rec), rec.clock_hz, index, rec.tags, rec.detections,
                        GroundTruth(rec.photons[:, 0], rec.photons[:, 1]), None)
        pos_j, pos_k = pair_positions(index, rec.tags, rec.detections, cfg.l_max)
        n11_true = count_single_photon_z(ev, pos_j, pos_k)
    meta_path = Path(str(path) + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    source = meta.get("freq_source", "fft" if rec.reference is not None else "fixed")
    manifest = RunManifest(config_hash(cfg), int(meta.get("seed", -1)), int(meta.get("n_blocks", 1)),
                           len(rec), source)
    return finish(cfg, tallies, manifest, n11_true=n11_true, mean_df=mean_df)


def write_block_records(cfg: SystemConfig, seed: int, path, *, block_index: int = 0) -> None:
    """Simulate one dense block and write it with phase, truth, reference and meta sidecars.

    Replaying the file reproduces ``run_experiment(cfg, seed, 1)``.
    """
    from .records import ReferenceStream, write_records
    from .sim import simulate_block

    validate_config(cfg)
    block = simulate_block(cfg, seed, block_index=block_index)
    ev = block.events()
    pos_j, pos_k = pair_positions(ev.index, ev.tags, ev.detections, cfg.l_max)
    n_windows = windows_needed(cfg, ev.n_rounds, ev.index[pos_k] / cfg.clock_hz)
    counts = list(reference_windows(ev, cfg, seed, block_index, n_windows))
    per = int(round(cfg.t_r_us * 1e3 / cfg.bin_ns))
    stream = np.concatenate(counts) if counts else np.zeros(per, np.int32)
    reference = ReferenceStream(stream, cfg.bin_ns, cfg.t_r_us) if counts else None
    write_records(path, block.tags, block.detections, cfg.clock_hz,
                  photons=np.column_stack([block.truth.photon_count_a, block.truth.photon_count_b]),
                  reference=reference)
    meta = {"seed": seed, "n_blocks": 1, "freq_source": "fft", "block_index": block_index}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
