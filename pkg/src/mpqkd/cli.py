"""Command-line interface (``mpqkd``).

Exit status: 0 on success, 2 for configuration or input-file errors, 3 when
the numerics fail (no beat signal, unbounded estimates, solver failure).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .estimate import EstimationError, plob_bound, run_chain
from .freqref import NoSignalError, read_bins_csv, sliding_estimates, write_estimates_csv
from .model import ConfigError, format_config, load_config
from .presets import DISTANCES_KM, preset_config

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _config(args):
    if getattr(args, "config", None) and getattr(args, "preset", None) is not None:
        raise ConfigError("config", "give either --config or --preset, not both")
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None) is not None:
        cfg = preset_config(args.preset)
    else:
        raise ConfigError("config", "one of --config or --preset is required")
    if getattr(args, "rounds", None):
        cfg = cfg.replace(n_rounds=int(args.rounds))
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _summary(run) -> str:
    rep = run.report()
    fk = rep["finite_key"]
    lines = [
        f"rounds            {run.manifest.n_rounds_total}",
        f"Z pairs           {rep['tallies']['n_mu_mu']}  (error {rep['error_rate_z']:.4%})",
        f"X pairs (sifted)  {rep['tallies']['n_2nu_2nu']}  (error {rep['error_rate_x']:.4%})",
        f"n11_z lower       {fk['n11_z_lower']:.6g}",
        f"e11_ph upper      {fk['e11_ph_upper']}",
        f"SKR               {fk['skr_bpp']:.6g} bit/pulse, {fk['skr_bps']:.6g} bit/s",
        f"SKR (statistical) {rep['statistical']['skr_bpp']:.6g} bit/pulse",
    ]
    if run.n11_z_true is not None:
        lines.append(f"true n11_z        {run.n11_z_true}")
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    from .pipeline import run_experiment, write_block_records
    cfg = _config(args)
    run = run_experiment(cfg, args.seed, args.blocks, freq_source=args.freq_source, workers=args.workers)
    out = Path(args.out)
    _write(out / "report.json", run.report_json())
    _write(out / "tallies.json", json.dumps(run.tallies.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "manifest.json", json.dumps(run.manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "config.txt", format_config(cfg))
    if args.records:
        if args.blocks != 1 or args.freq_source != "fft":
            raise ConfigError("records", "record files are written for single-block runs with --freq-source fft")
        write_block_records(cfg, args.seed, out / "records.mpqk")
    print(_summary(run))
    return 0


def cmd_replay(args) -> int:
    from .pipeline import replay_records
    cfg = _config(args)
    run = replay_records(args.records, cfg, fixed_delta_f_hz=args.delta_f)
    if args.out:
        _write(Path(args.out), run.report_json())
    print(_summary(run))
    return 0


def cmd_estimate(args) -> int:
    from .siftmap import read_tallies
    cfg = _config(args)
    try:
        tallies = read_tallies(args.tallies)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError("tallies", str(exc)) from exc
    n_total = args.rounds or cfg.n_rounds
    chain = run_chain(tallies, cfg, n_total)
    if chain.e_ph is None:
        raise EstimationError("; ".join(chain.warnings))
    result = {
        "n11_z_lower": chain.n11.n11_z_lower,
        "e11_ph_upper": chain.e_ph.e11_ph_upper,
        "skr_bpp": chain.rate.bits_per_pulse,
        "skr_bps": chain.rate.bits_per_second,
        "plob_bpp": chain.plob,
        "skr_over_plob": chain.skr_over_plob,
        "warnings": chain.warnings,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_plob(args) -> int:
    print(f"{plob_bound(args.loss_db):.6e}")
    return 0


def cmd_freqest(args) -> int:
    try:
        bins = read_bins_csv(args.bins)
    except (OSError, ValueError) as exc:
        raise ConfigError("bins", str(exc)) from exc
    est = sliding_estimates(bins, args.window_us, args.pad, bin_ns=args.bin_ns)
    if args.out:
        write_estimates_csv(est, args.out)
    for e in est:
        print(f"{e.window_start:.9f}\t{e.delta_f_hz:.1f}")
    return 0


def cmd_pair(args) -> int:
    from .pairing import pair_rounds
    text = Path(args.mask).read_text().split()
    try:
        mask = np.array([int(t) for t in text], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError("mask", f"mask entries must be 0 or 1: {exc}") from exc
    if np.any((mask != 0) & (mask != 1)):
        raise ConfigError("mask", "mask entries must be 0 or 1")
    j, k = pair_rounds(mask.astype(bool), args.l_max)
    for a, b in zip(j, k):
        print(f"{a}\t{b}")
    return 0


def cmd_preset(args) -> int:
    sys.stdout.write(format_config(preset_config(args.distance)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpqkd", description="Mode-pairing QKD simulation and key-rate estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_cfg(sp, rounds=True):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--preset", type=float, metavar="KM", help=f"measured link, one of {DISTANCES_KM}")
        if rounds:
            sp.add_argument("--rounds", type=int, help="override rounds per block")

    sp = sub.add_parser("simulate", help="simulate blocks and write report and tallies")
    add_cfg(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--blocks", type=int, default=1)
    sp.add_argument("--out", default="out")
    sp.add_argument("--freq-source", choices=("fft", "truth", "fixed"), default="fft")
    sp.add_argument("--workers", type=int, help="worker processes (default MPQKD_THREADS or 1)")
    sp.add_argument("--records", action="store_true", help="also write the dense record file")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replay", help="run the chain on a record file")
    add_cfg(sp, rounds=False)
    sp.add_argument("--records", required=True)
    sp.add_argument("--delta-f", type=float, help="fixed detuning (Hz) when no reference stream is present")
    sp.add_argument("--out", help="report JSON path")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("estimate", help="estimate the key rate from a tally JSON file")
    add_cfg(sp)
    sp.add_argument("--tallies", required=True)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("plob", help="repeaterless bound for a total loss")
    sp.add_argument("--loss-db", type=float, required=True)
    sp.set_defaults(func=cmd_plob)

    sp = sub.add_parser("freqest", help="sliding-window beat estimates from binned counts")
    sp.add_argument("--bins", required=True, help="CSV with one count per line")
    sp.add_argument("--window-us", type=float, default=500.0)
    sp.add_argument("--pad", type=int, default=2)
    sp.add_argument("--bin-ns", type=float, default=1.0)
    sp.add_argument("--out", help="CSV of estimates")
    sp.set_defaults(func=cmd_freqest)

    sp = sub.add_parser("pair", help="pair a whitespace-separated 0/1 mask")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--l-max", type=int, required=True)
    sp.set_defaults(func=cmd_pair)

    sp = sub.add_parser("preset", help="print the configuration of a measured link")
    sp.add_argument("--distance", type=float, required=True)
    sp.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    from .records import RecordError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RecordError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, NoSignalError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
