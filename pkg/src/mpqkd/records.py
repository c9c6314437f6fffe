"""Binary detection-record files.

Layout (little-endian): magic b"MPQK", version u16, round count u64, clock
rate u64, then one byte per round: bits 0-1 Alice's class, bits 2-3 Bob's
class, bit 4 L click, bit 5 R click. Optional sidecars next to the record
file: ``<name>.phases.npy`` (float64, shape (N, 2)), ``<name>.truth.npy``
(uint16, shape (N, 2)) and ``<name>.ref.npz`` (reference counts).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Detections, RoundTags

MAGIC = b"MPQK"
VERSION = 1
_HEADER = struct.Struct("<4sHQQ")


class RecordError(ValueError):
    """Malformed record file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ReferenceStream:
    counts: np.ndarray
    bin_ns: float
    window_us: float
    t0: float = 0.0


@dataclass(frozen=True)
class Records:
    clock_hz: float
    tags: RoundTags
    detections: Detections
    photons: np.ndarray | None = None
    reference: ReferenceStream | None = None

    def __len__(self) -> int:
        return len(self.tags)


def encode(tags: RoundTags, detections: Detections) -> np.ndarray:
    return (np.asarray(tags.class_a, np.uint8) | (np.asarray(tags.class_b, np.uint8) << 2)
            | (np.asarray(detections.click_l, np.uint8) << 4)
            | (np.asarray(detections.click_r, np.uint8) << 5)).astype(np.uint8)


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def write_records(path: str | Path, tags: RoundTags, detections: Detections, clock_hz: float, *,
                  photons: np.ndarray | None = None, reference: ReferenceStream | None = None) -> None:
    """Write a record file and its sidecars. Phases are always written."""
    path = Path(path)
    if clock_hz != int(clock_hz):
        raise ValueError("clock rate must be an integer number of Hz")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(tags), int(clock_hz)))
        fh.write(encode(tags, detections).tobytes())
    np.save(_sidecar(path, ".phases.npy"), np.column_stack([tags.phase_a, tags.phase_b]).astype(np.float64))
    if photons is not None:
        np.save(_sidecar(path, ".truth.npy"), np.asarray(photons, np.uint16))
    if reference is not None:
        np.savez(_sidecar(path, ".ref.npz"), counts=reference.counts, bin_ns=reference.bin_ns,
                 window_us=reference.window_us, t0=reference.t0)


def read_records(path: str | Path) -> Records:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise RecordError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, n, clock = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RecordError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise RecordError(f"unsupported version {version}", 4)
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if len(body) != n:
        raise RecordError(f"expected {n} round bytes, found {len(body)}", _HEADER.size + min(len(body), n))
    bad = np.flatnonzero((body & 0xC0) | ((body & 3) == 3) | (((body >> 2) & 3) == 3))
    if len(bad):
        raise RecordError(f"invalid round byte 0x{body[bad[0]]:02x}", _HEADER.size + int(bad[0]))
    phases_path = _sidecar(path, ".phases.npy")
    if phases_path.exists():
        phases = np.load(phases_path)
        if phases.shape != (n, 2):
            raise RecordError(f"phase sidecar has shape {phases.shape}, expected ({n}, 2)", 0)
    else:
        phases = np.zeros((n, 2))
    tags = RoundTags(body & 3, (body >> 2) & 3, phases[:, 0].copy(), phases[:, 1].copy())
    det = Detections((body & 16) != 0, (body & 32) != 0)
    truth_path = _sidecar(path, ".truth.npy")
    photons = np.load(truth_path) if truth_path.exists() else None
    ref_path = _sidecar(path, ".ref.npz")
    reference = None
    if ref_path.exists():
        with np.load(ref_path) as z:
            reference = ReferenceStream(z["counts"], float(z["bin_ns"]), float(z["window_us"]), float(z["t0"]))
    return Records(float(clock), tags, det, photons, reference)


def export_csv(records: Records, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "class_a", "class_b", "phase_a", "phase_b", "click_l", "click_r"])
        t, d = records.tags, records.detections
        for i in range(len(records)):
            w.writerow([i, int(t.class_a[i]), int(t.class_b[i]), repr(float(t.phase_a[i])),
                        repr(float(t.phase_b[i])), int(d.click_l[i]), int(d.click_r[i])])
