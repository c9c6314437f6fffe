"""Basis assignment, key mapping, phase sifting and tally accumulation.

Each party's pair label is the sum of its two round intensities: "mu" for
{signal, vacuum}, "nu" for {decoy, vacuum}, "2nu" for {decoy, decoy}, "o"
for {vacuum, vacuum}. Other multisets (e.g. {signal, signal}) are never
tallied.

X pairs are kept when the frequency-corrected phase difference lies within
pi/M of 0 or pi. With that half-width the kept fraction is 2/M, which is
the factor the decoy analysis assigns to the [2nu, 2nu] class.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import IntensityClass, PairArrays, PairRecord, TALLY_KEYS, TallyTable

TWO_PI = 2.0 * math.pi

# pair label by (class_j, class_k) code: V=0, D=1, S=2
_LABELS = ("o", "nu", "2nu", "mu", "invalid")
_O, _NU, _2NU, _MU, _INVALID = range(5)
_LABEL_TABLE = np.array([
    [_O, _NU, _MU],
    [_NU, _2NU, _INVALID],
    [_MU, _INVALID, _INVALID],
], dtype=np.int8)


class Basis(enum.Enum):
    Z = "Z"
    X = "X"
    NONE = "none"


@dataclass(frozen=True)
class BasisClass:
    label_a: str
    label_b: str

    @property
    def basis(self) -> Basis:
        if self.label_a == "mu" and self.label_b == "mu":
            return Basis.Z
        if self.label_a == "2nu" and self.label_b == "2nu":
            return Basis.X
        return Basis.NONE

    @property
    def tally_key(self) -> tuple[str, str] | None:
        key = (self.label_a, self.label_b)
        return key if key in TALLY_KEYS else None


def _label(cj, ck) -> str:
    return _LABELS[_LABEL_TABLE[int(cj), int(ck)]]


def assign_basis(pair: PairRecord) -> BasisClass:
    return BasisClass(_label(pair.tag_j.intensity_a, pair.tag_k.intensity_a),
                      _label(pair.tag_j.intensity_b, pair.tag_k.intensity_b))


def map_z_bits(pair: PairRecord) -> tuple[int, int, bool]:
    """Raw key bits of a Z pair.

    Alice's bit is 0 when her signal pulse is in round j; Bob uses the
    converse convention, so an error means both put the signal in the same round.
    """
    if assign_basis(pair).basis is not Basis.Z:
        raise ValueError("map_z_bits requires a Z-basis pair")
    bit_a = 0 if pair.tag_j.intensity_a == IntensityClass.SIGNAL else 1
    bit_b = 1 if pair.tag_j.intensity_b == IntensityClass.SIGNAL else 0
    return bit_a, bit_b, bit_a != bit_b


def circular_distance(x, y):
    """Distance between angles on the circle, in [0, pi]."""
    d = np.mod(np.asarray(x) - np.asarray(y), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def corrected_phase_difference(phase_a_j, phase_a_k, phase_b_j, phase_b_k,
                               gap, delta_f_hz, clock_hz):
    """(d_a - d_b + 2 pi df (k-j) / F) mod 2 pi, with d = theta_k - theta_j."""
    delta = ((np.asarray(phase_a_k) - phase_a_j) - (np.asarray(phase_b_k) - phase_b_j)
             + TWO_PI * np.asarray(delta_f_hz) * np.asarray(gap) / clock_hz)
    return np.mod(delta, TWO_PI)


def sift_x_decision(delta, left_j, left_k, m_slices: int):
    """Vectorized X sifting on corrected phase differences.

    Near 0 the pair errs when the two clicks hit different detectors, near
    pi when they hit the same detector.
    """
    half = math.pi / m_slices
    near0 = circular_distance(delta, 0.0) <= half
    nearpi = circular_distance(delta, math.pi) <= half
    same = np.asarray(left_j) == np.asarray(left_k)
    kept = near0 | nearpi
    error = (near0 & ~same) | (nearpi & same)
    return kept, error


def sift_x_pair(pair: PairRecord, delta_f_hz: float, clock_hz: float, m_slices: int) -> tuple[bool, bool]:
    if assign_basis(pair).basis is not Basis.X:
        raise ValueError("sift_x_pair requires an X-basis pair")
    delta = corrected_phase_difference(pair.tag_j.phase_a, pair.tag_k.phase_a,
                                       pair.tag_j.phase_b, pair.tag_k.phase_b,
                                       pair.k - pair.j, delta_f_hz, clock_hz)
    kept, error = sift_x_decision(delta, pair.click_j.clicked_l, pair.click_k.clicked_l, m_slices)
    return bool(kept), bool(error)


@dataclass(frozen=True)
class SiftResult:
    """Per-pair sifting columns."""

    label_a: np.ndarray
    label_b: np.ndarray
    z: np.ndarray
    z_error: np.ndarray
    x: np.ndarray
    x_kept: np.ndarray
    x_error: np.ndarray


def sift_pairs(pairs: PairArrays, delta_f_hz, clock_hz: float, m_slices: int) -> SiftResult:
    """Label, key-map and phase-sift a batch of pairs.

    ``delta_f_hz`` is a scalar or one value per pair (only X pairs use it).
    """
    la = _LABEL_TABLE[pairs.tags_j.class_a.astype(np.intp), pairs.tags_k.class_a.astype(np.intp)]
    lb = _LABEL_TABLE[pairs.tags_j.class_b.astype(np.intp), pairs.tags_k.class_b.astype(np.intp)]
    z = (la == _MU) & (lb == _MU)
    x = (la == _2NU) & (lb == _2NU)
    sig = int(IntensityClass.SIGNAL)
    z_error = z & ((pairs.tags_j.class_a == sig) == (pairs.tags_j.class_b == sig))
    delta = corrected_phase_difference(pairs.tags_j.phase_a, pairs.tags_k.phase_a,
                                       pairs.tags_j.phase_b, pairs.tags_k.phase_b,
                                       pairs.k - pairs.j, delta_f_hz, clock_hz)
    kept, error = sift_x_decision(delta, pairs.det_j.click_l, pairs.det_k.click_l, m_slices)
    return SiftResult(la, lb, z, z_error, x, x & kept, x & kept & error)


def accumulate_tallies(sifted: SiftResult) -> TallyTable:
    counts = {}
    label_index = {name: i for i, name in enumerate(_LABELS)}
    for key in TALLY_KEYS:
        sel = (sifted.label_a == label_index[key[0]]) & (sifted.label_b == label_index[key[1]])
        if key == ("2nu", "2nu"):
            sel = sifted.x_kept
        counts[key] = int(np.count_nonzero(sel))
    return TallyTable(counts, int(np.count_nonzero(sifted.z_error)), int(np.count_nonzero(sifted.x_error)))


def tally_pairs(pairs: PairArrays, delta_f_hz, clock_hz: float, m_slices: int) -> TallyTable:
    return accumulate_tallies(sift_pairs(pairs, delta_f_hz, clock_hz, m_slices))


def write_tallies(tallies: TallyTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tallies.to_dict(), indent=2, sort_keys=True) + "\n")


def read_tallies(path: str | Path) -> TallyTable:
    return TallyTable.from_dict(json.loads(Path(path).read_text()))
