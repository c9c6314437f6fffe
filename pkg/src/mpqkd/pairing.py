"""Greedy pairing of effective detection rounds.

A round is effective when exactly one detector clicked and the two parties
did not use a mixed signal/decoy combination. Scanning left to right, the
first unpaired effective round opens a pair and the next effective round
closes it if it lies within ``l_max`` rounds, otherwise it replaces the
opener. A trailing opener is dropped.

The filter needs both parties' intensity classes, i.e. the global view the
algorithm assumes; a deployment announces the mixed rounds instead.
"""
from __future__ import annotations

import numpy as np

from .model import Detections, IntensityClass, PairArrays, RoundTags

_S, _D = int(IntensityClass.SIGNAL), int(IntensityClass.DECOY)


def filter_rounds(tags: RoundTags, detections: Detections) -> np.ndarray:
    """C'_j: single click and not a (signal, decoy) or (decoy, signal) round."""
    if len(tags) != len(detections):
        raise ValueError(f"length mismatch: {len(tags)} tags vs {len(detections)} detections")
    ca = np.asarray(tags.class_a)
    cb = np.asarray(tags.class_b)
    mixed = ((ca == _S) & (cb == _D)) | ((ca == _D) & (cb == _S))
    return detections.valid & ~mixed


def pair_indices(positions, l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair sorted effective round indices; returns (j, k) arrays."""
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    pos = np.asarray(positions, dtype=np.int64)
    gaps = np.diff(pos)
    # Only consecutive effective rounds can pair. Runs of pairable gaps are
    # independent: within a run of r consecutive short gaps, the greedy scan
    # pairs elements 0-1, 2-3, ... of the run.
    ok = gaps <= l_max
    # position of each gap inside its run of consecutive ok gaps
    idx = np.arange(len(ok))
    run_start = np.where(ok, 0, idx + 1)
    np.maximum.accumulate(run_start, out=run_start)
    take = ok & ((idx - run_start) % 2 == 0)
    first = np.flatnonzero(take)
    return pos[first], pos[first + 1]


def pair_rounds(mask, l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair rounds of a boolean effectiveness mask; returns (j, k) index arrays."""
    return pair_indices(np.flatnonzero(np.asarray(mask, dtype=bool)), l_max)


def pair_rounds_sequential(mask, l_max: int) -> list[tuple[int, int]]:
    """Literal one-pass transcription of the greedy loop (reference version)."""
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    pairs, opener = [], None
    for j, effective in enumerate(mask):
        if not effective:
            continue
        if opener is None:
            opener = j
        elif j - opener <= l_max:
            pairs.append((opener, j))
            opener = None
        else:
            opener = j
    return pairs


def pair_positions(index: np.ndarray, tags: RoundTags, detections: Detections,
                   l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Filter and pair; returns array positions (not round numbers) of j and k.

    ``index`` holds the round number of each entry (all rounds for dense
    data, or only the clicked ones for event data).
    """
    keep = np.flatnonzero(filter_rounds(tags, detections))
    rounds = np.asarray(index)[keep]
    j, k = pair_indices(rounds, l_max)
    return keep[np.searchsorted(rounds, j)], keep[np.searchsorted(rounds, k)]


def gather_pairs(index: np.ndarray, tags: RoundTags, detections: Detections,
                 l_max: int) -> PairArrays:
    """Filter and pair rounds, gathering the pair columns."""
    pos_j, pos_k = pair_positions(index, tags, detections, l_max)
    index = np.asarray(index, dtype=np.int64)
    return PairArrays(index[pos_j], index[pos_k], tags.take(pos_j), tags.take(pos_k),
                      detections.take(pos_j), detections.take(pos_k))
