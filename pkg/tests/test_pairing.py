import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpqkd.model import Detections, RoundTags
from mpqkd.pairing import filter_rounds, gather_pairs, pair_rounds, pair_rounds_sequential

V, D, S = 0, 1, 2


def brute_force(mask, l_max):
    """Restartable search: repeatedly find the next opener and its partner from scratch."""
    eff = [i for i, m in enumerate(mask) if m]
    out, i = [], 0
    while i + 1 < len(eff):
        if eff[i + 1] - eff[i] <= l_max:
            out.append((eff[i], eff[i + 1]))
            i += 2
        else:
            i += 1
    return out


def as_list(j, k):
    return list(zip(j.tolist(), k.tolist()))


def test_filter_examples():
    tags = RoundTags(np.array([S, S, D, V]), np.array([D, S, S, V]), np.zeros(4), np.zeros(4))
    det = Detections(np.array([1, 1, 1, 0], bool), np.array([0, 1, 0, 1], bool))
    assert filter_rounds(tags, det).tolist() == [False, False, False, True]


def test_filter_matches_per_round_oracle():
    rng = np.random.default_rng(1)
    n = 10_000
    tags = RoundTags(rng.integers(0, 3, n), rng.integers(0, 3, n), np.zeros(n), np.zeros(n))
    det = Detections(rng.random(n) < 0.4, rng.random(n) < 0.4)
    expected = [bool(det.click_l[i] != det.click_r[i]
                     and {int(tags.class_a[i]), int(tags.class_b[i])} != {S, D}) for i in range(n)]
    assert filter_rounds(tags, det).tolist() == expected


def test_filter_length_mismatch():
    tags = RoundTags(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError, match="length"):
        filter_rounds(tags, Detections(np.zeros(2, bool), np.zeros(2, bool)))


def test_pairing_examples():
    assert as_list(*pair_rounds(np.zeros(10, bool), 3)) == []
    mask = np.zeros(6, bool)
    mask[[1, 2, 3, 4]] = True
    assert as_list(*pair_rounds(mask, 1)) == [(1, 2), (3, 4)]
    for l_max in (1, 5, 64):
        m = np.zeros(l_max + 3, bool)
        m[[1, 1 + l_max + 1]] = True
        assert as_list(*pair_rounds(m, l_max)) == []


def test_trailing_opener_dropped():
    assert as_list(*pair_rounds(np.array([1, 1, 1], bool), 5)) == [(0, 1)]


def test_invalid_l_max():
    with pytest.raises(ValueError):
        pair_rounds(np.ones(3, bool), 0)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.booleans(), max_size=200), st.integers(1, 64))
def test_matches_brute_force_and_sequential(mask, l_max):
    got = as_list(*pair_rounds(np.array(mask, bool), l_max))
    assert got == brute_force(mask, l_max) == pair_rounds_sequential(mask, l_max)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.booleans(), max_size=150), st.integers(1, 63))
def test_structural_invariants_and_monotonicity(mask, l_max):
    m = np.array(mask, bool)
    j, k = pair_rounds(m, l_max)
    used = np.concatenate([j, k])
    assert len(set(used.tolist())) == len(used)
    assert np.all(k - j <= l_max) and np.all(k > j)
    assert np.all(m[j]) and np.all(m[k])
    assert np.all(np.diff(j) > 0)
    assert len(pair_rounds(m, l_max + 1)[0]) >= len(j)


def test_gather_pairs_uses_round_numbers():
    index = np.array([10, 12, 40, 41])
    tags = RoundTags(np.full(4, D), np.full(4, D), np.arange(4.0), np.zeros(4))
    det = Detections(np.array([1, 0, 1, 1], bool), np.array([0, 1, 0, 0], bool))
    pairs = gather_pairs(index, tags, det, 5)
    assert pairs.j.tolist() == [10, 40] and pairs.k.tolist() == [12, 41]
    assert pairs.tags_k.phase_a.tolist() == [1.0, 3.0]
