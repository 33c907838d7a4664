import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssbrgan.pairing import (format_pair_table, make_paired_batch, make_pbs_batch, pbs_pair,
                             sample_target_scores, select_by_score)
from ssbrgan.ssbr import ScoreSeries, prepare_volume


def test_pbs_examples():
    assert pbs_pair(50, 100, 60) == 30
    assert pbs_pair(0, 37, 11) == 0
    assert pbs_pair(99, 100, 60) == 59


def test_pbs_half_rounds_away():
    assert pbs_pair(1, 4, 2) == 1  # 0.5 -> 1
    assert pbs_pair(3, 4, 2) == 1  # 1.5 -> 2, clamped to 1


def test_pbs_rejects_out_of_range():
    with pytest.raises(ValueError):
        pbs_pair(10, 10, 5)


@given(st.integers(1, 300), st.integers(1, 300))
def test_pbs_monotone(n_total, m_total):
    ms = [pbs_pair(n, n_total, m_total) for n in range(n_total)]
    assert all(a <= b for a, b in zip(ms, ms[1:]))
    assert 0 <= ms[0] and ms[-1] <= m_total - 1


def test_sample_targets():
    t = sample_target_scores(8, np.random.default_rng(5))
    assert t.shape == (8,) and np.all(np.abs(t) <= 1)
    assert np.array_equal(t, sample_target_scores(8, np.random.default_rng(5)))
    assert sample_target_scores(1, np.random.default_rng(0)).shape == (1,)
    with pytest.raises(ValueError):
        sample_target_scores(0, np.random.default_rng(0))


def test_select_examples():
    assert select_by_score([-1, -0.2, 0.4, 1], 0.3) == 2
    assert select_by_score([0.0, 0.2], 0.1) == 0
    assert select_by_score(ScoreSeries("v", np.array([0.5, -0.25, 0.75])), -0.25) == 1
    with pytest.raises(ValueError):
        select_by_score([], 0.0)


@settings(max_examples=60)
@given(st.lists(st.sampled_from([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=6),
       st.sampled_from([-0.75, -0.25, 0.0, 0.125, 0.5, 0.9]))
def test_select_minimal_and_lowest(scores, target):
    i = select_by_score(scores, target)
    d = [abs(s - target) for s in scores]
    assert all(d[i] <= x for x in d)
    assert all(d[k] > d[i] for k in range(i))
    # idempotent: selecting with the chosen score as target returns the first copy of it
    assert select_by_score(scores, scores[i]) == scores.index(scores[i])


def test_select_exhaustive_small():
    vals = [-1.0, -0.5, 0.0, 0.5, 1.0]
    for n in range(1, 4):
        for scores in itertools.product(vals, repeat=n):
            for t in np.linspace(-1, 1, 9):
                i = select_by_score(scores, t)
                d = np.abs(np.array(scores) - t)
                assert d[i] == d.min() and i == int(np.flatnonzero(d == d.min())[0])


@settings(max_examples=40)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 10 ** 6))
def test_gap_bound(n_a, n_b, seed):
    rng = np.random.default_rng(seed)
    a = np.sort(rng.uniform(-1, 1, n_a))
    b = np.sort(rng.uniform(-1, 1, n_b))
    a[0], a[-1], b[0], b[-1] = -1, 1, -1, 1
    gap = np.diff(a).max() + np.diff(b).max()
    for t in rng.uniform(-1, 1, 10):
        assert abs(a[select_by_score(a, t)] - b[select_by_score(b, t)]) <= gap + 1e-12


def _prepared(small_pair, which):
    _, pair = small_pair
    v = pair.volume_a if which == "A" else pair.volume_b
    return prepare_volume(v, (32, 32), which)


def test_identity_scoring_same_volume(small_pair):
    va = _prepared(small_pair, "A")
    va.scores = np.linspace(-1, 1, len(va))
    batch = make_paired_batch(va, va, None, 8, np.random.default_rng(0), (32, 32))
    assert len(batch) == 8
    assert np.array_equal(batch.indices[:, 0], batch.indices[:, 1])
    for p in batch.pairs:
        assert np.array_equal(p.slice_a, p.slice_b)


def test_paired_batch_fields(small_pair):
    va = _prepared(small_pair, "A")
    vb = _prepared(small_pair, "B")
    va.scores = np.linspace(-1, 1, len(va))
    vb.scores = np.linspace(-1, 1, len(vb)) ** 3
    batch = make_paired_batch(va, vb, None, 5, np.random.default_rng(1), (32, 32))
    for p in batch.pairs:
        ia, ib = p.idx_a - va.roi.top_index, p.idx_b - vb.roi.top_index
        assert ia == select_by_score(va.scores, p.target_score)
        assert ib == select_by_score(vb.scores, p.target_score)
        assert va.roi.top_index <= p.idx_a <= va.roi.bottom_index
        assert p.slice_a.shape == (32, 32) and p.mask_a is not None
    table = format_pair_table(batch)
    assert table.splitlines()[0] == "j target_score idx_A score_A idx_B score_B"
    assert len(table.splitlines()) == 6


def test_pbs_batch_proportional(small_pair):
    va = _prepared(small_pair, "A")
    vb = _prepared(small_pair, "B")
    batch = make_pbs_batch(va, vb, 6, np.random.default_rng(2), (32, 32))
    for ia, ib in batch.indices:
        assert ib - vb.roi.top_index == pbs_pair(ia - va.roi.top_index, len(va), len(vb))


def test_score_pairing_needs_model(small_pair):
    _, pair = small_pair
    with pytest.raises(ValueError):
        make_paired_batch(pair.volume_a, pair.volume_b, None, 2, np.random.default_rng(0), (32, 32))
