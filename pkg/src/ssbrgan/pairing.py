"""Selecting slice pairs across two unpaired domains.

Two strategies are provided: the position-based baseline, which maps slice
``n`` of an ``N``-slice ROI to slice ``round(n * M / N)`` of an ``M``-slice
ROI, and score-based selection, which draws target scores uniformly in
``[-1, 1]`` and takes the closest-scoring slice in each domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ssbr import PreparedVolume, ScoreSeries, SsbrNet, prepare_volume, score_slices
from .volume import Volume


@dataclass
class SlicePair:
    slice_a: np.ndarray
    slice_b: np.ndarray
    idx_a: int
    idx_b: int
    target_score: float
    mask_a: np.ndarray | None = None
    mask_b: np.ndarray | None = None
    score_a: float = math.nan
    score_b: float = math.nan


@dataclass
class PairedBatch:
    pairs: list[SlicePair] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    @property
    def slices_a(self) -> np.ndarray:
        return np.stack([p.slice_a for p in self.pairs])

    @property
    def slices_b(self) -> np.ndarray:
        return np.stack([p.slice_b for p in self.pairs])

    @property
    def indices(self) -> np.ndarray:
        """Absolute (volume) slice indices, shape ``(J, 2)``."""
        return np.array([(p.idx_a, p.idx_b) for p in self.pairs], dtype=int)


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def pbs_pair(n: int, n_total: int, m_total: int) -> int:
    if not 0 <= n < n_total:
        raise ValueError(f"slice {n} outside [0, {n_total})")
    if m_total < 1:
        raise ValueError("target volume must have at least one slice")
    return min(max(_round_half_away(n * m_total / n_total), 0), m_total - 1)


def sample_target_scores(j: int, rng: np.random.Generator) -> np.ndarray:
    if j < 1:
        raise ValueError("J must be at least 1")
    return rng.uniform(-1.0, 1.0, size=j)


def select_by_score(series, target: float) -> int:
    """Index of the closest score; ties go to the lowest index."""
    scores = np.asarray(series.scores if isinstance(series, ScoreSeries) else series, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty score series")
    # np.argmin returns the first minimum, which is the lowest-index tie rule
    return int(np.argmin(np.abs(scores - target)))


def _ensure_prepared(v, size, model: SsbrNet | None, need_scores: bool) -> PreparedVolume:
    if isinstance(v, Volume):
        v = prepare_volume(v, size)
    if need_scores and v.scores is None:
        if model is None:
            raise ValueError("score-based pairing needs an SSBR model or precomputed scores")
        v.scores = score_slices(model, v.slices)
    if len(v) == 0:
        raise ValueError("empty ROI")
    return v


def _pair(va: PreparedVolume, vb: PreparedVolume, ia: int, ib: int, target: float) -> SlicePair:
    return SlicePair(
        va.slices[ia], vb.slices[ib],
        va.roi.top_index + ia, vb.roi.top_index + ib, float(target),
        va.masks[ia], vb.masks[ib],
        float(va.scores[ia]) if va.scores is not None else math.nan,
        float(vb.scores[ib]) if vb.scores is not None else math.nan,
    )


def make_paired_batch(vol_a, vol_b, model: SsbrNet | None, j: int, rng: np.random.Generator,
                      input_size=(64, 64)) -> PairedBatch:
    """Score-based pairing between one volume per domain.

    Volumes may be raw :class:`Volume` objects (ROI, normalization and scoring
    happen here) or :class:`PreparedVolume` objects with cached scores.
    """
    va = _ensure_prepared(vol_a, input_size, model, True)
    vb = _ensure_prepared(vol_b, input_size, model, True)
    batch = PairedBatch()
    for t in sample_target_scores(j, rng):
        batch.pairs.append(_pair(va, vb, select_by_score(va.scores, t), select_by_score(vb.scores, t), t))
    return batch


def make_pbs_batch(vol_a, vol_b, j: int, rng: np.random.Generator, input_size=(64, 64)) -> PairedBatch:
    """Position-based baseline: random ROI slices of A mapped proportionally into B's ROI."""
    va = _ensure_prepared(vol_a, input_size, None, False)
    vb = _ensure_prepared(vol_b, input_size, None, False)
    batch = PairedBatch()
    for n in rng.integers(0, len(va), size=j):
        batch.pairs.append(_pair(va, vb, int(n), pbs_pair(int(n), len(va), len(vb)), math.nan))
    return batch


def format_pair_table(batch: PairedBatch, offsets=None) -> str:
    head = "j target_score idx_A score_A idx_B score_B"
    if offsets is not None:
        head += " offset"
    rows = [head]
    for i, p in enumerate(batch.pairs):
        row = f"{i} {p.target_score:.6f} {p.idx_a} {p.score_a:.6f} {p.idx_b} {p.score_b:.6f}"
        if offsets is not None:
            row += f" {offsets[i]:.6f}"
        rows.append(row)
    return "\n".join(rows) + "\n"
