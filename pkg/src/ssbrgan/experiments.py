"""Phantom experiments shared by the acceptance suite and the demo scripts.

Seed ranges are fixed so every experiment draws disjoint anatomies:
training volumes use seeds from 0, held-out checks from 1000, pairing pairs
from 2000, translator training from 3000 (A) and 4000 (B), and paired test
phantoms from 5000.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import evaluate_paired
from .pairing import make_paired_batch, make_pbs_batch
from .phantom import PhantomSpec, anatomical_offset, generate_phantom_pair
from .ssbr import PreparedVolume, SsbrConfig, SsbrNet, TrainedSsbr, prepare_volume, score_slices, spearman, train_ssbr
from .translate import TranslatorConfig, train_translation, translate_volume
from .volume import Volume, normalize_intensity, select_abdominal_roi

TRAIN_SEED, HELDOUT_SEED, PAIRING_SEED = 0, 1000, 2000
TRANSLATE_A_SEED, TRANSLATE_B_SEED, TEST_SEED = 3000, 4000, 5000


def random_spec(seed: int, size, max_warp: float = 1.0, n_range=(80, 121)) -> PhantomSpec:
    """Phantom with its own anatomy, slice counts and warps, all drawn from ``seed``."""
    rng = np.random.default_rng([seed, 99])
    return PhantomSpec(seed=seed, slice_size=tuple(size),
                       n_slices=int(rng.integers(*n_range)), n_slices_b=int(rng.integers(*n_range)),
                       warp=float(rng.uniform(-max_warp, max_warp)),
                       warp_b=float(rng.uniform(-max_warp, max_warp)))


def phantom_volume(seed: int, size, domain: str) -> Volume:
    pair = generate_phantom_pair(random_spec(seed, size))
    return pair.volume_a if domain == "A" else pair.volume_b


def domain_set(first_seed: int, n: int, size, domain: str | None = None) -> list[PreparedVolume]:
    """``n`` prepared volumes with distinct anatomies; ``domain=None`` alternates A and B."""
    out = []
    for i in range(n):
        dom = domain or "AB"[i % 2]
        out.append(prepare_volume(phantom_volume(first_seed + i, size, dom), size, f"{first_seed + i}{dom}"))
    return out


# SSBR quality ------------------------------------------------------------

@dataclass
class SsbrQuality:
    spearman: list[float]
    first_err: list[float]
    last_err: list[float]

    @property
    def min_spearman(self) -> float:
        return float(min(self.spearman))

    @property
    def mean_first_err(self) -> float:
        return float(np.mean(self.first_err))

    @property
    def mean_last_err(self) -> float:
        return float(np.mean(self.last_err))


def ssbr_quality(model: SsbrNet, volumes: list[PreparedVolume]) -> SsbrQuality:
    q = SsbrQuality([], [], [])
    for v in volumes:
        s = score_slices(model, v.slices)
        q.spearman.append(spearman(s, np.arange(len(s))))
        q.first_err.append(abs(s[0] + 1))
        q.last_err.append(abs(s[-1] - 1))
    return q


def train_phantom_ssbr(size=(64, 64), steps: int = 2000, n_volumes: int = 16, seed: int = 0,
                       augment_shift: int = 4) -> TrainedSsbr:
    config = SsbrConfig(input_size=tuple(size), steps=steps, seed=seed, augment_shift=augment_shift)
    return train_ssbr(config, domain_set(TRAIN_SEED, n_volumes, size))


# pairing offsets ---------------------------------------------------------

def pairing_offsets(model: SsbrNet, spec: PhantomSpec, j: int = 64, seed: int = 0) -> tuple[float, float]:
    """Mean anatomical offset (in B slices) of score-based and position-based pairs."""
    pair = generate_phantom_pair(spec)
    size = spec.slice_size
    va = prepare_volume(pair.volume_a, size)
    vb = prepare_volume(pair.volume_b, size)
    rng = np.random.default_rng(seed)
    by_score = make_paired_batch(va, vb, model, j, rng, size)
    by_position = make_pbs_batch(va, vb, j, rng, size)
    cmap = pair.correspondence
    return (float(np.mean([anatomical_offset(p, cmap) for p in by_score.indices])),
            float(np.mean([anatomical_offset(p, cmap) for p in by_position.indices])))


# translation trend -------------------------------------------------------

VARIANTS = {
    "full": dict(strategy="ssbr", template_mode=True, mask_postprocess=True, loss_weights=(1, 10, 0.5, 1)),
    "ssbr": dict(strategy="ssbr", template_mode=False, mask_postprocess=False, loss_weights=(1, 10, 0.5, 0)),
    "pbs": dict(strategy="pbs", template_mode=False, mask_postprocess=False, loss_weights=(1, 10, 0.5, 0)),
}


@dataclass
class TrendResult:
    mse: dict = field(default_factory=dict)       # (variant, seed) -> mean real-vs-fake MSE
    untranslated: float = float("nan")
    seconds: float = 0.0

    def wins(self, better: str, worse: str) -> int:
        seeds = sorted({s for _, s in self.mse})
        return sum(self.mse[better, s] < self.mse[worse, s] for s in seeds)


def paired_test_set(size, n: int = 4):
    """Slice-aligned phantom pairs (identity warp, equal slice counts) with ground truth in both domains."""
    out = []
    for i in range(n):
        pair = generate_phantom_pair(PhantomSpec(seed=TEST_SEED + i, n_slices=100, slice_size=tuple(size)))
        out.append((pair.volume_a, pair.volume_b))
    return out


def translation_mse(state, pairs) -> float:
    """Mean ROI MSE of fake-vs-real over both directions of every test pair."""
    vals = []
    for va, vb in pairs:
        roi = select_abdominal_roi(vb)
        fake_b = translate_volume(state, va, "AB", roi=roi)
        fake_a = translate_volume(state, vb, "BA", roi=roi)
        vals.append(evaluate_paired(normalize_intensity(vb), fake_b, roi).aggregate()["mse"][0])
        vals.append(evaluate_paired(normalize_intensity(va), fake_a, roi).aggregate()["mse"][0])
    return float(np.mean(vals))


def untranslated_mse(pairs) -> float:
    vals = []
    for va, vb in pairs:
        roi = select_abdominal_roi(vb)
        vals.append(evaluate_paired(normalize_intensity(vb), normalize_intensity(va), roi).aggregate()["mse"][0])
    return float(np.mean(vals))


def trend_experiment(ssbr: TrainedSsbr, size=(32, 32), steps: int = 600, seeds=(0, 1, 2),
                     variants=("full", "ssbr", "pbs"), n_train: int = 8, base: dict | None = None,
                     progress=None) -> TrendResult:
    """Train each variant per seed on the same unpaired volumes and score it on paired test phantoms."""
    t0 = time.time()
    dom_a = domain_set(TRANSLATE_A_SEED, n_train, size, "A")
    dom_b = domain_set(TRANSLATE_B_SEED, n_train, size, "B")
    for v in dom_a + dom_b:
        v.scores = score_slices(ssbr.model, v.slices)
    pairs = paired_test_set(size)
    result = TrendResult(untranslated=untranslated_mse(pairs))
    base = {"gen_channels": 8, "gen_blocks": 3, "image_size": tuple(size), "steps": steps, **(base or {})}
    for seed in seeds:
        for name in variants:
            cfg = TranslatorConfig(seed=seed, **base, **VARIANTS[name])
            run = train_translation(cfg, dom_a, dom_b, ssbr)
            result.mse[name, seed] = translation_mse(run.state, pairs)
            if progress is not None:
                progress(name, seed, result.mse[name, seed])
    result.seconds = time.time() - t0
    return result
