"""Self-supervised body regressor: one score in (-1, 1) per axial slice.

Training needs no labels.  Slices sampled in cranio-caudal order from each
volume's abdominal ROI are pushed to have increasing scores (order loss),
ROI endpoints are pulled to -1 and +1 (norm loss), and successive score
increments track the change of the body outline (anatomy loss).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .volume import (
    DEFAULT_WINDOW,
    RoiBounds,
    Volume,
    VolumeStateError,
    bm_delta,
    body_masks,
    load_volume,
    normalize_intensity,
    resize_slice,
    select_abdominal_roi,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (5e-3, 1.0, 10.0)


@dataclass
class SsbrConfig:
    backbone_depth: int = 4
    base_channels: int = 16
    input_size: tuple[int, int] = (64, 64)
    loss_weights: tuple[float, float, float] = DEFAULT_WEIGHTS
    batch_volumes: int = 4
    slices_per_volume: int = 8
    learning_rate: float = 1e-3
    steps: int = 2000
    seed: int = 0
    renormalize_bm: bool = False
    augment_shift: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        if self.batch_volumes < 1 or self.slices_per_volume < 2:
            raise ValueError("need batch_volumes >= 1 and slices_per_volume >= 2")
        if min(self.loss_weights) < 0:
            raise ValueError("loss weights must be non-negative")


class SsbrNet(nn.Module):
    """Strided conv blocks, global average pooling and a tanh-squashed scalar head."""

    def __init__(self, depth: int = 4, base_channels: int = 16, zero_head: bool = False,
                 norm: str = "batch"):
        super().__init__()
        def norm_layer(c):
            if norm == "batch":
                return nn.BatchNorm2d(c)
            if norm == "group":
                return nn.GroupNorm(min(8, c), c)
            return nn.Identity()

        layers = []
        c_in = 1
        for i in range(depth):
            c_out = base_channels * 2 ** min(i, 3)
            layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), norm_layer(c_out), nn.LeakyReLU(0.2),
                       nn.Conv2d(c_out, c_out, 3, padding=1), norm_layer(c_out), nn.LeakyReLU(0.2)]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, 1)
        if zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        h = self.features(x).mean(dim=(2, 3))
        return torch.tanh(self.head(h)).squeeze(1)


def build_model(config: SsbrConfig, zero_head: bool = False) -> SsbrNet:
    torch.manual_seed(config.seed)
    return SsbrNet(config.backbone_depth, config.base_channels, zero_head=zero_head)


def ssbr_forward(model: SsbrNet, slices, input_size=None) -> torch.Tensor:
    x = torch.as_tensor(slices, dtype=next(model.parameters()).dtype)
    if x.dim() == 4 and x.shape[1] == 1:
        x = x[:, 0]
    if x.dim() != 3:
        raise ValueError(f"expected a batch of 2D slices, got shape {tuple(x.shape)}")
    if input_size is not None and tuple(x.shape[1:]) != tuple(input_size):
        raise ValueError(f"slices are {tuple(x.shape[1:])}, model expects {tuple(input_size)}")
    return model(x)


def huber(x):
    """Smoothed L1 with unit transition: x**2/2 inside [-1, 1], |x| - 1/2 outside."""
    ax = x.abs()
    return torch.where(ax <= 1.0, 0.5 * x * x, ax - 0.5)


def _scores2d(scores):
    s = scores if isinstance(scores, torch.Tensor) else torch.from_numpy(np.asarray(scores, dtype=np.float64))
    if not s.is_floating_point():
        s = s.double()
    if s.dim() == 1:
        s = s.unsqueeze(0)
    if s.shape[-1] < 2:
        raise ValueError("need at least two slices per volume")
    return s


def loss_order(scores) -> torch.Tensor:
    s = _scores2d(scores)
    # -log(sigmoid(d)) == softplus(-d), stable for large |d|
    return F.softplus(-(s[:, 1:] - s[:, :-1])).sum()


def loss_norm(scores) -> torch.Tensor:
    s = _scores2d(scores)
    return (huber(s[:, 0] + 1.0) + huber(s[:, -1] - 1.0)).sum()


def loss_anat(scores, bm_deltas) -> torch.Tensor:
    s = _scores2d(scores)
    d_bm = torch.as_tensor(bm_deltas, dtype=s.dtype)
    if d_bm.dim() == 1:
        d_bm = d_bm.unsqueeze(0)
    if d_bm.shape != (s.shape[0], s.shape[1] - 1):
        raise ValueError(f"bm_deltas shape {tuple(d_bm.shape)} does not match scores {tuple(s.shape)}")
    return huber(d_bm - (s[:, 1:] - s[:, :-1])).sum()


def combine_losses(l_order, l_anat, l_norm, weights=DEFAULT_WEIGHTS):
    alpha, beta, gamma = weights
    return alpha * l_order + beta * l_anat + gamma * l_norm


def loss_ssbr(scores, bm_deltas, weights=DEFAULT_WEIGHTS):
    """Weighted SSBR objective; returns ``(total, (order, anat, norm))``."""
    parts = (loss_order(scores), loss_anat(scores, bm_deltas), loss_norm(scores))
    return combine_losses(*parts, weights=weights), parts


@dataclass
class ScoreSeries:
    volume_id: str
    scores: np.ndarray
    roi: RoiBounds | None = None

    def __len__(self):
        return len(self.scores)


@dataclass
class PreparedVolume:
    """A volume reduced to its ROI: model-ready slices plus full-resolution body masks."""

    volume_id: str
    slices: np.ndarray
    masks: np.ndarray
    roi: RoiBounds
    hu_slices: np.ndarray | None = None
    scores: np.ndarray | None = None

    def __len__(self):
        return len(self.slices)


def prepare_volume(v: Volume, input_size, volume_id: str = "", roi: RoiBounds | None = None,
                   window=DEFAULT_WINDOW, keep_hu: bool = False) -> PreparedVolume:
    masks = body_masks(v, window)
    if roi is None:
        roi = select_abdominal_roi(v, masks=masks, window=window)
    norm = v if v.normalized else normalize_intensity(v, window)
    idx = roi.indices
    slices = np.stack([resize_slice(norm.intensities[i], input_size) for i in idx]).astype(np.float32)
    bits = np.stack([masks[i].bits for i in idx])
    hu = v.intensities[idx].copy() if keep_hu and not v.normalized else None
    return PreparedVolume(volume_id, slices, bits, roi, hu)


@dataclass
class SsbrBatch:
    slices: np.ndarray        # (K, P, h, w)
    bm_deltas: np.ndarray     # (K, P - 1)
    indices: np.ndarray       # (K, P) ROI-relative slice indices
    volume_ids: list = field(default_factory=list)


def sample_slice_indices(length: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """ROI-relative indices: both ROI ends, plus ``p - 2`` jittered interior slices.

    Interior slices are equally spaced with uniform jitter of up to half a
    stride, drawn as one index per equal stratum of ``range(1, length - 1)``
    so the result is strictly increasing.  ``p == length`` gives ``0..p-1``.
    """
    if p < 2:
        raise ValueError("need at least two slices per volume")
    if length < p:
        raise ValueError(f"cannot draw {p} slices from {length}")
    inner, n_in = length - 2, p - 2
    mid = np.empty(0, dtype=int)
    if n_in:
        edges = np.arange(n_in + 1) * (inner / n_in)
        lo = np.ceil(edges[:-1] - 1e-9).astype(int)
        hi = np.ceil(edges[1:] - 1e-9).astype(int)
        mid = 1 + lo + (rng.random(n_in) * (hi - lo)).astype(int)
    return np.concatenate([[0], mid, [length - 1]]).astype(int)


def _mask_deltas(masks: np.ndarray, idx: np.ndarray, renormalize: bool) -> np.ndarray:
    from .volume import BodyMask
    d = np.array([bm_delta(BodyMask(masks[a]), BodyMask(masks[b])) for a, b in zip(idx[:-1], idx[1:])])
    if renormalize and d.sum() > 0:
        d = d * (2.0 / d.sum())
    return d


def make_ssbr_batch(volumes: list[PreparedVolume], config: SsbrConfig,
                    rng: np.random.Generator) -> SsbrBatch:
    p = config.slices_per_volume
    eligible = [v for v in volumes if len(v) >= p]
    if not eligible:
        raise ValueError(f"no volume has at least {p} ROI slices")
    k = config.batch_volumes
    chosen = rng.choice(len(eligible), size=k, replace=len(eligible) < k)
    slices, deltas, indices, ids = [], [], [], []
    for c in chosen:
        v = eligible[int(c)]
        idx = sample_slice_indices(len(v), p, rng)
        slices.append(v.slices[idx])
        deltas.append(_mask_deltas(v.masks, idx, config.renormalize_bm))
        indices.append(idx)
        ids.append(v.volume_id)
    return SsbrBatch(np.stack(slices), np.stack(deltas), np.stack(indices), ids)


def augment(slices: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Random in-plane translation by up to ``max_shift`` pixels, padding with air."""
    if max_shift <= 0:
        return slices
    out = np.full_like(slices, -1.0)
    h, w = slices.shape[1:]
    for i, (dy, dx) in enumerate(rng.integers(-max_shift, max_shift + 1, size=(len(slices), 2))):
        out[i, max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
            slices[i, max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]
    return out


@dataclass
class TrainedSsbr:
    model: SsbrNet
    config: SsbrConfig
    step: int = 0
    history: list = field(default_factory=list)

    def manifest(self) -> dict:
        cfg = asdict(self.config)
        return {"kind": "ssbr", "config": cfg, "step": self.step, "seed": self.config.seed,
                "loss_weights": list(self.config.loss_weights)}

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.manifest(), checkpoint.module_tensors(self.model))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def log_lines(self) -> list[str]:
        return [f"{s} {l:.8g} {o:.8g} {a:.8g} {n:.8g}" for s, l, o, a, n in self.history]


def load_ssbr(path) -> TrainedSsbr:
    manifest, tensors = checkpoint.load(path)
    if manifest.get("kind") != "ssbr":
        raise checkpoint.CheckpointError(f"{path} is not an SSBR checkpoint")
    cfg = SsbrConfig(**manifest["config"])
    model = SsbrNet(cfg.backbone_depth, cfg.base_channels)
    checkpoint.load_into(model, tensors)
    model.eval()
    return TrainedSsbr(model, cfg, manifest["step"])


def _as_prepared(volumes, input_size) -> list[PreparedVolume]:
    out = []
    for i, v in enumerate(volumes):
        if isinstance(v, PreparedVolume):
            out.append(v)
            continue
        vid = str(v) if isinstance(v, (str, Path)) else f"vol{i}"
        if isinstance(v, (str, Path)):
            v = load_volume(v)
        out.append(prepare_volume(v, input_size, vid))
    return out


def train_ssbr(config: SsbrConfig, volumes, log_path=None) -> TrainedSsbr:
    """Train an SSBR on volumes from both domains (paths, Volumes or PreparedVolumes)."""
    data = _as_prepared(volumes, config.input_size)
    if len(data) < 2:
        raise ValueError("SSBR training needs at least two volumes")
    model = build_model(config)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    result = TrainedSsbr(model, config)
    model.train()
    for step in range(config.steps):
        batch = make_ssbr_batch(data, config, rng)
        k, p = batch.slices.shape[:2]
        x = torch.from_numpy(augment(batch.slices.reshape(k * p, *batch.slices.shape[2:]),
                                     config.augment_shift, rng))
        scores = model(x).view(k, p)
        total, (lo, la, ln) = loss_ssbr(scores, torch.from_numpy(batch.bm_deltas).float(),
                                        config.loss_weights)
        if not torch.isfinite(total):
            raise FloatingPointError(
                f"non-finite SSBR loss at step {step}: order={lo.item()} anat={la.item()} "
                f"norm={ln.item()} volumes={batch.volume_ids}")
        opt.zero_grad()
        total.backward()
        opt.step()
        result.history.append((step, total.item(), lo.item(), la.item(), ln.item()))
        if step % 200 == 0:
            log.debug("ssbr step %d loss %.4f", step, total.item())
    result.step = config.steps
    model.eval()
    if log_path is not None:
        Path(log_path).write_text("".join(line + "\n" for line in result.log_lines()))
    return result


@torch.no_grad()
def score_slices(model: SsbrNet, slices: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = [model(torch.from_numpy(np.ascontiguousarray(slices[i:i + batch_size], dtype=np.float32)))
           for i in range(0, len(slices), batch_size)]
    return torch.cat(out).double().numpy()


def score_volume(model: SsbrNet, v: Volume, roi: RoiBounds, input_size=None,
                 volume_id: str = "") -> ScoreSeries:
    if not v.normalized:
        raise VolumeStateError("score_volume expects a normalized volume")
    if not 0 <= roi.top_index <= roi.bottom_index < v.n_slices:
        raise ValueError(f"ROI {roi} outside volume with {v.n_slices} slices")
    size = tuple(input_size) if input_size is not None else v.shape[1:]
    slices = np.stack([resize_slice(v.intensities[i], size) for i in roi.indices]).astype(np.float32)
    return ScoreSeries(volume_id, score_slices(model, slices), roi)


def spearman(a, b) -> float:
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)
