"""Cycle-consistent translation between contrast (A) and non-contrast (B) slices.

On top of the usual adversarial, cycle and identity terms the generators are
trained with an anatomical constraint: a frozen SSBR must give a generated
slice the same score as the slice it came from.  Generators can work in
template mode, predicting a residual added to their input, and generated
slices can be cleaned with the source body mask at inference.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint
from .pairing import PairedBatch, make_paired_batch, make_pbs_batch
from .ssbr import PreparedVolume, SsbrNet, TrainedSsbr, load_ssbr, prepare_volume, score_slices
from .volume import (
    DEFAULT_WINDOW,
    BodyMask,
    Modality,
    RoiBounds,
    Volume,
    body_masks,
    load_volume,
    normalize_intensity,
    resize_mask,
    resize_slice,
    select_abdominal_roi,
)

log = logging.getLogger(__name__)

DEFAULT_LOSS_WEIGHTS = (1.0, 10.0, 0.5, 1.0)  # adversarial, cycle, identity, anatomical


@dataclass
class TranslatorConfig:
    gen_blocks: int = 4
    gen_channels: int = 16
    disc_layers: int = 3
    disc_channels: int = 16
    loss_weights: tuple[float, float, float, float] = DEFAULT_LOSS_WEIGHTS
    template_mode: bool = True
    mask_postprocess: bool = True
    image_size: tuple[int, int] = (32, 32)
    learning_rate: float = 2e-4
    steps: int = 1000
    batch_size: int = 8
    fake_pool_size: int = 50
    strategy: str = "ssbr"
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        if min(self.loss_weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.strategy not in ("ssbr", "pbs"):
            raise ValueError(f"unknown pairing strategy {self.strategy!r}")

    @property
    def needs_ssbr(self) -> bool:
        return self.strategy == "ssbr" or self.loss_weights[3] > 0


class ResidualBlock(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(c, c, 3), nn.InstanceNorm2d(c), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(c, c, 3), nn.InstanceNorm2d(c),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """ResNet generator: two stride-2 downsamplings, residual blocks, two upsamplings.

    With ``template=True`` the output is ``clamp(x + r(x), -1, 1)``; otherwise
    ``tanh(r(x))``.  The output head starts at zero so a template generator is
    an exact identity before training.
    """

    def __init__(self, channels: int = 16, n_blocks: int = 4, template: bool = True):
        super().__init__()
        c = channels
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(1, c, 7), nn.InstanceNorm2d(c), nn.ReLU(inplace=True)]
        for _ in range(2):
            layers += [nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.InstanceNorm2d(2 * c), nn.ReLU(inplace=True)]
            c *= 2
        layers += [ResidualBlock(c) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [nn.ConvTranspose2d(c, c // 2, 3, stride=2, padding=1, output_padding=1),
                       nn.InstanceNorm2d(c // 2), nn.ReLU(inplace=True)]
            c //= 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(c, 1, 7))
        nn.init.zeros_(self.head[1].weight)
        nn.init.zeros_(self.head[1].bias)
        self.template = template

    def forward(self, x):
        r = self.head(self.body(x))
        if self.template:
            return torch.clamp(x + r, -1.0, 1.0)
        return torch.tanh(r)


class PatchDiscriminator(nn.Module):
    """Stack of stride-2 4x4 convolutions ending in a one-channel score map."""

    def __init__(self, channels: int = 16, n_layers: int = 3):
        super().__init__()
        layers = []
        c_in, c = 1, channels
        for i in range(n_layers):
            layers.append(nn.Conv2d(c_in, c, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(c))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            c_in, c = c, min(c * 2, channels * 8)
        layers.append(nn.Conv2d(c_in, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def _as_batch(x, like: nn.Module | None = None) -> torch.Tensor:
    t = torch.as_tensor(x)
    param = next(like.parameters(), None) if like is not None else None
    if param is not None:
        t = t.to(param.dtype)
    elif not t.is_floating_point():
        t = t.float()
    if t.dim() == 2:
        t = t[None, None]
    elif t.dim() == 3:
        t = t[:, None]
    if t.dim() != 4 or t.shape[1] != 1:
        raise ValueError(f"expected single-channel slices, got shape {tuple(t.shape)}")
    return t


def generator_forward(gen: Generator, x) -> torch.Tensor:
    t = _as_batch(x, gen)
    if t.shape[-1] % 4 or t.shape[-2] % 4:
        raise ValueError(f"slice size {tuple(t.shape[-2:])} must be divisible by 4")
    return gen(t)


def discriminator_forward(disc: PatchDiscriminator, x) -> torch.Tensor:
    return disc(_as_batch(x, disc))


def loss_acl(ssbr: SsbrNet, real, fake) -> torch.Tensor:
    """Mean absolute SSBR score difference between real slices and their translations."""
    real = _as_batch(real, ssbr)
    fake = _as_batch(fake, ssbr)
    if real.shape != fake.shape:
        raise ValueError(f"real/fake batch mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return (ssbr(real) - ssbr(fake)).abs().mean()


def apply_mask_postprocess(fake, bm) -> np.ndarray:
    """Set everything outside the body mask to air (-1); leave the inside untouched."""
    fake = np.asarray(fake)
    bits = bm.bits if isinstance(bm, BodyMask) else np.asarray(bm, dtype=bool)
    if bits.shape != fake.shape:
        bits = resize_mask(bits, fake.shape)
    out = fake.copy()
    out[~bits] = -1.0
    return out


class ImagePool:
    """Replay buffer of generated images; half the time returns an older fake instead."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.images: list[torch.Tensor] = []

    def query(self, images: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return images
        out = []
        for img in images.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                i = int(self.rng.integers(0, self.size))
                out.append(self.images[i].clone())
                self.images[i] = img.clone()
            else:
                out.append(img)
        return torch.cat(out)


@dataclass
class LossReport:
    step: int
    adv_g: float
    cyc: float
    idt: float
    acl: float
    disc_a: float
    disc_b: float

    def line(self) -> str:
        return (f"{self.step} {self.adv_g:.8g} {self.cyc:.8g} {self.idt:.8g} "
                f"{self.acl:.8g} {self.disc_a:.8g} {self.disc_b:.8g}")


class TranslatorState:
    """Generators, discriminators, frozen SSBR, replay pools and optimizers."""

    def __init__(self, config: TranslatorConfig, ssbr: SsbrNet | None = None):
        self.config = config
        torch.manual_seed(config.seed)
        self.g_ab = Generator(config.gen_channels, config.gen_blocks, config.template_mode)
        self.g_ba = Generator(config.gen_channels, config.gen_blocks, config.template_mode)
        self.d_a = PatchDiscriminator(config.disc_channels, config.disc_layers)
        self.d_b = PatchDiscriminator(config.disc_channels, config.disc_layers)
        self.ssbr = None
        if ssbr is not None:
            self.ssbr = copy.deepcopy(ssbr).eval()
            for p in self.ssbr.parameters():
                p.requires_grad_(False)
        elif config.loss_weights[3] > 0:
            raise ValueError("an anatomical constraint weight > 0 needs an SSBR")
        rng = np.random.default_rng([config.seed, 7])
        self.pool_a = ImagePool(config.fake_pool_size, rng)
        self.pool_b = ImagePool(config.fake_pool_size, rng)
        lr = config.learning_rate
        self.opt_g = torch.optim.Adam(list(self.g_ab.parameters()) + list(self.g_ba.parameters()),
                                      lr=lr, betas=(0.5, 0.999))
        self.opt_d = torch.optim.Adam(list(self.d_a.parameters()) + list(self.d_b.parameters()),
                                      lr=lr, betas=(0.5, 0.999))
        self.step = 0

    def modules(self) -> dict[str, nn.Module]:
        return {"g_ab": self.g_ab, "g_ba": self.g_ba, "d_a": self.d_a, "d_b": self.d_b}

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for name, mod in self.modules().items():
            out.update(checkpoint.module_tensors(mod, prefix=name + "."))
        return out

    def manifest(self) -> dict:
        return {"kind": "translator", "config": asdict(self.config), "step": self.step,
                "seed": self.config.seed, "loss_weights": list(self.config.loss_weights)}

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.manifest(), self.tensors())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


def _mse_target(pred: torch.Tensor, target: float) -> torch.Tensor:
    return ((pred - target) ** 2).mean()


def cyclegan_step(state: TranslatorState, batch: PairedBatch) -> LossReport:
    cfg = state.config
    w_adv, w_cyc, w_id, w_acl = cfg.loss_weights
    real_a = _as_batch(batch.slices_a, state.g_ab)
    real_b = _as_batch(batch.slices_b, state.g_ab)

    for d in (state.d_a, state.d_b):
        d.requires_grad_(False)
    fake_b = state.g_ab(real_a)
    fake_a = state.g_ba(real_b)
    rec_a = state.g_ba(fake_b)
    rec_b = state.g_ab(fake_a)
    adv = _mse_target(state.d_b(fake_b), 1.0) + _mse_target(state.d_a(fake_a), 1.0)
    cyc = (rec_a - real_a).abs().mean() + (rec_b - real_b).abs().mean()
    if w_id > 0:
        idt = (state.g_ab(real_b) - real_b).abs().mean() + (state.g_ba(real_a) - real_a).abs().mean()
    else:
        idt = torch.zeros(())
    if state.ssbr is not None and w_acl > 0:
        acl = loss_acl(state.ssbr, real_a, fake_b) + loss_acl(state.ssbr, real_b, fake_a)
    else:
        acl = torch.zeros(())
    loss_g = w_adv * adv + w_cyc * cyc + w_id * idt + w_acl * acl
    if not torch.isfinite(loss_g):
        raise FloatingPointError(f"non-finite generator loss at step {state.step}; "
                                 f"last good state is step {state.step}")
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    for d in (state.d_a, state.d_b):
        d.requires_grad_(True)
    pooled_b = state.pool_b.query(fake_b)
    pooled_a = state.pool_a.query(fake_a)
    disc_a = 0.5 * (_mse_target(state.d_a(real_a), 1.0) + _mse_target(state.d_a(pooled_a), 0.0))
    disc_b = 0.5 * (_mse_target(state.d_b(real_b), 1.0) + _mse_target(state.d_b(pooled_b), 0.0))
    loss_d = disc_a + disc_b
    if not torch.isfinite(loss_d):
        raise FloatingPointError(f"non-finite discriminator loss at step {state.step}")
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    report = LossReport(state.step, adv.item(), cyc.item(), idt.item(), acl.item(),
                        disc_a.item(), disc_b.item())
    state.step += 1
    return report


@dataclass
class TranslationRun:
    state: TranslatorState
    history: list[LossReport] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    def log_lines(self) -> list[str]:
        return [r.line() for r in self.history]


def _load_domain(volumes, size) -> list[PreparedVolume]:
    out = []
    for i, v in enumerate(volumes):
        if isinstance(v, PreparedVolume):
            out.append(v)
            continue
        vid = str(v) if isinstance(v, (str, Path)) else f"vol{i}"
        if isinstance(v, (str, Path)):
            v = load_volume(v)
        out.append(prepare_volume(v, size, vid))
    return out


def train_translation(config: TranslatorConfig, volumes_a, volumes_b, ssbr=None,
                      out_dir=None) -> TranslationRun:
    """Train both generators on unpaired volumes.

    ``ssbr`` may be a :class:`TrainedSsbr`, an :class:`SsbrNet` or a checkpoint
    path.  Each iteration picks one volume per domain, forms ``batch_size``
    slice pairs with the configured strategy and applies one update.
    """
    if isinstance(ssbr, (str, Path)):
        ssbr = load_ssbr(ssbr)
    if isinstance(ssbr, TrainedSsbr):
        if tuple(ssbr.config.input_size) != tuple(config.image_size):
            raise ValueError("SSBR input size must match the translator image size")
        ssbr = ssbr.model
    if config.needs_ssbr and ssbr is None:
        raise ValueError(f"strategy {config.strategy!r} with weights {config.loss_weights} needs an SSBR")
    size = config.image_size
    dom_a = _load_domain(volumes_a, size)
    dom_b = _load_domain(volumes_b, size)
    if not dom_a or not dom_b:
        raise ValueError("need at least one volume per domain")
    if config.strategy == "ssbr":
        for v in dom_a + dom_b:
            if v.scores is None:
                v.scores = score_slices(ssbr, v.slices)
    state = TranslatorState(config, ssbr if config.loss_weights[3] > 0 else None)
    run = TranslationRun(state)
    rng = np.random.default_rng([config.seed, 11])
    out_dir = Path(out_dir) if out_dir is not None else None

    def snapshot():
        if out_dir is not None:
            path = out_dir / f"translator_step{state.step:06d}.ackpt"
            state.save(path)
            run.checkpoints.append(path)

    snapshot()
    for _ in range(config.steps):
        va = dom_a[int(rng.integers(len(dom_a)))]
        vb = dom_b[int(rng.integers(len(dom_b)))]
        if config.strategy == "ssbr":
            batch = make_paired_batch(va, vb, None, config.batch_size, rng)
        else:
            batch = make_pbs_batch(va, vb, config.batch_size, rng)
        run.history.append(cyclegan_step(state, batch))
        if config.checkpoint_every and state.step % config.checkpoint_every == 0:
            snapshot()
    if out_dir is not None:
        if not run.checkpoints or run.checkpoints[-1].name != f"translator_step{state.step:06d}.ackpt":
            snapshot()
        (out_dir / "translate_log.txt").write_text("".join(l + "\n" for l in run.log_lines()))
    return run


def load_translator(path) -> TranslatorState:
    manifest, tensors = checkpoint.load(path)
    if manifest.get("kind") != "translator":
        raise checkpoint.CheckpointError(f"{path} is not a translator checkpoint")
    cfg = TranslatorConfig(**manifest["config"])
    state = TranslatorState(cfg, None) if cfg.loss_weights[3] == 0 else _state_without_ssbr(cfg)
    for name, mod in state.modules().items():
        checkpoint.load_into(mod, tensors, prefix=name + ".")
    state.step = manifest["step"]
    return state


def _state_without_ssbr(cfg: TranslatorConfig) -> TranslatorState:
    # inference never needs the scorer; build with the anatomical weight zeroed then restore config
    tmp = TranslatorConfig(**{**asdict(cfg), "loss_weights": (*cfg.loss_weights[:3], 0.0)})
    state = TranslatorState(tmp, None)
    state.config = cfg
    return state


@torch.no_grad()
def translate_volume(translator, v: Volume, direction: str = "AB", mask_postprocess: bool | None = None,
                     roi: RoiBounds | None = None, window=DEFAULT_WINDOW) -> Volume:
    """Translate the ROI of ``v`` slice by slice.

    The result is a normalized volume at the translator's image size.  Slices
    outside the ROI are copied (normalized and resized) from the input.
    """
    state = load_translator(translator) if isinstance(translator, (str, Path)) else translator
    if not isinstance(state, TranslatorState):
        raise TypeError("translator must be a TranslatorState or checkpoint path")
    if direction not in ("AB", "BA"):
        raise ValueError(f"direction must be 'AB' or 'BA', got {direction!r}")
    gen = state.g_ab if direction == "AB" else state.g_ba
    gen.eval()
    if mask_postprocess is None:
        mask_postprocess = state.config.mask_postprocess
    size = state.config.image_size
    masks = body_masks(v, window)
    if roi is None:
        roi = select_abdominal_roi(v, masks=masks, window=window)
    norm = v if v.normalized else normalize_intensity(v, window)
    out = np.stack([resize_slice(s, size) for s in norm.intensities]).astype(np.float32)
    idx = roi.indices
    fake = generator_forward(gen, out[idx]).numpy()[:, 0]
    if mask_postprocess:
        fake = np.stack([apply_mask_postprocess(f, masks[i]) for f, i in zip(fake, idx)])
    out[idx] = fake
    dz, dy, dx = v.spacing_mm
    spacing = (dz, dy * v.shape[1] / size[0], dx * v.shape[2] / size[1])
    target = Modality.B_noncontrast if direction == "AB" else Modality.A_contrast
    return Volume(out, spacing, target, normalized=True)
