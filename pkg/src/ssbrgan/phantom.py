"""Procedural two-modality pseudo-abdominal phantoms with known slice correspondence.

Each phantom is a smooth one-parameter anatomy: a position ``s`` in ``[0, 1]``
runs from the thoracic apex (``s=0``) to the pelvis (``s=1``).  A volume
samples that anatomy through a monotone warp ``s = warp(n / (N - 1))``, so two
volumes with different warps or slice counts show the same anatomy at
different slice indices.  The correspondence between them is known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import Modality, Volume, save_volume

AIR_HU = -1000.0
LUNG_HU = -850.0
SOFT_TISSUE_HU = 40.0
BONE_HU = 700.0
VESSEL_HU = 40.0
LIVER_HU = 60.0
SPLEEN_HU = 50.0
FAT_HU = -100.0
KIDNEY_HU = 30.0
BLADDER_HU = 10.0
NOISE_HU = 20.0
# fraction of the vessel contrast shift taken up by each organ in the contrast domain
ORGAN_ENHANCEMENT = {"liver": 0.4, "spleen": 0.5, "kidney": 0.8}


class PhantomSpecError(ValueError):
    pass


def sine_warp(t, a: float):
    """Monotone slice-density warp ``t + a sin(pi t) t (1 - t)``; ``a=0`` is the identity."""
    t = np.asarray(t, dtype=np.float64)
    return t + a * np.sin(np.pi * t) * t * (1.0 - t)


def _warp_is_monotone(a: float) -> bool:
    t = np.linspace(0.0, 1.0, 4001)
    return bool(np.all(np.diff(sine_warp(t, a)) > 0))


def inverse_warp(s, a: float):
    t = np.linspace(0.0, 1.0, 20001)
    return np.interp(s, sine_warp(t, a), t)


@dataclass
class AnatomyProfile:
    """Landmark positions and shape parameters, all in anatomical units ``s``."""

    lung_end: float = 0.21
    bowel_start: float = 0.55
    bowel_end: float = 0.86
    body_rx: float = 0.40
    body_ry: float = 0.29
    body_phase: float = 0.0
    liver_end: float = 0.5
    kidney_span: tuple[float, float] = (0.38, 0.62)
    vessel_count: int = 2
    vessel_radii: tuple[float, ...] = (0.055, 0.04)
    bowel_pockets: int = 4
    bowel_phase: float = 0.0

    @classmethod
    def random(cls, rng: np.random.Generator) -> "AnatomyProfile":
        n_vessels = int(rng.integers(2, 4))
        return cls(
            lung_end=float(rng.uniform(0.18, 0.24)),
            bowel_start=float(rng.uniform(0.52, 0.6)),
            bowel_end=float(rng.uniform(0.82, 0.88)),
            body_rx=float(rng.uniform(0.37, 0.42)),
            body_ry=float(rng.uniform(0.26, 0.31)),
            body_phase=float(rng.uniform(-0.3, 0.3)),
            liver_end=float(rng.uniform(0.45, 0.52)),
            kidney_span=(float(rng.uniform(0.35, 0.4)), float(rng.uniform(0.6, 0.66))),
            vessel_count=n_vessels,
            vessel_radii=tuple(float(r) for r in rng.uniform(0.03, 0.06, size=n_vessels)),
            bowel_pockets=int(rng.integers(3, 6)),
            bowel_phase=float(rng.uniform(0, 2 * np.pi)),
        )


@dataclass
class PhantomSpec:
    seed: int
    n_slices: int = 100
    slice_size: tuple[int, int] = (64, 64)
    anatomy_profile: AnatomyProfile | None = None
    warp: float = 0.0
    n_slices_b: int | None = None
    warp_b: float | None = None
    contrast_delta_HU: float = 160.0
    spacing_mm: tuple[float, float, float] = (2.5, 1.0, 1.0)

    def __post_init__(self):
        if self.n_slices_b is None:
            self.n_slices_b = self.n_slices
        if self.warp_b is None:
            self.warp_b = self.warp

    def profile(self) -> AnatomyProfile:
        if self.anatomy_profile is not None:
            return self.anatomy_profile
        return AnatomyProfile.random(np.random.default_rng([self.seed, 0]))

    def validate(self):
        if min(self.n_slices, self.n_slices_b) < 8:
            raise PhantomSpecError("phantoms need at least 8 slices")
        if min(self.slice_size) < 16:
            raise PhantomSpecError("phantom slices must be at least 16x16")
        for a in (self.warp, self.warp_b):
            if not _warp_is_monotone(a):
                raise PhantomSpecError(f"warp amplitude {a} is not strictly increasing")
        p = self.profile()
        if not 0.0 < p.lung_end < p.bowel_start < p.bowel_end < 1.0:
            raise PhantomSpecError("landmark spans must satisfy 0 < lung_end < bowel_start < bowel_end < 1")


@dataclass
class CorrespondenceMap:
    """``positions[n]`` is the real-valued slice of volume B matching slice ``n`` of A."""

    positions: np.ndarray

    def __getitem__(self, n):
        return self.positions[n]

    def __len__(self):
        return len(self.positions)


@dataclass
class PhantomPair:
    volume_a: Volume
    volume_b: Volume
    correspondence: CorrespondenceMap
    landmarks: dict = field(default_factory=dict)


def slice_positions(n_slices: int, warp: float) -> np.ndarray:
    return sine_warp(np.linspace(0.0, 1.0, n_slices), warp)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _bump(s, lo, hi):
    """Smooth profile that is 0 outside ``[lo, hi]`` and peaks at 1 in the middle."""
    u = (np.asarray(s) - lo) / (hi - lo)
    return np.where((u >= 0) & (u <= 1), np.sin(np.pi * np.clip(u, 0, 1)), 0.0)


def _ellipse(yy, xx, cy, cx, ry, rx):
    if ry <= 0 or rx <= 0:
        return np.zeros_like(yy, dtype=bool)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_slice(s: float, p: AnatomyProfile, size, contrast_delta: float = 0.0) -> np.ndarray:
    """Noise-free HU slice of the anatomy at position ``s``."""
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # unit coordinates centred on the slice so shapes scale with resolution; +y is posterior
    yy = (yy + 0.5) / h - 0.5
    xx = (xx + 0.5) / w - 0.5
    img = np.full((h, w), AIR_HU)

    # body outline: widest at the upper abdomen, narrowing towards the pelvis
    rx = p.body_rx * (0.92 + 0.08 * np.sin(np.pi * s + p.body_phase) - 0.1 * _smoothstep((s - 0.75) / 0.25))
    ry = p.body_ry * (0.96 + 0.04 * np.cos(2 * np.pi * s + p.body_phase) - 0.06 * _smoothstep((s - 0.8) / 0.2))
    body = _ellipse(yy, xx, 0.0, 0.0, ry, rx)
    img[body] = SOFT_TISSUE_HU
    img[_ellipse(yy, xx, 0.0, 0.0, 0.86 * ry, 0.88 * rx)] = FAT_HU

    # liver peaks just below the diaphragm and shrinks steadily towards its tip
    top = p.lung_end - 0.1
    liver = float(np.interp(s, [top, p.lung_end, p.liver_end], [0.3, 1.0, 0.0], left=0.0, right=0.0))
    if liver > 0:
        img[_ellipse(yy, xx, -0.1 * ry, -0.42 * rx, 0.62 * ry * liver, 0.42 * rx * liver)] = LIVER_HU + ORGAN_ENHANCEMENT["liver"] * contrast_delta
    spleen = _bump(s, p.lung_end - 0.06, 0.45)
    if spleen > 0:
        img[_ellipse(yy, xx, 0.2 * ry, 0.55 * rx, 0.3 * ry * spleen, 0.18 * rx * spleen)] = SPLEEN_HU + ORGAN_ENHANCEMENT["spleen"] * contrast_delta

    k0, k1 = p.kidney_span
    kid = _bump(s, k0, k1)
    if kid > 0:
        for side in (-1, 1):
            img[_ellipse(yy, xx, 0.4 * ry, side * 0.42 * rx, 0.26 * ry * kid, 0.15 * rx * kid)] = KIDNEY_HU + ORGAN_ENHANCEMENT["kidney"] * contrast_delta

    # bowel loops fill the lower abdomen
    loops = _smoothstep((s - 0.35) / 0.15) * (1 - 0.5 * _smoothstep((s - 0.88) / 0.1))
    if loops > 0:
        for j in range(6):
            ang = 2 * np.pi * j / 6 + 3.0 * s + p.bowel_phase
            cy = -0.2 * ry + 0.3 * ry * np.sin(ang)
            cx = 0.4 * rx * np.cos(ang)
            img[_ellipse(yy, xx, cy, cx, 0.17 * ry * loops, 0.12 * rx * loops)] = SOFT_TISSUE_HU

    bladder = _smoothstep((s - 0.86) / 0.1)
    if bladder > 0:
        img[_ellipse(yy, xx, -0.25 * ry, 0.0, 0.42 * ry * bladder, 0.4 * rx * bladder)] = BLADDER_HU

    # vessels run the full length and spread apart low down (iliac branches)
    vessels = np.zeros((h, w), dtype=bool)
    split = _smoothstep((s - 0.75) / 0.15)
    for i in range(p.vessel_count):
        r = p.vessel_radii[i] * (1.0 - 0.35 * s)
        side = 1 if i % 2 == 0 else -1
        cx = side * (0.05 + 0.04 * i + 0.35 * split) * rx
        cy = 0.38 * ry - 0.12 * i * ry
        vessels |= _ellipse(yy, xx, cy, cx, r, r)
    renal = _bump(s, k0 + 0.04, k0 + 0.12)
    if renal > 0:
        vessels |= (np.abs(yy - 0.38 * ry) < 0.025 * renal + 1e-9) & (np.abs(xx) < 0.38 * rx)
    img[vessels & body] = VESSEL_HU + contrast_delta

    # vertebral bodies grow caudally
    vert = 0.8 + 0.45 * s
    img[_ellipse(yy, xx, 0.7 * ry, 0.0, 0.18 * ry * vert, 0.12 * rx * vert)] = BONE_HU
    # ribs above the mid abdomen, iliac wings below
    ribs = 1.0 - _smoothstep((s - 0.35) / 0.12)
    if ribs > 0:
        for ang in np.linspace(0.15 * np.pi, 0.85 * np.pi, 6):
            for side in (-1, 1):
                img[_ellipse(yy, xx, -0.8 * ry * np.cos(ang), side * 0.8 * rx * np.sin(ang), 0.04 * ribs, 0.04 * ribs)] = BONE_HU
    iliac = _smoothstep((s - 0.7) / 0.15)
    if iliac > 0:
        for side in (-1, 1):
            img[_ellipse(yy, xx, 0.45 * ry, side * 0.55 * rx, 0.35 * ry * iliac, 0.12 * rx * iliac)] = BONE_HU

    if s <= p.lung_end:
        # lungs shrink towards the diaphragm but end abruptly
        scale = 0.6 + 0.4 * np.cos(0.5 * np.pi * s / p.lung_end)
        for side in (-1, 1):
            img[_ellipse(yy, xx, 0.0, side * 0.45 * rx, 0.65 * ry * scale, 0.33 * rx * scale)] = LUNG_HU

    if p.bowel_start <= s <= p.bowel_end:
        for j in range(p.bowel_pockets):
            ang = p.bowel_phase + 2 * np.pi * j / p.bowel_pockets + 1.5 * s
            cy = -0.2 * ry + 0.3 * ry * np.sin(ang)
            cx = 0.4 * rx * np.cos(ang)
            img[_ellipse(yy, xx, cy, cx, 0.14 * ry, 0.1 * rx)] = AIR_HU
    return img


def _render_volume(positions, p, size, contrast_delta, rng) -> np.ndarray:
    vol = np.stack([render_slice(float(s), p, size, contrast_delta) for s in positions])
    vol = vol + rng.normal(0.0, NOISE_HU, size=vol.shape)
    return np.clip(np.rint(vol), -1024, 3071).astype(np.int16)


def landmarks_for(positions: np.ndarray, p: AnatomyProfile) -> dict:
    """Ground-truth landmark slice indices for one sampled volume.

    ``lung_end`` is the last slice containing lung, ``roi_top`` the first slice
    below it, ``bowel_end`` (= ``roi_bottom``) the last slice containing bowel gas.
    """
    lung = np.nonzero(positions <= p.lung_end)[0]
    bowel = np.nonzero((positions >= p.bowel_start) & (positions <= p.bowel_end))[0]
    lung_end = int(lung[-1]) if len(lung) else -1
    bowel_end = int(bowel[-1]) if len(bowel) else -1
    return {"lung_end": lung_end, "roi_top": lung_end + 1,
            "bowel_end": bowel_end, "roi_bottom": bowel_end}


def generate_phantom_pair(spec: PhantomSpec) -> PhantomPair:
    spec.validate()
    p = spec.profile()
    pos_a = slice_positions(spec.n_slices, spec.warp)
    pos_b = slice_positions(spec.n_slices_b, spec.warp_b)
    rng_a = np.random.default_rng([spec.seed, 1])
    rng_b = np.random.default_rng([spec.seed, 2])
    size = tuple(spec.slice_size)
    vol_a = _render_volume(pos_a, p, size, spec.contrast_delta_HU, rng_a)
    vol_b = _render_volume(pos_b, p, size, 0.0, rng_b)
    # position of each A slice on B's continuous index axis
    m_star = inverse_warp(pos_a, spec.warp_b) * (spec.n_slices_b - 1)
    landmarks = {"A": landmarks_for(pos_a, p), "B": landmarks_for(pos_b, p)}
    return PhantomPair(
        Volume(vol_a, spec.spacing_mm, Modality.A_contrast),
        Volume(vol_b, spec.spacing_mm, Modality.B_noncontrast),
        CorrespondenceMap(m_star),
        landmarks,
    )


def anatomical_offset(pair, cmap: CorrespondenceMap) -> float:
    n_a, n_b = pair
    if not 0 <= n_a < len(cmap):
        raise IndexError(f"slice {n_a} outside volume A")
    return float(abs(n_b - cmap[n_a]))


def write_manifest(pair: PhantomPair, spec: PhantomSpec, path) -> None:
    """Sidecar text manifest: one ``key = value`` per line, lists comma separated."""
    lines = [
        f"seed = {spec.seed}",
        f"n_slices_a = {spec.n_slices}",
        f"n_slices_b = {spec.n_slices_b}",
        f"slice_size = {spec.slice_size[0]},{spec.slice_size[1]}",
        f"warp_a = {spec.warp!r}",
        f"warp_b = {spec.warp_b!r}",
        f"contrast_delta_hu = {spec.contrast_delta_HU!r}",
    ]
    for dom in ("A", "B"):
        for k, v in pair.landmarks[dom].items():
            lines.append(f"{dom.lower()}.{k} = {v}")
    lines.append("m_star = " + ",".join(f"{m:.6f}" for m in pair.correspondence.positions))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    if "m_star" in out:
        out["m_star"] = CorrespondenceMap(np.array([float(v) for v in out["m_star"].split(",")]))
    for k, v in list(out.items()):
        if isinstance(v, str) and k.split(".")[-1] in ("lung_end", "roi_top", "bowel_end", "roi_bottom",
                                                        "seed", "n_slices_a", "n_slices_b"):
            out[k] = int(v)
    return out


def save_pair(pair: PhantomPair, spec: PhantomSpec, directory, stem: str) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "A": directory / f"{stem}_A.avol",
        "B": directory / f"{stem}_B.avol",
        "manifest": directory / f"{stem}.manifest.txt",
    }
    save_volume(pair.volume_a, paths["A"])
    save_volume(pair.volume_b, paths["B"])
    write_manifest(pair, spec, paths["manifest"])
    return paths
