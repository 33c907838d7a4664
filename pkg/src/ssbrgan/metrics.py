"""Paired image-quality metrics for images in [-1, 1].

PSNR and SSIM use a dynamic range of 2.0, the width of the normalized
intensity interval.  SSIM is the mean over all fully-contained positions of
an 11x11 Gaussian window (sigma 1.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

DATA_RANGE = 2.0
WINDOW = 11
SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float, data_range: float = DATA_RANGE) -> float:
    if m == 0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / m)


def psnr(a, b, data_range: float = DATA_RANGE) -> float:
    """PSNR in dB; identical images give ``math.inf``."""
    return psnr_from_mse(mse(a, b), data_range)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = DATA_RANGE, size: int = WINDOW, sigma: float = SIGMA) -> float:
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2D images")
    if min(a.shape) < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} window")
    w = gaussian_window(size, sigma)

    def filt(x):
        return convolve2d(x, w[::-1, ::-1], mode="valid")

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    per_slice: list[tuple[float, float, float]] = field(default_factory=list)
    value_range: float = DATA_RANGE

    def _column(self, i):
        return np.array([row[i] for row in self.per_slice], dtype=np.float64)

    @property
    def n_slices(self) -> int:
        return len(self.per_slice)

    @property
    def excluded_inf_psnr(self) -> int:
        return int(np.sum(np.isinf(self._column(2)))) if self.per_slice else 0

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and population standard deviation per metric; infinite PSNRs are left out."""
        out = {}
        for i, name in enumerate(("mse", "ssim", "psnr")):
            col = self._column(i)
            if name == "psnr":
                col = col[np.isfinite(col)]
            out[name] = (float(col.mean()), float(col.std())) if col.size else (math.nan, math.nan)
        return out

    def to_table(self) -> str:
        agg = self.aggregate()
        lines = ["metric mean std"]
        lines += [f"{k} {m:.6g} {s:.6g}" for k, (m, s) in agg.items()]
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        lines = []
        for k, (m, s) in self.aggregate().items():
            lines.append(f"{k}.mean = {m!r}")
            lines.append(f"{k}.std = {s!r}")
        lines.append(f"n_slices = {self.n_slices}")
        lines.append(f"excluded_inf_psnr = {self.excluded_inf_psnr}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_keyvalue())


def evaluate_slices(real, fake) -> MetricsReport:
    real = np.asarray(real)
    fake = np.asarray(fake)
    if len(real) != len(fake):
        raise ValueError(f"slice count mismatch: {len(real)} vs {len(fake)}")
    report = MetricsReport()
    for r, f in zip(real, fake):
        m = mse(r, f)
        report.per_slice.append((m, ssim(r, f), psnr_from_mse(m)))
    return report


def evaluate_paired(real_vol, fake_vol, roi) -> MetricsReport:
    """Per-slice metrics over ``roi`` between two normalized volumes of equal slice count."""
    if real_vol.n_slices != fake_vol.n_slices:
        raise ValueError(f"slice count mismatch: {real_vol.n_slices} vs {fake_vol.n_slices}")
    idx = roi.indices
    return evaluate_slices(real_vol.intensities[idx], fake_vol.intensities[idx])
