"""Volume container, intensity windowing, body masks and abdominal ROI detection.

Volumes are stored slice-major ``(z, y, x)`` with slice 0 the most cranial
slice.  Raw volumes hold Hounsfield units as ``int16``; normalized volumes
hold ``float32`` values in ``[-1, 1]``.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

MAGIC = b"AVOL1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<5sHBB3I3f")

BODY_THRESHOLD_HU = -300.0
AIR_THRESHOLD_HU = -500.0
DEFAULT_WINDOW = (-1024.0, 1024.0)
TAU_LUNG = 0.08
TAU_BOWEL = 0.03


class VolumeFormatError(ValueError):
    """File does not start with the AVOL1 magic or has a bad header."""


class VolumeTruncatedError(ValueError):
    """Payload size does not match the declared shape."""


class VolumeStateError(ValueError):
    """Operation called on a volume in the wrong intensity state."""


class DegenerateMaskError(ValueError):
    """Body mask is empty where a non-empty mask is required."""


class InsufficientDataError(ValueError):
    pass


class Modality(enum.IntEnum):
    unknown = 0
    A_contrast = 1
    B_noncontrast = 2


@dataclass
class Volume:
    intensities: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: Modality = Modality.unknown
    normalized: bool = False

    def __post_init__(self):
        arr = np.asarray(self.intensities)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D array, got shape {arr.shape}")
        # the header stores spacing as float32; keep it that way so round-trips are exact
        self.spacing_mm = tuple(float(s) for s in np.asarray(self.spacing_mm, dtype=np.float32))
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise ValueError("spacing must be three positive values")
        self.modality = Modality(self.modality)
        if self.normalized:
            arr = arr.astype(np.float32, copy=False)
            if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
                raise ValueError("normalized intensities must lie in [-1, 1]")
        else:
            arr = arr.astype(np.int16, copy=False)
        self.intensities = arr

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.intensities.shape)

    @property
    def n_slices(self) -> int:
        return self.intensities.shape[0]


@dataclass(frozen=True)
class BodyMask:
    bits: np.ndarray
    degenerate: bool = False

    @property
    def shape(self):
        return self.bits.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True)
class RoiBounds:
    top_index: int
    bottom_index: int
    fallback: bool = False

    def __len__(self):
        return self.bottom_index - self.top_index + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.top_index, self.bottom_index + 1)


def save_volume(v: Volume, path) -> None:
    dtype_code = 1 if v.normalized else 0
    data = v.intensities.astype("<f4" if v.normalized else "<i2", copy=False)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, dtype_code, int(v.modality),
                          *v.shape, *v.spacing_mm)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())


def load_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:5] != MAGIC:
        raise VolumeFormatError(f"{path}: not an AVOL1 file")
    magic, version, dtype_code, modality, z, y, x, dz, dy, dx = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise VolumeFormatError(f"{path}: unsupported format version {version}")
    if dtype_code not in (0, 1):
        raise VolumeFormatError(f"{path}: unknown dtype code {dtype_code}")
    dtype = np.dtype("<f4" if dtype_code == 1 else "<i2")
    payload = raw[_HEADER.size:]
    expected = z * y * x * dtype.itemsize
    if len(payload) != expected:
        raise VolumeTruncatedError(
            f"{path}: payload has {len(payload)} bytes, shape ({z},{y},{x}) needs {expected}")
    data = np.frombuffer(payload, dtype=dtype).reshape(z, y, x)
    data = data.astype(np.float32 if dtype_code else np.int16)
    return Volume(data, (dz, dy, dx), Modality(modality), normalized=bool(dtype_code))


def window_to_unit(hu, window=DEFAULT_WINDOW) -> np.ndarray:
    lo, hi = window
    if not lo < hi:
        raise ValueError(f"window must satisfy lo < hi, got {window}")
    x = np.asarray(hu, dtype=np.float64)
    return (np.clip((x - lo) / (hi - lo), 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)


def unit_to_hu(x, window=DEFAULT_WINDOW) -> np.ndarray:
    """Inverse of :func:`window_to_unit` inside the window (clamped values stay clamped)."""
    lo, hi = window
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo


def normalize_intensity(v: Volume, window=DEFAULT_WINDOW) -> Volume:
    if v.normalized:
        raise VolumeStateError("volume is already normalized")
    return replace(v, intensities=window_to_unit(v.intensities, window), normalized=True)


def hu_array(v: Volume, window=DEFAULT_WINDOW) -> np.ndarray:
    """HU view of a volume; normalized volumes are mapped back through ``window``."""
    if v.normalized:
        return unit_to_hu(v.intensities, window)
    return v.intensities.astype(np.float64)


def resize_slice(image, target) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (first/last pixels map onto each other)."""
    img = np.asarray(image)
    h, w = (int(t) for t in target)
    if h < 1 or w < 1:
        raise ValueError(f"target dims must be >= 1, got {target}")
    if img.ndim != 2:
        raise ValueError("resize_slice expects a 2D array")
    if img.shape == (h, w):
        return img.copy()
    src = img.astype(np.float64)

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, fr = axis(img.shape[0], h)
    c0, c1, fc = axis(img.shape[1], w)
    fr = fr[:, None]
    fc = fc[None, :]
    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bot = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    out = top * (1 - fr) + bot * fr
    # keep the output inside the input range despite rounding
    out = np.clip(out, src.min(), src.max())
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def resize_mask(bits, target) -> np.ndarray:
    """Nearest-neighbour resize of a boolean mask, corner aligned."""
    bits = np.asarray(bits, dtype=bool)
    h, w = target
    rows = np.rint(np.linspace(0, bits.shape[0] - 1, h)).astype(int)
    cols = np.rint(np.linspace(0, bits.shape[1] - 1, w)).astype(int)
    return bits[np.ix_(rows, cols)]


def body_mask(slice_hu, threshold: float = BODY_THRESHOLD_HU) -> BodyMask:
    """Largest connected component above ``threshold`` HU, with interior holes filled."""
    fg = np.asarray(slice_hu) > threshold
    labels, n = ndimage.label(fg)
    if n == 0:
        return BodyMask(np.zeros(fg.shape, dtype=bool), degenerate=True)
    sizes = np.bincount(labels.ravel())[1:]
    largest = labels == (int(np.argmax(sizes)) + 1)
    return BodyMask(ndimage.binary_fill_holes(largest))


def body_masks(v: Volume, window=DEFAULT_WINDOW) -> list[BodyMask]:
    hu = hu_array(v, window)
    return [body_mask(s) for s in hu]


def air_fraction(slice_hu, mask: BodyMask, mode: str = "body",
                 threshold: float = AIR_THRESHOLD_HU) -> float:
    """Fraction of air pixels inside the body (``mode="body"``) or in the whole slice."""
    air = np.asarray(slice_hu) < threshold
    if mode == "slice":
        return float(air.mean())
    if mode != "body":
        raise ValueError(f"unknown air fraction mode {mode!r}")
    if mask.degenerate or mask.area == 0:
        raise DegenerateMaskError("air fraction is undefined for an empty body mask")
    return float(np.count_nonzero(air & mask.bits) / mask.area)


def air_profile(v: Volume, masks=None, mode: str = "body", window=DEFAULT_WINDOW):
    """Per-slice air fraction and validity (non-degenerate body mask) flags."""
    hu = hu_array(v, window)
    if masks is None:
        masks = [body_mask(s) for s in hu]
    valid = np.array([not m.degenerate for m in masks])
    frac = np.zeros(len(masks))
    for i, (s, m) in enumerate(zip(hu, masks)):
        if valid[i]:
            frac[i] = air_fraction(s, m, mode=mode)
    return frac, valid


def select_abdominal_roi(v: Volume, tau_lung: float = TAU_LUNG, tau_bowel: float = TAU_BOWEL,
                         smoothing: int = 3, mode: str = "body", masks=None,
                         window=DEFAULT_WINDOW) -> RoiBounds:
    """Find the slab between the end of the lungs and the end of the bowel gas.

    The volume must be ordered cranial to caudal.  The top bound is the first
    slice, scanning caudally from the slice with the most air, whose smoothed
    air fraction drops below ``tau_lung``; the bottom bound is the last slice
    whose smoothed air fraction exceeds ``tau_bowel``.  If the two bounds are
    inconsistent the full extent is returned with ``fallback=True``.
    """
    frac, valid = air_profile(v, masks=masks, mode=mode, window=window)
    if valid.sum() < 3:
        raise InsufficientDataError(
            f"need at least 3 slices with a body mask, got {int(valid.sum())}")
    smooth = ndimage.uniform_filter1d(frac, size=smoothing, mode="nearest")
    n = len(frac)
    start = int(np.argmax(smooth))
    below = np.nonzero(smooth[start:] < tau_lung)[0]
    above = np.nonzero(smooth > tau_bowel)[0]
    if len(below) and len(above):
        top = start + int(below[0])
        bottom = int(above[-1])
        if top <= bottom:
            return RoiBounds(top, bottom)
    warnings.warn("abdominal ROI landmarks not found; using the full volume", RuntimeWarning)
    return RoiBounds(0, n - 1, fallback=True)


def bm_delta(prev: BodyMask, cur: BodyMask) -> float:
    """Fraction of the previous body mask not covered by the current one."""
    area = prev.area
    if area == 0:
        raise ZeroDivisionError("previous body mask is empty")
    inter = np.count_nonzero(np.logical_and(prev.bits, cur.bits))
    return 1.0 - inter / area


def export_pgm(image, path) -> None:
    """Write one normalized slice as an 8-bit binary PGM, mapping [-1, 1] to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export expects a 2D slice")
    pix = np.rint((np.clip(img, -1, 1) + 1.0) * 127.5).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
