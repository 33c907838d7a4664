import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from conftest import disk
from ssbrgan.volume import (BodyMask, DegenerateMaskError, InsufficientDataError, Modality, Volume,
                            VolumeFormatError, VolumeStateError, VolumeTruncatedError, air_fraction,
                            bm_delta, body_mask, export_pgm, load_volume, normalize_intensity,
                            resize_mask, resize_slice, save_volume, select_abdominal_roi)


def test_round_trip_int16(tmp_path):
    x = np.random.default_rng(0).integers(-1024, 3072, size=(4, 8, 8)).astype(np.int16)
    v = Volume(x, (2.5, 0.7, 0.7), Modality.A_contrast)
    save_volume(v, tmp_path / "v.avol")
    w = load_volume(tmp_path / "v.avol")
    assert w.shape == (4, 8, 8)
    assert np.array_equal(w.intensities, x) and w.intensities.dtype == np.int16
    assert w.spacing_mm == v.spacing_mm and w.modality == Modality.A_contrast and not w.normalized


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1, 1, width=32)))
def test_round_trip_normalized(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "n.avol"
    v = Volume(x, (1.0, 1.0, 1.0), Modality.B_noncontrast, normalized=True)
    save_volume(v, path)
    w = load_volume(path)
    assert w.normalized
    assert w.intensities.tobytes() == x.tobytes()


def test_zero_volume_payload(tmp_path):
    save_volume(Volume(np.zeros((1, 2, 2), np.int16)), tmp_path / "z.avol")
    raw = (tmp_path / "z.avol").read_bytes()
    header = struct.calcsize("<5sHBB3I3f")
    assert len(raw) == header + 8
    assert raw[header:] == bytes(8)


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.avol"
    p.write_bytes(b"XXXX" + bytes(64))
    with pytest.raises(VolumeFormatError):
        load_volume(p)


def test_truncated(tmp_path):
    p = tmp_path / "t.avol"
    header = struct.pack("<5sHBB3I3f", b"AVOL1", 1, 0, 0, 2, 8, 8, 1, 1, 1)
    p.write_bytes(header + np.zeros(64, "<i2").tobytes())
    with pytest.raises(VolumeTruncatedError):
        load_volume(p)


def test_normalized_range_enforced():
    with pytest.raises(ValueError):
        Volume(np.full((1, 2, 2), 1.5, np.float32), normalized=True)


def test_normalize_examples():
    v = Volume(np.array([[[-1024, 1024, 0, 1524]]], np.int16))
    out = normalize_intensity(v).intensities.ravel()
    assert out.tolist() == [-1.0, 1.0, 0.0, 1.0]
    w = normalize_intensity(Volume(np.array([[[-200, 300]]], np.int16)), window=(-200, 300))
    assert w.intensities.ravel().tolist() == [-1.0, 1.0]
    with pytest.raises(VolumeStateError):
        normalize_intensity(normalize_intensity(v))


@given(st.lists(st.integers(-1024, 3071), min_size=2, max_size=40))
def test_normalize_monotone(values):
    values = sorted(values)
    out = normalize_intensity(Volume(np.array(values, np.int16).reshape(1, 1, -1))).intensities.ravel()
    assert np.all(np.diff(out) >= 0)
    assert out.min() >= -1 and out.max() <= 1


def test_resize_examples():
    c = np.full((10, 7), 0.25)
    assert np.all(resize_slice(c, (4, 13)) == 0.25)
    big = np.random.default_rng(0).uniform(-1, 1, (512, 512))
    small = resize_slice(big, (128, 128))
    assert small.shape == (128, 128)
    assert small.min() >= big.min() and small.max() <= big.max()
    assert np.array_equal(resize_slice(big, (512, 512)), big)
    with pytest.raises(ValueError):
        resize_slice(big, (0, 3))


def test_resize_corners_and_midpoint():
    a = np.array([[0.0, 1.0], [2.0, 3.0]])
    r = resize_slice(a, (3, 3))
    assert r[0, 0] == 0 and r[0, 2] == 1 and r[2, 0] == 2 and r[2, 2] == 3
    assert r[1, 1] == pytest.approx(1.5)


def test_resize_mask_nearest():
    m = np.zeros((8, 8), bool)
    m[:4] = True
    r = resize_mask(m, (4, 4))
    assert r.dtype == bool and r[:2].all() and not r[2:].any()


def _flood_outside(fg):
    # pixels reachable from the border through background
    outside = np.zeros_like(fg)
    stack = [(i, j) for i in range(fg.shape[0]) for j in (0, fg.shape[1] - 1)]
    stack += [(i, j) for j in range(fg.shape[1]) for i in (0, fg.shape[0] - 1)]
    while stack:
        i, j = stack.pop()
        if 0 <= i < fg.shape[0] and 0 <= j < fg.shape[1] and not fg[i, j] and not outside[i, j]:
            outside[i, j] = True
            stack += [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
    return outside


def test_body_mask_examples():
    air = np.full((32, 32), -1000)
    m = body_mask(air)
    assert m.degenerate and m.area == 0
    d = disk((32, 32), (16, 16), 9)
    img = np.where(d, 40, -1000)
    assert np.array_equal(body_mask(img).bits, d)
    cavity = disk((32, 32), (16, 16), 4)
    img[cavity] = -800
    bits = body_mask(img).bits
    assert np.array_equal(bits, ~_flood_outside(np.where(d & ~cavity, True, False)))
    assert np.array_equal(bits, d)


def test_body_mask_single_component_no_holes():
    rng = np.random.default_rng(3)
    for _ in range(20):
        img = np.where(rng.random((24, 24)) < 0.55, 40, -1000)
        bits = body_mask(img).bits
        if not bits.any():
            continue
        assert ndimage.label(bits)[1] == 1
        assert np.array_equal(bits, ~_flood_outside(bits))


def test_air_fraction():
    d = disk((32, 32), (16, 16), 10)
    img = np.where(d, 40, -1000)
    m = body_mask(img)
    assert air_fraction(img, m) == 0.0
    inside = np.flatnonzero(d.ravel())
    img.ravel()[inside[: len(inside) // 2]] = -900
    assert air_fraction(img, BodyMask(d)) == pytest.approx(0.5, abs=1 / len(inside))
    with pytest.raises(DegenerateMaskError):
        air_fraction(img, BodyMask(np.zeros((32, 32), bool), True))
    assert air_fraction(np.full((4, 4), -1000), BodyMask(np.zeros((4, 4), bool), True), mode="slice") == 1.0


def _synthetic_volume(n=100, lung=(0, 19), bowel=(60, 89)):
    d = disk((48, 48), (24, 24), 18)
    vol = np.full((n, 48, 48), -1000, np.int16)
    for z in range(n):
        sl = np.where(d, 40, -1000)
        if lung[0] <= z <= lung[1]:
            sl[disk((48, 48), (24, 15), 6) | disk((48, 48), (24, 33), 6)] = -850
        if bowel[0] <= z <= bowel[1]:
            sl[disk((48, 48), (30, 24), 4)] = -950
        vol[z] = sl
    return Volume(vol)


def test_roi_synthetic_landmarks():
    roi = select_abdominal_roi(_synthetic_volume())
    assert abs(roi.top_index - 20) <= 2 and abs(roi.bottom_index - 89) <= 2
    assert not roi.fallback


def test_roi_fallback_no_air():
    v = Volume(np.where(disk((16, 16), (8, 8), 6), 40, -1000)[None].repeat(10, 0).astype(np.int16))
    with pytest.warns(RuntimeWarning):
        roi = select_abdominal_roi(v)
    assert (roi.top_index, roi.bottom_index, roi.fallback) == (0, 9, True)


def test_roi_insufficient():
    v = Volume(np.where(disk((16, 16), (8, 8), 6), 40, -1000)[None].repeat(2, 0).astype(np.int16))
    with pytest.raises(InsufficientDataError):
        select_abdominal_roi(v)


def test_bm_delta():
    a = np.zeros((10, 10), bool)
    a[:, :] = True
    assert bm_delta(BodyMask(a), BodyMask(a)) == 0.0
    b = a.copy()
    b[8:] = False
    assert bm_delta(BodyMask(a), BodyMask(b)) == pytest.approx(0.2)
    assert bm_delta(BodyMask(b), BodyMask(~b)) == 1.0
    with pytest.raises(ZeroDivisionError):
        bm_delta(BodyMask(np.zeros((3, 3), bool)), BodyMask(a[:3, :3]))


@settings(max_examples=40)
@given(arrays(bool, (6, 6)), arrays(bool, (6, 6)))
def test_bm_delta_range(p, c):
    if not p.any():
        return
    assert bm_delta(BodyMask(p), BodyMask(p)) == 0.0
    assert 0.0 <= bm_delta(BodyMask(p), BodyMask(c)) <= 1.0


def test_export_pgm(tmp_path):
    img = np.array([[-1.0, 1.0], [0.0, 1.0]])
    export_pgm(img, tmp_path / "s.pgm")
    raw = (tmp_path / "s.pgm").read_bytes()
    assert raw.startswith(b"P5")
    assert raw[-4:] == bytes([0, 255, 128, 255]) or raw[-4:] == bytes([0, 255, 127, 255])
