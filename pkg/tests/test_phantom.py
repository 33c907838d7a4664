import numpy as np
import pytest

from ssbrgan.phantom import (AnatomyProfile, PhantomSpec, PhantomSpecError, anatomical_offset,
                             generate_phantom_pair, inverse_warp, read_manifest, render_slice,
                             save_pair, sine_warp)
from ssbrgan.volume import load_volume, select_abdominal_roi


def test_identity_correspondence():
    pair = generate_phantom_pair(PhantomSpec(seed=1, n_slices=40, slice_size=(32, 32)))
    assert np.allclose(pair.correspondence.positions, np.arange(40), atol=1e-9)


def test_deterministic_in_seed():
    spec = PhantomSpec(seed=9, n_slices=30, slice_size=(24, 24), warp=0.5)
    a = generate_phantom_pair(spec)
    b = generate_phantom_pair(PhantomSpec(seed=9, n_slices=30, slice_size=(24, 24), warp=0.5))
    assert a.volume_a.intensities.tobytes() == b.volume_a.intensities.tobytes()
    assert a.volume_b.intensities.tobytes() == b.volume_b.intensities.tobytes()
    c = generate_phantom_pair(PhantomSpec(seed=10, n_slices=30, slice_size=(24, 24), warp=0.5))
    assert a.volume_a.intensities.tobytes() != c.volume_a.intensities.tobytes()


def test_zero_contrast_collapses_modalities():
    pair = generate_phantom_pair(PhantomSpec(seed=4, n_slices=30, slice_size=(32, 32), contrast_delta_HU=0))
    diff = pair.volume_a.intensities.astype(float) - pair.volume_b.intensities.astype(float)
    # difference of two independent noise fields with sigma 20 HU
    assert abs(diff.mean()) < 1.0
    assert 0.8 * 20 * np.sqrt(2) < diff.std() < 1.1 * 20 * np.sqrt(2)
    p = AnatomyProfile()
    assert np.array_equal(render_slice(0.4, p, (32, 32), 0.0), render_slice(0.4, p, (32, 32), 0.0))


def test_contrast_enhances_domain_a():
    p = AnatomyProfile()
    plain = render_slice(0.45, p, (64, 64), 0.0)
    enhanced = render_slice(0.45, p, (64, 64), 160.0)
    assert (enhanced >= plain).all() and (enhanced > plain).any()


def test_warp_properties():
    t = np.linspace(0, 1, 201)
    for a in (-1.0, -0.4, 0.0, 0.7, 1.0):
        w = sine_warp(t, a)
        assert w[0] == 0 and w[-1] == pytest.approx(1)
        assert np.all(np.diff(w) > 0)
        assert np.allclose(inverse_warp(w, a), t, atol=1e-6)


def test_monotone_correspondence():
    pair = generate_phantom_pair(PhantomSpec(seed=2, n_slices=50, slice_size=(24, 24), warp=0.8,
                                             n_slices_b=70, warp_b=-0.6))
    m = pair.correspondence.positions
    assert np.all(np.diff(m) > 0)
    assert m[0] == pytest.approx(0) and m[-1] == pytest.approx(69)


def test_offset_examples():
    pair = generate_phantom_pair(PhantomSpec(seed=1, n_slices=20, slice_size=(24, 24)))
    cmap = pair.correspondence
    assert anatomical_offset((3, 3), cmap) == pytest.approx(0.0, abs=1e-9)
    assert anatomical_offset((5, 9), cmap) == pytest.approx(4.0)
    warped = generate_phantom_pair(PhantomSpec(seed=1, n_slices=20, slice_size=(24, 24), warp=0.6, warp_b=-0.5))
    m = warped.correspondence[7]
    assert anatomical_offset((7, m + 3), warped.correspondence) == pytest.approx(3.0)


def test_spec_errors():
    with pytest.raises(PhantomSpecError):
        generate_phantom_pair(PhantomSpec(seed=0, n_slices=4))
    with pytest.raises(PhantomSpecError):
        generate_phantom_pair(PhantomSpec(seed=0, warp=3.0))
    bad = AnatomyProfile(lung_end=0.6, bowel_start=0.5)
    with pytest.raises(PhantomSpecError):
        generate_phantom_pair(PhantomSpec(seed=0, anatomy_profile=bad))


def test_landmarks_match_roi():
    pair = generate_phantom_pair(PhantomSpec(seed=3, n_slices=100, slice_size=(64, 64)))
    lm = pair.landmarks["A"]
    roi = select_abdominal_roi(pair.volume_a)
    assert abs(roi.top_index - lm["roi_top"]) <= 2
    assert abs(roi.bottom_index - lm["bowel_end"]) <= 2


def test_save_pair_and_manifest(tmp_path):
    spec = PhantomSpec(seed=5, n_slices=24, slice_size=(24, 24), warp=0.3, n_slices_b=30)
    pair = generate_phantom_pair(spec)
    paths = save_pair(pair, spec, tmp_path, "p0")
    assert np.array_equal(load_volume(paths["A"]).intensities, pair.volume_a.intensities)
    man = read_manifest(paths["manifest"])
    assert man["seed"] == 5 and man["n_slices_b"] == 30
    assert man["a.lung_end"] == pair.landmarks["A"]["lung_end"]
    assert np.allclose(man["m_star"].positions, pair.correspondence.positions, atol=1e-6)
