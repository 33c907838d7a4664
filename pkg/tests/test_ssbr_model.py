import numpy as np
import pytest
import torch

from ssbrgan import checkpoint
from ssbrgan.ssbr import (SsbrConfig, SsbrNet, augment, build_model, load_ssbr, make_ssbr_batch,
                          prepare_volume, sample_slice_indices, score_volume, ssbr_forward, spearman,
                          train_ssbr)
from ssbrgan.volume import RoiBounds, VolumeStateError, normalize_intensity

TINY = dict(backbone_depth=2, base_channels=4, input_size=(32, 32), batch_volumes=2, slices_per_volume=4)


def test_forward_range_and_duplicates():
    torch.manual_seed(0)
    net = SsbrNet(3, 8).eval()
    x = np.random.default_rng(0).uniform(-1, 1, (8, 32, 32)).astype(np.float32)
    x[5] = x[2]
    s = ssbr_forward(net, x, (32, 32)).detach().numpy()
    assert s.shape == (8,)
    assert np.all(np.abs(s) < 1)
    assert s[5] == s[2]


def test_forward_zero_head():
    net = SsbrNet(2, 4, zero_head=True).eval()
    s = ssbr_forward(net, np.random.default_rng(1).uniform(-1, 1, (3, 16, 16)))
    assert torch.all(s == 0)


def test_forward_shape_errors():
    net = SsbrNet(2, 4).eval()
    with pytest.raises(ValueError):
        ssbr_forward(net, np.zeros((2, 2, 16, 16), np.float32))
    with pytest.raises(ValueError):
        ssbr_forward(net, np.zeros((2, 16, 16), np.float32), (32, 32))


def test_sample_indices():
    rng = np.random.default_rng(0)
    assert sample_slice_indices(6, 6, rng).tolist() == list(range(6))
    for length in (5, 17, 60):
        for p in (2, 3, 5):
            idx = sample_slice_indices(length, p, rng)
            assert len(idx) == p and idx[0] == 0 and idx[-1] == length - 1
            assert np.all(np.diff(idx) > 0)
    with pytest.raises(ValueError):
        sample_slice_indices(3, 4, rng)


def test_make_batch(small_pair):
    _, pair = small_pair
    vols = [prepare_volume(pair.volume_a, (32, 32), "a"), prepare_volume(pair.volume_b, (32, 32), "b")]
    cfg = SsbrConfig(**TINY)
    b = make_ssbr_batch(vols, cfg, np.random.default_rng(0))
    assert b.slices.shape == (2, 4, 32, 32)
    assert b.slices.reshape(-1, 32, 32).shape[0] == 8
    assert b.bm_deltas.shape == (2, 3)
    assert np.all((b.bm_deltas >= 0) & (b.bm_deltas <= 1))
    assert np.all(np.diff(b.indices, axis=1) > 0)


def test_make_batch_excludes_short(small_pair):
    _, pair = small_pair
    long = prepare_volume(pair.volume_a, (32, 32), "long")
    short = prepare_volume(pair.volume_b, (32, 32), "short", roi=RoiBounds(10, 12))
    cfg = SsbrConfig(**{**TINY, "slices_per_volume": 5})
    for seed in range(5):
        b = make_ssbr_batch([long, short], cfg, np.random.default_rng(seed))
        assert b.volume_ids == ["long", "long"]
    with pytest.raises(ValueError):
        make_ssbr_batch([short], cfg, np.random.default_rng(0))


def test_renormalized_deltas_sum_to_two(small_pair):
    _, pair = small_pair
    v = prepare_volume(pair.volume_a, (32, 32))
    cfg = SsbrConfig(**{**TINY, "renormalize_bm": True})
    b = make_ssbr_batch([v, v], cfg, np.random.default_rng(3))
    assert np.allclose(b.bm_deltas.sum(axis=1), 2.0)


def test_augment_pads_with_air():
    x = np.zeros((4, 8, 8), np.float32)
    y = augment(x, 2, np.random.default_rng(0))
    assert y.shape == x.shape and set(np.unique(y)) <= {-1.0, 0.0}
    assert augment(x, 0, np.random.default_rng(0)) is x


def test_zero_steps_equals_init(small_pair):
    _, pair = small_pair
    cfg = SsbrConfig(**TINY, steps=0, seed=3)
    trained = train_ssbr(cfg, [pair.volume_a, pair.volume_b])
    init = build_model(cfg)
    a = checkpoint.module_tensors(trained.model)
    b = checkpoint.module_tensors(init)
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_training_deterministic_and_logged(small_pair, tmp_path):
    _, pair = small_pair
    cfg = SsbrConfig(**TINY, steps=5, seed=1)
    r1 = train_ssbr(cfg, [pair.volume_a, pair.volume_b], log_path=tmp_path / "log.txt")
    r2 = train_ssbr(cfg, [pair.volume_a, pair.volume_b])
    assert r1.to_bytes() == r2.to_bytes()
    lines = (tmp_path / "log.txt").read_text().splitlines()
    assert len(lines) == 5 and len(lines[0].split()) == 5
    r1.save(tmp_path / "s.ckpt")
    loaded = load_ssbr(tmp_path / "s.ckpt")
    assert loaded.step == 5 and loaded.to_bytes() == r1.to_bytes()


def test_training_needs_two_volumes(small_pair):
    _, pair = small_pair
    with pytest.raises(ValueError):
        train_ssbr(SsbrConfig(**TINY, steps=1), [pair.volume_a])


def test_score_volume(small_pair):
    _, pair = small_pair
    net = SsbrNet(2, 4).eval()
    norm = normalize_intensity(pair.volume_a)
    roi = RoiBounds(5, 24)
    s1 = score_volume(net, norm, roi, (32, 32), "a")
    s2 = score_volume(net, norm, roi, (32, 32), "a")
    assert len(s1) == 20 and np.array_equal(s1.scores, s2.scores)
    with pytest.raises(VolumeStateError):
        score_volume(net, pair.volume_a, roi)


def test_spearman():
    assert spearman([1, 2, 3], [0.1, 0.5, 0.9]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
