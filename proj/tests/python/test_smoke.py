import json

import numpy as np
import pytest

import rtcnet


def rand_img(h, w, seed):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, 3), dtype=np.float32)


TINY_NET = {
    "base_width": 8,
    "c_g": 12,
    "c_l": 6,
    "lr_extra_blocks": 2,
    "disc_width": 8,
    "codebook_size": 32,
    "prior_width": 8,
}


def train_cfg(stage, steps, seed=9):
    return json.dumps(
        {
            "stage": stage,
            "steps": steps,
            "batch_size": 2,
            "hr_patch": 32,
            "lr": 1e-3,
            "seed": seed,
            "net": TINY_NET,
            "revive_every": 5,
            "log_every": 5,
        }
    )


def test_psnr_and_ssim():
    a = rand_img(24, 24, 1)
    assert rtcnet.psnr(a, a) == float("inf")
    assert rtcnet.ssim(a, a) == 1.0
    b = np.clip(a + 0.02, 0.0, 1.0).astype(np.float32)
    assert 0.0 < rtcnet.psnr(a, b) < 100.0
    assert rtcnet.ssim(a, b) < 1.0
    assert rtcnet.psnr(a, b) == pytest.approx(rtcnet.psnr(b, a))


def test_degrade_shape_and_determinism():
    hr = rand_img(32, 32, 2)
    lr1 = rtcnet.degrade(hr, '{"seed": 7}')
    lr2 = rtcnet.degrade(hr, '{"seed": 7}')
    assert lr1.shape == (8, 8, 3)
    assert lr1.dtype == np.float32
    assert np.array_equal(lr1, lr2)
    assert not np.array_equal(lr1, rtcnet.degrade(hr, '{"seed": 8}'))
    assert lr1.min() >= 0.0 and lr1.max() <= 1.0


def test_degrade_rejects_bad_config():
    hr = rand_img(32, 32, 3)
    with pytest.raises(ValueError):
        rtcnet.degrade(hr, '{"no_such_knob": 1}')
    with pytest.raises(ValueError):
        rtcnet.degrade(np.zeros((4, 4, 3), dtype=np.float32))


def test_quantize_recovers_rows():
    rng = np.random.default_rng(3)
    entries = rng.random((16, 4)).astype(np.float32)
    feats = entries[[1, 5, 5, 9]].reshape(2, 2, 4)
    idx, q = rtcnet.quantize(entries, feats)
    assert idx.tolist() == [[1, 5], [5, 9]]
    assert np.allclose(q, feats)


def test_generate_patches_splits_by_label():
    img = rand_img(32, 32, 4)
    mask = np.zeros((32, 32), dtype=np.int64)
    mask[:, 16:] = 1
    recs = rtcnet.generate_patches(img, mask, 0.85, 16, "img0")
    assert len(recs) == 4
    assert sorted(r["label"] for r in recs) == [0, 0, 1, 1]
    for r in recs:
        assert r["patch"].shape == (16, 16, 3)
        assert r["coverage"] == 1.0
        assert r["source_id"] == "img0"


def test_confusion_analysis_reports_rate():
    imgs = [rand_img(32, 32, i) for i in range(2)]
    out = json.loads(rtcnet.confusion_analysis(imgs, 16, '{"seed": 5}'))
    assert 0.0 <= out["mismatch_rate"] <= 1.0
    assert out["patch_size"] == 16


def test_train_infer_roundtrip(tmp_path):
    imgs = [rand_img(48, 48, 10 + i) for i in range(4)]
    ck1 = rtcnet.train(train_cfg(1, 4), str(tmp_path / "s1"), imgs)
    ck2 = rtcnet.train(train_cfg(2, 4), str(tmp_path / "s2"), imgs, resume=ck1)
    sr = rtcnet.infer(ck2, rand_img(12, 12, 42))
    assert sr.shape == (48, 48, 3)
    assert np.isfinite(sr).all()
    with pytest.raises(ValueError):
        rtcnet.infer(ck1, rand_img(12, 12, 42))
    with pytest.raises(ValueError):
        rtcnet.train(train_cfg(2, 4), str(tmp_path / "bad"), imgs)
    with pytest.raises(OSError):
        rtcnet.infer(str(tmp_path / "missing.ckpt"), rand_img(12, 12, 1))
