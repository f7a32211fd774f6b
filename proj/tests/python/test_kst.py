import math

import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

import kst


def numpy_centered_fft(x):
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


@pytest.mark.parametrize("shape", [(2, 2), (4, 8), (16, 16), (8, 32)])
def test_fft_matches_numpy(shape):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    np.testing.assert_allclose(kst.fft2_centered(x), numpy_centered_fft(x), atol=1e-12)
    np.testing.assert_allclose(kst.ifft2_centered(kst.fft2_centered(x)), x, atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        kst.fft2_centered(np.zeros((6, 8), dtype=complex))


def test_phantom_spectrogram_is_its_transform():
    image, spec = kst.phantom(32, 32, seed=1, index=4)
    assert image.shape == (32, 32)
    assert np.abs(image).max() <= 1.0 + 1e-12
    np.testing.assert_allclose(spec, numpy_centered_fft(image), atol=1e-12)


def test_uniform_mask_columns_and_acceleration():
    mask = kst.uniform_1d_mask(64, 64, acceleration=2.5)
    assert mask.dtype == np.uint8
    assert (mask == mask[0:1, :]).all()
    assert mask[32, 32] == 1
    assert math.isclose(kst.acceleration(mask), mask.size / mask.sum())
    assert abs(kst.acceleration(mask) - 2.5) <= 0.25
    assert kst.uniform_1d_mask(8, 8, acceleration=1.0).all()


def test_gaussian_mask_is_seeded():
    a = kst.gaussian_2d_mask(32, 32, acceleration=5.0, seed=3)
    b = kst.gaussian_2d_mask(32, 32, acceleration=5.0, seed=3)
    np.testing.assert_array_equal(a, b)
    assert a[16, 16] == 1


def test_psnr_and_ssim_match_skimage():
    rng = np.random.default_rng(1)
    ref = np.abs(kst.phantom(32, 32, seed=2, index=0)[0])
    x = np.clip(ref + 0.05 * rng.standard_normal(ref.shape), 0, None)
    peak = ref.max()
    assert math.isclose(kst.psnr(x, ref), peak_signal_noise_ratio(ref, x, data_range=peak), rel_tol=1e-10)
    want = structural_similarity(ref, x, data_range=peak, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)
    assert abs(kst.ssim(x, ref) - want) < 1e-8
    assert kst.psnr(ref, ref) == math.inf


def test_cost_formulas():
    std = kst.cost_standard(m=4096, n=819, d=64, layers=5)
    assert std["self"] == 5 * 4096 * 4096
    assert std["cross"] == 5 * 4096 * 819
    hier = kst.cost_hierarchical(m=4096, n=819, l=256, d=64, lr_layers=2, hr_layers=3)
    assert hier["total"] == 2 * (256 * 819 + 256 * 256) + 3 * 4096 * 256
    assert hier["total"] < std["total"]


def tiny_config():
    cfg = kst.default_config()
    cfg["model"].update(d=16, n_heads=2, ffn_width=32, hr_height=16, hr_width=16, lr_height=4,
                        lr_width=4, refine_channels=4, refine_depth=3)
    cfg["train"].update(epochs=2, hr_grad_stop_epochs=1)
    cfg["data"].update(train_count=2, height=16, width=16)
    return cfg


def test_train_checkpoint_and_reconstruct(tmp_path):
    ckpt, losses = kst.train(tiny_config())
    assert len(losses) == 4
    assert all(math.isfinite(v) for v in losses)
    assert ckpt.step == 4
    assert ckpt.model_config["d"] == 16

    path = tmp_path / "model.kckpt"
    ckpt.save(str(path))
    again = kst.Checkpoint.load(str(path))
    assert again.to_bytes() == ckpt.to_bytes() == path.read_bytes()

    _, spec = kst.phantom(16, 16, seed=1, index=1000000)
    mask = kst.uniform_1d_mask(16, 16)
    out = again.reconstruct(spec, mask)
    assert out["image"].shape == (16, 16)
    assert len(out["layers"]) == 3
    np.testing.assert_allclose(out["zero_filled"], np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(spec * mask), norm="ortho")), atol=1e-12)


def test_train_is_deterministic():
    a, la = kst.train(tiny_config())
    b, lb = kst.train(tiny_config())
    assert la == lb
    assert a.to_bytes() == b.to_bytes()


def test_bad_inputs_raise():
    with pytest.raises(kst.FormatError):
        kst.Checkpoint.from_bytes(b"not a checkpoint")
    with pytest.raises(kst.FormatError):
        kst.train({"no_such_key": 1})
