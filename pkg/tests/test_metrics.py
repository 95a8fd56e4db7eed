import numpy as np
import pytest
import torch
from scipy import ndimage
from scipy.stats import spearmanr

from onedc.errors import ContractViolation
from onedc.metrics import (
    MSSSIM_WEIGHTS,
    DefaultPerceptual,
    ms_ssim,
    ms_ssim_torch,
    num_scales,
    psnr,
)


def test_psnr_identity_capped(rng):
    img = rng.random((32, 32, 3))
    assert psnr(img, img) == 100.0


def test_psnr_known_mse():
    a = np.zeros((10, 10, 3))
    b = np.full((10, 10, 3), 0.1)  # mse = 0.01
    assert abs(psnr(a, b) - 20.0) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ContractViolation):
        psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


def test_msssim_identity(rng):
    img = rng.random((64, 64, 3))
    assert abs(ms_ssim(img, img) - 1.0) < 1e-9


def test_scale_count_rule():
    assert num_scales(64, 64) == 3  # 64 -> 32 -> 16; the 8px level cannot hold the window
    assert num_scales(128, 128) == 4
    assert num_scales(256, 256) == 5
    assert num_scales(512, 512) == 5  # capped at the standard 5
    assert num_scales(64, 256) == 3  # minimum edge governs


def _msssim_oracle(x: np.ndarray, y: np.ndarray) -> float:
    """Independent implementation with scipy's gaussian pyramid."""
    n = num_scales(x.shape[0], x.shape[1])
    weights = np.array(MSSSIM_WEIGHTS[:n])
    weights = weights / weights.sum()

    def ssim_cs(a, b):
        c1, c2 = 0.01**2, 0.03**2
        win = 11
        sigma = 1.5
        coords = np.arange(win) - (win - 1) / 2
        g = np.exp(-(coords**2) / (2 * sigma**2))
        g /= g.sum()

        def filt(img):
            out = np.stack(
                [
                    ndimage.correlate1d(
                        ndimage.correlate1d(img[..., c], g, axis=0, mode="constant"),
                        g, axis=1, mode="constant",
                    )
                    for c in range(img.shape[-1])
                ],
                axis=-1,
            )
            half = win // 2
            return out[half:-half, half:-half]

        mu_a, mu_b = filt(a), filt(b)
        saa = filt(a * a) - mu_a**2
        sbb = filt(b * b) - mu_b**2
        sab = filt(a * b) - mu_a * mu_b
        cs = (2 * sab + c2) / (saa + sbb + c2)
        ssim = ((2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)) * cs
        return float(ssim.mean()), float(cs.mean())

    vals = []
    for i in range(n):
        s, cs = ssim_cs(x, y)
        vals.append(max(s if i == n - 1 else cs, 1e-6))
        x = (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4
        y = (y[0::2, 0::2] + y[1::2, 0::2] + y[0::2, 1::2] + y[1::2, 1::2]) / 4
    return float(np.prod(np.array(vals) ** weights))


def test_msssim_matches_independent_pyramid(rng):
    base = rng.random((64, 64, 3))
    noisy = np.clip(base + rng.normal(0, 0.05, base.shape), 0, 1)
    mine = ms_ssim(base, noisy)
    oracle = _msssim_oracle(base, noisy)
    assert abs(mine - oracle) < 1e-6


def test_msssim_at_128px_uses_four_scales(rng):
    base = rng.random((128, 128, 3))
    noisy = np.clip(base + rng.normal(0, 0.03, base.shape), 0, 1)
    assert abs(ms_ssim(base, noisy) - _msssim_oracle(base, noisy)) < 1e-6


def test_default_perceptual_zero_on_identity(rng):
    x = torch.rand(1, 3, 64, 64)
    loss = DefaultPerceptual()(x, x.clone())
    assert abs(float(loss)) < 1e-6


def test_default_perceptual_differentiable(rng):
    x = torch.rand(1, 3, 64, 64)
    y = torch.rand(1, 3, 64, 64, requires_grad=True)
    DefaultPerceptual()(x, y).backward()
    assert y.grad is not None and torch.isfinite(y.grad).all()


def test_default_perceptual_blur_ladder_correlates_with_mse(rng):
    # progressively blurred copies must rank the same under both measures
    base = rng.random((64, 64, 3)).astype(np.float32)
    perc = DefaultPerceptual()
    mses, percs = [], []
    for sigma in (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0):
        blurred = np.stack([ndimage.gaussian_filter(base[..., c], sigma) for c in range(3)], -1)
        mses.append(float(((blurred - base) ** 2).mean()))
        tx = torch.from_numpy(base).permute(2, 0, 1)[None]
        ty = torch.from_numpy(blurred.astype(np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            percs.append(float(perc(tx, ty)))
    rho = spearmanr(mses, percs).statistic
    assert rho > 0.9
