"""PSNR and MS-SSIM.

MS-SSIM follows the standard 5-scale weighting; for small inputs the scale
count shrinks so the 11-tap Gaussian window always fits (3 scales at 64 px)
and the leading weights are renormalized. The torch implementation is
differentiable and doubles as the structural half of the built-in perceptual
loss.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import ContractViolation

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW = 11
_SIGMA = 1.5
PSNR_CAP = 100.0


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over [0, 1] images, capped at 100."""
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def _gaussian_kernel(device, dtype) -> torch.Tensor:
    coords = torch.arange(_WINDOW, dtype=dtype, device=device) - (_WINDOW - 1) / 2
    g = torch.exp(-(coords**2) / (2 * _SIGMA**2))
    return g / g.sum()


def num_scales(height: int, width: int) -> int:
    """Largest scale count (<= 5) keeping the smallest pyramid level >= the
    11-px window."""
    n = 1
    while n < 5 and min(height, width) // (2**n) >= _WINDOW:
        n += 1
    return n


def _filter2d(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    kx = kernel.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = kernel.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    x = torch.nn.functional.conv2d(x, kx, groups=c)
    return torch.nn.functional.conv2d(x, ky, groups=c)


def _ssim_pair(x: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    k1, k2 = 0.01, 0.03
    c1, c2 = k1**2, k2**2
    kernel = _gaussian_kernel(x.device, x.dtype)
    mu_x = _filter2d(x, kernel)
    mu_y = _filter2d(y, kernel)
    sxx = _filter2d(x * x, kernel) - mu_x**2
    syy = _filter2d(y * y, kernel) - mu_y**2
    sxy = _filter2d(x * y, kernel) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    ssim = ((2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)) * cs
    return ssim.mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def ms_ssim_torch(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Differentiable MS-SSIM over (b, c, h, w) tensors in [0, 1]."""
    if x.shape != y.shape:
        raise ContractViolation(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    n = num_scales(x.shape[-2], x.shape[-1])
    weights = torch.tensor(MSSSIM_WEIGHTS[:n], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()
    vals = []
    for i in range(n):
        ssim, cs = _ssim_pair(x, y)
        vals.append(ssim.clamp_min(1e-6) if i == n - 1 else cs.clamp_min(1e-6))
        if i < n - 1:
            x = torch.nn.functional.avg_pool2d(x, 2)
            y = torch.nn.functional.avg_pool2d(y, 2)
    stacked = torch.stack(vals, dim=0)  # (n, b)
    return torch.prod(stacked ** weights[:, None], dim=0)


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """MS-SSIM for (h, w, c) numpy images in [0, 1]."""
    tx = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64)).permute(2, 0, 1)[None]
    ty = torch.from_numpy(np.ascontiguousarray(y, dtype=np.float64)).permute(2, 0, 1)[None]
    with torch.no_grad():
        return float(ms_ssim_torch(tx, ty)[0])


def _image_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return x[..., 1:, :] - x[..., :-1, :], x[..., :, 1:] - x[..., :, :-1]


class DefaultPerceptual(torch.nn.Module):
    """Built-in perceptual loss: MS-SSIM complement plus gradient-magnitude L1.

    Directional (reference first); self-contained so training never needs an
    external feature network. An external TorchScript metric can replace it
    through the plugin hook.
    """

    def forward(self, x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
        struct = 1.0 - ms_ssim_torch(x, x_hat).mean()
        gx, gy = _image_gradients(x)
        hx, hy = _image_gradients(x_hat)
        grad = (gx - hx).abs().mean() + (gy - hy).abs().mean()
        return struct + grad
