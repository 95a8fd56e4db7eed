"""Analysis transform, scalar quantizer with straight-through gradients, and
the synthesis transform that seeds the one-step generator."""

from __future__ import annotations

import torch
from torch import nn

from .errors import ContractViolation
from .layers import Downsample, ResBlock, Upsample


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    """Element-wise round with halves away from zero (0.5 -> 1, -0.5 -> -1).

    Fixed tie rule so coded streams are reproducible across platforms;
    torch.round would round halves to even.
    """
    return torch.sign(x) * torch.floor(x.abs() + 0.5)


def quantize_ste(
    y: torch.Tensor, mode: str = "hard", generator: torch.Generator | None = None
) -> torch.Tensor:
    """Quantize the latent for training.

    hard: integer rounding with an identity backward pass.
    noise: additive Uniform(-1/2, 1/2), the rate-term proxy.
    """
    if mode == "hard":
        return y + (round_half_away(y) - y).detach()
    if mode == "noise":
        u = torch.empty_like(y).uniform_(-0.5, 0.5, generator=generator)
        return y + u
    raise ContractViolation(f"unknown quantization mode {mode!r}")


class AnalysisTransform(nn.Module):
    """g_a: image plus its autoencoder latent -> unquantized code grid at 1/16.

    A strided stem brings pixels to 1/8 resolution where the latent-space
    features are concatenated; a small U-Net then aggregates context down to
    1/64 and back up to the 1/16 output grid.
    """

    def __init__(
        self,
        y_channels: int = 16,
        latent_channels: int = 4,
        widths: tuple[int, ...] = (32, 64, 128, 128),
    ):
        super().__init__()
        w0, w1, w2, w3 = widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w0, 5, stride=2, padding=2),
            nn.SiLU(),
            nn.Conv2d(w0, w0, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w0, w1, 3, stride=2, padding=1),
        )
        self.fuse = nn.Conv2d(w1 + latent_channels, w0, 3, padding=1)
        # U-Net over 1/8 .. 1/64 resolutions
        self.enc0 = ResBlock(w0)
        self.down0 = Downsample(w0)
        self.enc1 = ResBlock(w0, w1)
        self.down1 = Downsample(w1)
        self.enc2 = ResBlock(w1, w2)
        self.down2 = Downsample(w2)
        self.mid = ResBlock(w2, w3)
        self.up2 = Upsample(w3)
        self.dec2 = ResBlock(w3 + w2, w2)
        self.up1 = Upsample(w2)
        self.dec1 = ResBlock(w2 + w1, w1)
        self.head = nn.Conv2d(w1, y_channels, 3, padding=1)
        # start near zero so fresh latents sit well inside the coder's range
        nn.init.zeros_(self.head.bias)
        with torch.no_grad():
            self.head.weight.mul_(0.1)

    def forward(self, img: torch.Tensor, vae_latent: torch.Tensor) -> torch.Tensor:
        if img.shape[-1] % 64 or img.shape[-2] % 64:
            raise ContractViolation(
                f"image extent {tuple(img.shape[-2:])} must be a multiple of 64"
            )
        if (img.shape[-2] // 8, img.shape[-1] // 8) != vae_latent.shape[-2:]:
            raise ContractViolation(
                f"latent extent {tuple(vae_latent.shape[-2:])} does not match "
                f"image {tuple(img.shape[-2:])} at 1/8 resolution"
            )
        h = self.stem(img)
        h = self.fuse(torch.cat([h, vae_latent], dim=1))
        e0 = self.enc0(h)                 # 1/8
        e1 = self.enc1(self.down0(e0))    # 1/16
        e2 = self.enc2(self.down1(e1))    # 1/32
        m = self.mid(self.down2(e2))      # 1/64
        d2 = self.dec2(torch.cat([self.up2(m), e2], dim=1))   # 1/32
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))  # 1/16
        return self.head(d1)


class SynthesisTransform(nn.Module):
    """g_s: quantized latent at 1/16 -> initial generator latent at 1/8."""

    def __init__(self, y_channels: int = 16, latent_channels: int = 4, width: int = 64):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(y_channels, width, 3, padding=1),
            ResBlock(width),
            ResBlock(width),
        )
        self.up = Upsample(width)
        self.head = nn.Sequential(ResBlock(width), nn.Conv2d(width, latent_channels, 3, padding=1))

    def forward(self, y_hat: torch.Tensor) -> torch.Tensor:
        return self.head(self.up(self.body(y_hat)))
