"""Compact convolutional autoencoder providing the 8x-downsampled latent space.

Trained in stage 0 as a stand-in for a large pretrained VAE; frozen
afterwards. `latent_scale` is calibrated post-training so encoded channels
have roughly unit standard deviation.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import ResBlock


class ToyAutoencoder(nn.Module):
    def __init__(self, widths: tuple[int, ...] = (32, 64, 128), latent_channels: int = 4):
        super().__init__()
        w = list(widths)
        self.latent_channels = latent_channels
        enc = [nn.Conv2d(3, w[0], 3, padding=1)]
        for i in range(len(w)):
            nxt = w[min(i + 1, len(w) - 1)]
            enc += [ResBlock(w[i]), nn.Conv2d(w[i], nxt, 3, stride=2, padding=1)]
        enc += [ResBlock(w[-1]), nn.Conv2d(w[-1], latent_channels, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        dec = [nn.Conv2d(latent_channels, w[-1], 3, padding=1), ResBlock(w[-1])]
        for i in reversed(range(len(w))):
            prev = w[min(i + 1, len(w) - 1)]
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(prev, w[i], 3, padding=1),
                ResBlock(w[i]),
            ]
        dec += [nn.Conv2d(w[0], 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)
        self.register_buffer("latent_scale", torch.ones(latent_channels))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x) / self.latent_scale[:, None, None]

    def decode(self, z: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        out = self.decoder(z * self.latent_scale[:, None, None])
        return out.clamp(0.0, 1.0) if clamp else out

    def calibrate(self, latents: torch.Tensor) -> None:
        """Set per-channel scale from raw encoder outputs so encode() is ~unit-std."""
        std = latents.transpose(0, 1).reshape(self.latent_channels, -1).std(dim=1)
        with torch.no_grad():
            self.latent_scale.copy_(std.clamp(1e-3))
