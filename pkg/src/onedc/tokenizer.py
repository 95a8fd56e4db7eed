"""Vector-quantized tokenizer used as the semantic teacher.

Produces one codebook index per 1/16-resolution position. Only the encoder
and codebook matter downstream; the decoder exists for asset-quality checks.
"""

from __future__ import annotations

import torch
from torch import nn

from .layers import ResBlock


class VQTokenizer(nn.Module):
    def __init__(self, codebook_size: int = 512, dim: int = 64, width: int = 64):
        super().__init__()
        self.codebook_size = codebook_size
        self.encoder = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1),
            ResBlock(width),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            ResBlock(width),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            ResBlock(width),
            nn.Conv2d(width, dim, 3, stride=2, padding=1),
        )
        self.codebook = nn.Embedding(codebook_size, dim)
        nn.init.uniform_(self.codebook.weight, -1.0 / codebook_size, 1.0 / codebook_size)
        self.decoder = nn.Sequential(
            nn.Conv2d(dim, width, 3, padding=1),
            *[m for _ in range(4) for m in (ResBlock(width), nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(width, width, 3, padding=1))],
            ResBlock(width),
            nn.Conv2d(width, 3, 3, padding=1),
        )

    def assign(self, feats: torch.Tensor) -> torch.Tensor:
        """Nearest codebook row per position; ties resolve to the lowest index
        (argmin returns the first minimum)."""
        b, d, h, w = feats.shape
        flat = feats.permute(0, 2, 3, 1).reshape(-1, d)
        dists = (
            flat.pow(2).sum(1, keepdim=True)
            - 2 * flat @ self.codebook.weight.t()
            + self.codebook.weight.pow(2).sum(1)[None]
        )
        return dists.argmin(dim=1).view(b, h, w)

    def tokenize(self, x: torch.Tensor) -> torch.Tensor:
        """Image -> integer grid at 1/16 resolution."""
        return self.assign(self.encoder(x))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Training pass: reconstruction plus the two VQ regularizers."""
        feats = self.encoder(x)
        idx = self.assign(feats)
        quant = self.codebook(idx).permute(0, 3, 1, 2)
        codebook_loss = (quant - feats.detach()).pow(2).mean()
        commit_loss = (feats - quant.detach()).pow(2).mean()
        quant_ste = feats + (quant - feats).detach()
        recon = self.decoder(quant_ste)
        return recon, codebook_loss, commit_loss
