"""Auxiliary code-prediction pathway (training-time only).

A windowed-attention transformer maps hyper guidance tokens to logits over
the tokenizer codebook; cross-entropy against the tokenizer's assignments
distills its semantics into the hyper branch. Excluded from deployment
checkpoints.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ContractViolation
from .layers import InterpolatedPosEmbed


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window: int, head_dim: int, shift: int):
        super().__init__()
        self.window = window
        self.shift = shift
        self.heads = max(1, dim // head_dim)
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (b, c, h, w); h and w are multiples of the window size
        b, c, h, w = x.shape
        win = self.window
        shift = self.shift % win if min(h, w) > win else 0
        feats = x.permute(0, 2, 3, 1)
        if shift:
            feats = torch.roll(feats, (-shift, -shift), dims=(1, 2))
        t = feats.view(b, h // win, win, w // win, win, c)
        t = t.permute(0, 1, 3, 2, 4, 5).reshape(-1, win * win, c)
        y = self.norm(t)
        q, k, v = self.qkv(y).chunk(3, dim=-1)

        def split(z):
            return z.view(z.shape[0], -1, self.heads, c // self.heads).transpose(1, 2)

        att = torch.nn.functional.scaled_dot_product_attention(split(q), split(k), split(v))
        att = att.transpose(1, 2).reshape(-1, win * win, c)
        t = t + self.proj(att)
        t = t + self.mlp(self.norm2(t))
        t = t.view(b, h // win, w // win, win, win, c).permute(0, 1, 3, 2, 4, 5)
        feats = t.reshape(b, h, w, c)
        if shift:
            feats = torch.roll(feats, (shift, shift), dims=(1, 2))
        return feats.permute(0, 3, 1, 2)


class CodePredictor(nn.Module):
    """Guidance tokens -> logits over tokenizer indices at 1/16 resolution.

    The learned 4x upsampling is per-source-position (stride-4 transposed
    conv), so before the positional embedding the mapping is equivariant to
    permutations of the 1/64 grid cells.
    """

    def __init__(
        self,
        sem_dim: int = 256,
        codebook_size: int = 512,
        width: int = 128,
        depth: int = 4,
        window: int = 4,
        head_dim: int = 64,
    ):
        super().__init__()
        self.codebook_size = codebook_size
        self.window = window
        self.upsample = nn.ConvTranspose2d(sem_dim, width, kernel_size=4, stride=4)
        self.pos = InterpolatedPosEmbed(width)
        # alternate plain and shifted windows
        self.blocks = nn.ModuleList(
            WindowAttention(width, window, head_dim, shift=(window // 2) * (i % 2))
            for i in range(depth)
        )
        self.head = nn.Conv2d(width, codebook_size, 1)

    def upsample_tokens(self, tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        """Pre-positional stage: tokens back to a grid, learned 4x upsample."""
        b, n, d = tokens.shape
        h, w = grid
        if n != h * w:
            raise ContractViolation(f"{n} tokens cannot fill a {h}x{w} grid")
        return self.upsample(tokens.transpose(1, 2).reshape(b, d, h, w))

    def forward(self, tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        feats = self.upsample_tokens(tokens, grid)
        feats = feats + self.pos(feats.shape[-2], feats.shape[-1])
        pad_h = (-feats.shape[-2]) % self.window
        pad_w = (-feats.shape[-1]) % self.window
        if pad_h or pad_w:
            feats = torch.nn.functional.pad(feats, (0, pad_w, 0, pad_h))
        for block in self.blocks:
            feats = block(feats)
        if pad_h or pad_w:
            feats = feats[..., : feats.shape[-2] - pad_h, : feats.shape[-1] - pad_w]
        return self.head(feats)


def aux_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy between predicted logits (b, K, h, w) and the
    tokenizer's index grid (b, h, w)."""
    if logits.shape[0] != targets.shape[0] or logits.shape[-2:] != targets.shape[-2:]:
        raise ContractViolation(
            f"logit grid {tuple(logits.shape)} does not match targets {tuple(targets.shape)}"
        )
    if int(targets.max()) >= logits.shape[1]:
        raise ContractViolation(
            f"target index {int(targets.max())} outside codebook of {logits.shape[1]}"
        )
    return torch.nn.functional.cross_entropy(logits, targets)


def top1_accuracy(logits: torch.Tensor, targets: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == targets).float().mean())
