"""Shared network building blocks: resblocks, attention, LoRA, time embedding."""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ContractViolation


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int | None = None, temb_dim: int | None = None):
        super().__init__()
        out_ch = out_ch or in_ch
        self.norm1 = _gn(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _gn(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch) if temb_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        if self.temb_proj is not None and temb is not None:
            h = h + self.temb_proj(self.act(temb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class LoraLinear(nn.Module):
    """Linear layer with a trainable low-rank delta on a (possibly frozen) base.

    The up-projection starts at zero, so a freshly adapted network computes
    exactly what its base does.
    """

    def __init__(self, in_features: int, out_features: int, rank: int, scale: float = 1.0, bias: bool = True):
        super().__init__()
        if rank < 1:
            raise ContractViolation(f"LoRA rank must be >= 1, got {rank}")
        if rank > min(in_features, out_features):
            raise ContractViolation(
                f"LoRA rank {rank} exceeds min matrix dim {min(in_features, out_features)}"
            )
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.down = nn.Linear(in_features, rank, bias=False)
        self.up = nn.Linear(rank, out_features, bias=False)
        self.scale = scale
        nn.init.kaiming_uniform_(self.down.weight, a=math.sqrt(5))
        nn.init.zeros_(self.up.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * self.up(self.down(x))

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.scale * (self.up.weight @ self.down.weight)

    def merge(self) -> nn.Linear:
        """Fold the low-rank delta into a plain Linear."""
        out = nn.Linear(self.base.in_features, self.base.out_features, self.base.bias is not None)
        with torch.no_grad():
            out.weight.copy_(self.merged_weight())
            if self.base.bias is not None:
                out.bias.copy_(self.base.bias)
        return out


def make_linear(in_f: int, out_f: int, rank: int | None, scale: float = 1.0, bias: bool = True) -> nn.Module:
    if rank:
        return LoraLinear(in_f, out_f, rank, scale, bias=bias)
    return nn.Linear(in_f, out_f, bias=bias)


def _linear_weight(mod: nn.Module) -> nn.Linear:
    return mod.base if isinstance(mod, LoraLinear) else mod


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, heads: int = 4, rank: int | None = None, scale: float = 1.0):
        super().__init__()
        self.heads = heads
        self.norm = _gn(channels)
        self.qkv = make_linear(channels, channels * 3, rank, scale)
        self.out = make_linear(channels, channels, rank, scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        flat = self.norm(x).flatten(2).transpose(1, 2)  # (b, hw, c)
        q, k, v = self.qkv(flat).chunk(3, dim=-1)
        q = q.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        k = k.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        v = v.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        att = torch.nn.functional.scaled_dot_product_attention(q, k, v)
        att = att.transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(att).transpose(1, 2).view(b, c, h, w)


class CrossAttention2d(nn.Module):
    """Spatial queries attend to a token sequence; output projection starts at
    zero so conditioning is inert until trained."""

    def __init__(self, channels: int, cond_dim: int, heads: int = 4, rank: int | None = None, scale: float = 1.0):
        super().__init__()
        self.heads = heads
        self.norm = _gn(channels)
        self.to_q = make_linear(channels, channels, rank, scale, bias=False)
        self.to_k = make_linear(cond_dim, channels, rank, scale, bias=False)
        self.to_v = make_linear(cond_dim, channels, rank, scale, bias=False)
        self.out = make_linear(channels, channels, rank, scale)
        nn.init.zeros_(_linear_weight(self.out).weight)
        nn.init.zeros_(_linear_weight(self.out).bias)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        q = q.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        k = k.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        v = v.view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        att = torch.nn.functional.scaled_dot_product_attention(q, k, v)
        att = att.transpose(1, 2).reshape(b, h * w, c)
        return x + self.out(att).transpose(1, 2).view(b, c, h, w)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: int = 10000) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32) / half
    ).to(t.device)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(torch.nn.functional.interpolate(x, scale_factor=2, mode="nearest"))


class InterpolatedPosEmbed(nn.Module):
    """Learned 2-D positional grid, bilinearly resized to the working extent."""

    def __init__(self, dim: int, grid: int = 16):
        super().__init__()
        self.grid = nn.Parameter(torch.zeros(1, dim, grid, grid))
        nn.init.trunc_normal_(self.grid, std=0.02)

    def forward(self, h: int, w: int) -> torch.Tensor:
        if (h, w) == self.grid.shape[-2:]:
            return self.grid
        return torch.nn.functional.interpolate(
            self.grid, size=(h, w), mode="bilinear", align_corners=False
        )
