"""One-step generator, DDPM noise schedule, and the teacher's multi-step sampler.

The generator is a conditional U-Net that outputs the clean latent directly
(x0-parameterization). The teacher and the tracking ("fake") network are
noise predictors; conversion helpers map between the two conventions.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation
from .layers import (
    CrossAttention2d,
    Downsample,
    LoraLinear,
    ResBlock,
    SelfAttention2d,
    Upsample,
    timestep_embedding,
)


class NoiseSchedule:
    """Linear-beta DDPM schedule with the alpha^2 + sigma^2 = 1 convention."""

    def __init__(self, timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        self.timesteps = timesteps
        self.betas = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64)
        self.alphas_cumprod = torch.cumprod(1.0 - self.betas, dim=0)
        self.sqrt_ac = self.alphas_cumprod.sqrt().float()
        self.sqrt_1mac = (1.0 - self.alphas_cumprod).sqrt().float()

    def _check(self, t: torch.Tensor) -> None:
        if t.min() < 0 or t.max() >= self.timesteps:
            raise ContractViolation(f"timesteps must lie in [0, {self.timesteps})")

    def coeffs(self, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check(t)
        return self.sqrt_ac[t][:, None, None, None], self.sqrt_1mac[t][:, None, None, None]


def add_noise(
    x0: torch.Tensor,
    t: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward-diffuse x0 to timestep t. Returns (x_t, the noise used)."""
    if noise is None:
        noise = torch.empty_like(x0).normal_(generator=generator)
    a, s = schedule.coeffs(t)
    return a * x0 + s * noise, noise


def eps_to_x0(x_t: torch.Tensor, eps: torch.Tensor, t: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    a, s = schedule.coeffs(t)
    return (x_t - s * eps) / a


def x0_to_eps(x_t: torch.Tensor, x0: torch.Tensor, t: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    a, s = schedule.coeffs(t)
    return (x_t - a * x0) / s


class CondUNet(nn.Module):
    """Small U-Net with timestep conditioning and optional cross-attention.

    Cross-attention sits at the two coarsest levels and the bottleneck. With
    cond_dim=None the network is unconditional (teacher / fake nets). When a
    LoRA rank is given, every linear projection carries a low-rank adapter.
    """

    def __init__(
        self,
        channels: int = 4,
        widths: tuple[int, ...] = (64, 128, 256),
        cond_dim: int | None = None,
        lora_rank: int | None = None,
        lora_scale: float = 1.0,
    ):
        super().__init__()
        self.cond_dim = cond_dim
        w = list(widths)
        temb_dim = w[0] * 4
        self.temb_dim = w[0]
        self.time_mlp = nn.Sequential(nn.Linear(w[0], temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        self.stem = nn.Conv2d(channels, w[0], 3, padding=1)

        def xattn(ch):
            return CrossAttention2d(ch, cond_dim, heads=max(1, ch // 64), rank=lora_rank, scale=lora_scale)

        self.num_levels = len(w)
        self.widths = w
        attn_levels = set(range(max(0, len(w) - 2), len(w)))  # two coarsest
        self.down_blocks = nn.ModuleList(
            ResBlock(w[max(i - 1, 0)], ch, temb_dim) for i, ch in enumerate(w)
        )
        self.down_xattn = nn.ModuleDict(
            {str(i): xattn(w[i]) for i in attn_levels if cond_dim}
        )
        self.downs = nn.ModuleDict(
            {str(i): Downsample(w[i]) for i in range(len(w) - 1)}
        )

        self.mid1 = ResBlock(w[-1], w[-1], temb_dim)
        self.mid_attn = SelfAttention2d(w[-1], heads=max(1, w[-1] // 64), rank=lora_rank, scale=lora_scale)
        self.mid_xattn = xattn(w[-1]) if cond_dim else None
        self.mid2 = ResBlock(w[-1], w[-1], temb_dim)

        self.up_blocks = nn.ModuleList(
            ResBlock((w[i + 1] if i < len(w) - 1 else w[i]) + w[i], w[i], temb_dim)
            for i in reversed(range(len(w)))
        )
        self.up_xattn = nn.ModuleDict(
            {str(i): xattn(w[i]) for i in attn_levels if cond_dim}
        )
        self.ups = nn.ModuleDict(
            {str(i): Upsample(w[i + 1]) for i in range(len(w) - 1)}
        )

        self.out_norm = nn.GroupNorm(8, w[0])
        self.head = nn.Conv2d(w[0], channels, 3, padding=1)

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        tokens: torch.Tensor | None = None,
        return_mid: bool = False,
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        if self.cond_dim is not None and tokens is None:
            raise ContractViolation("conditional network called without tokens")
        if tokens is not None and tokens.shape[0] != x.shape[0]:
            raise ContractViolation("token batch does not match latent batch")
        temb = self.time_mlp(timestep_embedding(t, self.temb_dim))
        h = self.stem(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, temb)
            if str(i) in self.down_xattn:
                h = self.down_xattn[str(i)](h, tokens)
            skips.append(h)
            if str(i) in self.downs:
                h = self.downs[str(i)](h)
        h = self.mid1(h, temb)
        h = self.mid_attn(h)
        if self.mid_xattn is not None:
            h = self.mid_xattn(h, tokens)
        mid = h
        h = self.mid2(h, temb)
        for block, i in zip(self.up_blocks, reversed(range(self.num_levels))):
            if str(i) in self.ups:
                h = self.ups[str(i)](h)
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
            if str(i) in self.up_xattn:
                h = self.up_xattn[str(i)](h, tokens)
        out = self.head(torch.nn.functional.silu(self.out_norm(h)))
        return (out, mid) if return_mid else out

    def load_backbone(self, source: "CondUNet") -> None:
        """Copy weights from an (unconditional) twin; LoRA bases receive the
        plain linears, cross-attention blocks keep their fresh init."""
        own = dict(self.named_parameters())
        for name, param in source.named_parameters():
            target = name
            if target not in own:
                parts = name.rsplit(".", 2)
                cand = f"{parts[0]}.{parts[1]}.base.{parts[2]}" if len(parts) == 3 else None
                if cand in own:
                    target = cand
                else:
                    continue
            if own[target].shape == param.shape:
                with torch.no_grad():
                    own[target].copy_(param)


def one_step_generate(
    unet: CondUNet,
    y_t: torch.Tensor,
    tokens: torch.Tensor,
    t_gen: int,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Single forward pass producing the clean latent directly."""
    if not 0 <= t_gen < schedule.timesteps:
        raise ContractViolation(f"t_gen {t_gen} outside [0, {schedule.timesteps})")
    t = torch.full((y_t.shape[0],), t_gen, dtype=torch.long, device=y_t.device)
    return unet(y_t, t, tokens)


def lora_parameters(module: nn.Module):
    for mod in module.modules():
        if isinstance(mod, LoraLinear):
            yield from mod.down.parameters()
            yield from mod.up.parameters()


def merge_lora(module: nn.Module) -> nn.Module:
    """Return a copy of the module with every LoRA delta folded into its base."""
    import copy

    merged = copy.deepcopy(module)
    for name, mod in list(merged.named_modules()):
        for child_name, child in list(mod.named_children()):
            if isinstance(child, LoraLinear):
                setattr(mod, child_name, child.merge())
    return merged


class DdimSampler:
    """Deterministic multi-step sampler for the noise-predicting teacher."""

    def __init__(self, schedule: NoiseSchedule, steps: int):
        if steps < 1 or steps > schedule.timesteps:
            raise ContractViolation(f"sampler steps {steps} invalid")
        self.schedule = schedule
        self.ts = np.linspace(schedule.timesteps - 1, 0, steps).round().astype(np.int64)

    @torch.no_grad()
    def sample(
        self,
        net: CondUNet,
        shape: tuple[int, ...],
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        x = torch.empty(shape).normal_(generator=generator)
        for i, t_now in enumerate(self.ts):
            t = torch.full((shape[0],), int(t_now), dtype=torch.long)
            eps = net(x, t)
            x0 = eps_to_x0(x, eps, t, self.schedule)
            if i + 1 < len(self.ts):
                t_next = torch.full((shape[0],), int(self.ts[i + 1]), dtype=torch.long)
                a, s = self.schedule.coeffs(t_next)
                x = a * x0 + s * eps
            else:
                x = x0
        return x
