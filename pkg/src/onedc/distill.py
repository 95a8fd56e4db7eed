"""Latent-domain distillation objectives for stage II.

The generator descends the difference between the teacher's and the tracking
network's clean-latent predictions (both evaluated on the same noised sample)
through a stop-gradient surrogate; the tracking network follows the generator
with a plain denoising loss, and a small critic on its bottleneck features
supplies the adversarial terms.
"""

from __future__ import annotations

import torch
from torch import nn

from .diffusion import CondUNet, NoiseSchedule, add_noise, eps_to_x0
from .errors import ContractViolation
from .layers import _gn


def x0_prediction(net: CondUNet, x_t: torch.Tensor, t: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise-predicting network evaluated in clean-latent space."""
    return eps_to_x0(x_t, net(x_t, t), t, schedule)


def distill_surrogate_loss(
    y0: torch.Tensor,
    t: torch.Tensor,
    real_net: CondUNet,
    fake_net: CondUNet,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    normalize: bool = True,
) -> tuple[torch.Tensor, dict]:
    """Surrogate whose generator gradient is the score-difference direction.

    Both score networks are evaluated without gradients; the returned loss is
    mean(y0 * stopgrad(d / normalizer)) with d the fake-minus-real clean-latent
    prediction gap, so d(loss)/d(y0) equals d / (normalizer * numel).
    """
    with torch.no_grad():
        x_t, _ = add_noise(y0.detach(), t, schedule, generator=generator)
        x0_fake = x0_prediction(fake_net, x_t, t, schedule)
        x0_real = x0_prediction(real_net, x_t, t, schedule)
        d = x0_fake - x0_real
        if normalize:
            norm = (y0.detach() - x0_real).abs().mean(dim=(1, 2, 3), keepdim=True)
            d = d / norm.clamp_min(1e-3)
    loss = (y0 * d).mean()
    stats = {"d_abs": float(d.abs().mean())}
    return loss, stats


def fake_denoise_loss(
    y0: torch.Tensor,
    t: torch.Tensor,
    fake_net: CondUNet,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Denoising loss keeping the tracking network on the generator's output
    distribution. `y0` must be detached from the generator graph."""
    if y0.requires_grad:
        raise ContractViolation("tracking-network loss requires a detached target")
    x_t, _ = add_noise(y0, t, schedule, generator=generator)
    pred = x0_prediction(fake_net, x_t, t, schedule)
    return (pred - y0).pow(2).mean()


class DiscriminatorHead(nn.Module):
    """Timestep-conditioned critic over the tracking U-Net's mid features."""

    def __init__(self, in_channels: int, width: int = 128, temb_dim: int = 64):
        super().__init__()
        self.temb_dim = temb_dim
        self.temb = nn.Sequential(nn.Linear(temb_dim, width), nn.SiLU(), nn.Linear(width, width))
        self.conv1 = nn.Conv2d(in_channels, width, 3, padding=1)
        self.norm = _gn(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.out = nn.Linear(width, 1)

    def forward(self, feats: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        from .layers import timestep_embedding

        h = self.conv1(feats)
        h = h + self.temb(timestep_embedding(t, self.temb_dim))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm(h)))
        return self.out(h.mean(dim=(2, 3))).squeeze(-1)


def discriminator_losses(
    disc: DiscriminatorHead,
    fake_feats: torch.Tensor,
    real_feats: torch.Tensor,
    t: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(critic loss, generator adversarial loss).

    The critic minimizes mean(D(fake)) - mean(D(real)); the generator
    minimizes -mean(D(fake)).
    """
    score_fake = disc(fake_feats, t)
    score_real = disc(real_feats, t)
    l_disc = score_fake.mean() - score_real.mean()
    l_adv = -score_fake.mean()
    return l_disc, l_adv


def stage2_update_schedule(step: int, update_ratio: int = 10) -> dict[str, bool]:
    """Which parameter sets update at a given 1-based step.

    The tracking network and critic update every step; the generator updates
    once per `update_ratio` steps.
    """
    if step < 1:
        raise ContractViolation("steps are 1-based")
    return {"fake": True, "disc": True, "generator": step % update_ratio == 0}


def sample_t(
    batch: int,
    t_min: int,
    t_max: int,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Uniform timestep draw on [t_min, t_max], shared within the step."""
    return torch.randint(t_min, t_max + 1, (batch,), generator=generator)
