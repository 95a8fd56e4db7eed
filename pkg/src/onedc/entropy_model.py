"""Conditional discretized-Gaussian entropy model with four quadtree-style passes.

The latent grid is partitioned by (row % 2, col % 2) into passes ordered
[(0,0), (1,1), (0,1), (1,0)]. Each pass's Gaussian parameters are predicted
from the hyper context plus a masked view of already-decoded positions, so
parameters never depend on values the decoder has not yet recovered.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation
from .rans import NUM_SYMBOLS, PROB_SCALE, SYMBOL_MIN, CdfTable

SCALE_FLOOR = 0.11
PASS_PHASES = ((0, 0), (1, 1), (0, 1), (1, 0))
_LIKELIHOOD_FLOOR = 1e-12
_QUANT = 1e-4  # fixed-point rounding of (mean, scale) before table building


def pass_schedule(h16: int, w16: int) -> list[np.ndarray]:
    """Boolean position masks for the four coding passes (disjoint, exhaustive)."""
    if h16 < 1 or w16 < 1:
        raise ContractViolation(f"grid {h16}x{w16} must be at least 1x1")
    rows = np.arange(h16)[:, None]
    cols = np.arange(w16)[None, :]
    return [((rows % 2 == pr) & (cols % 2 == pc)) for pr, pc in PASS_PHASES]


def _phi(x) -> np.ndarray:
    """Standard normal CDF (vectorized, float64)."""
    arr = np.asarray(x, dtype=np.float64) / math.sqrt(2.0)
    return 0.5 * (1.0 + torch.erf(torch.from_numpy(np.atleast_1d(arr))).numpy().reshape(arr.shape))


def discretized_gaussian_pmf(mean: float, scale: float, k: int) -> float:
    """Probability of integer symbol k under the tail-folded discretized Gaussian.

    Interior symbols integrate the density over (k-1/2, k+1/2]; the extreme
    symbols of the coding range absorb their tails.
    """
    if scale < SCALE_FLOOR:
        raise ContractViolation(f"scale {scale} below floor {SCALE_FLOOR}")
    upper = _phi(np.array((k - mean + 0.5) / scale))
    lower = _phi(np.array((k - mean - 0.5) / scale))
    if k <= SYMBOL_MIN:
        lower = 0.0
    if k >= SYMBOL_MIN + NUM_SYMBOLS - 1:
        upper = 1.0
    return float(upper - lower)


def likelihood(values: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Differentiable mass of the unit-width bin centred on each value."""
    inv = 1.0 / (scale * math.sqrt(2.0))
    upper = 0.5 * (1.0 + torch.erf((values - mean + 0.5) * inv))
    lower = 0.5 * (1.0 + torch.erf((values - mean - 0.5) * inv))
    return (upper - lower).clamp_min(_LIKELIHOOD_FLOOR)


def rate_estimate(values: torch.Tensor, mean: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """Total bits to code `values` under the predicted Gaussians.

    During training `values` is the noise-proxied latent; at evaluation time
    the same estimator applied to the coded integers gives the model's rate
    prediction for an actual stream.
    """
    return -torch.log2(likelihood(values, mean, scale)).sum()


def _quantize_fixed(x: np.ndarray) -> np.ndarray:
    # half-up at 1e-4 so both codec endpoints derive identical tables
    return np.floor(x / _QUANT + 0.5) * _QUANT


def build_cdf_batch(means: np.ndarray, scales: np.ndarray) -> list[CdfTable]:
    """Quantized 16-bit CDF tables over [-64, 63] for each (mean, scale) pair.

    Bin masses are renormalized over the symbol range, every symbol keeps at
    least one count, and the remainder is distributed largest-fraction-first
    (ties to the lower symbol) so the construction is deterministic.
    """
    means = _quantize_fixed(np.asarray(means, dtype=np.float64).ravel())
    scales = _quantize_fixed(np.asarray(scales, dtype=np.float64).ravel())
    n = means.shape[0]
    ks = np.arange(SYMBOL_MIN, SYMBOL_MIN + NUM_SYMBOLS, dtype=np.float64)
    upper = _phi((ks[None, :] + 0.5 - means[:, None]) / scales[:, None])
    lower = _phi((ks[None, :] - 0.5 - means[:, None]) / scales[:, None])
    pmf = np.maximum(upper - lower, 0.0)
    pmf /= pmf.sum(axis=1, keepdims=True)

    budget = PROB_SCALE - NUM_SYMBOLS
    raw = pmf * budget
    base = np.floor(raw).astype(np.int64)
    frac = raw - base
    short = budget - base.sum(axis=1)
    order = np.argsort(-frac, axis=1, kind="stable")
    tables = []
    for i in range(n):
        counts = base[i] + 1
        counts[order[i, : short[i]]] += 1
        cdf = np.zeros(NUM_SYMBOLS + 1, dtype=np.int64)
        np.cumsum(counts, out=cdf[1:])
        tables.append(CdfTable(SYMBOL_MIN, cdf))
    return tables


def build_cdf(mean: float, scale: float) -> CdfTable:
    return build_cdf_batch(np.array([mean]), np.array([scale]))[0]


class ContextState:
    """Decoder-visible state between passes: hyper context plus the mask and
    values of everything recovered so far."""

    def __init__(self, hyper: torch.Tensor, y_channels: int):
        _, _, h, w = hyper.shape
        self.hyper = hyper
        self.decoded_mask = np.zeros((h, w), dtype=bool)
        self.decoded = hyper.new_zeros((hyper.shape[0], y_channels, h, w))

    def absorb(self, pass_mask: np.ndarray, values: torch.Tensor) -> None:
        sel = torch.from_numpy(pass_mask)[None, None].expand_as(self.decoded)
        self.decoded = torch.where(sel, values, self.decoded)
        self.decoded_mask = self.decoded_mask | pass_mask


class ParamPredictor(nn.Module):
    """Predicts per-element Gaussian (mean, scale) for one coding pass.

    Undecoded positions enter as exact zeros (values multiplied by the mask),
    which is what enforces coding causality.
    """

    def __init__(self, y_channels: int, ctx_channels: int, width: int):
        super().__init__()
        self.y_channels = y_channels
        in_ch = ctx_channels + y_channels + 1
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, width, 5, padding=2),
            nn.GELU(),
            nn.Conv2d(width, width, 5, padding=2),
            nn.GELU(),
            nn.Conv2d(width, 2 * y_channels, 1),
        )

    def forward(
        self, hyper: torch.Tensor, decoded: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        inp = torch.cat([hyper, decoded * mask, mask], dim=1)
        out = self.net(inp)
        mean, raw_scale = out.chunk(2, dim=1)
        scale = SCALE_FLOOR + torch.nn.functional.softplus(raw_scale)
        return mean, scale


def predict_params(
    predictor: ParamPredictor,
    hyper: torch.Tensor,
    decoded_values: torch.Tensor,
    decoded_mask: np.ndarray,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(mean, scale) over the full grid given the currently decoded positions."""
    mask = torch.from_numpy(decoded_mask.astype(np.float32))[None, None]
    mask = mask.to(hyper.dtype).expand(hyper.shape[0], 1, -1, -1)
    return predictor(hyper, decoded_values, mask)


def training_rate(
    predictor: ParamPredictor,
    hyper: torch.Tensor,
    y_hard: torch.Tensor,
    y_rate: torch.Tensor,
) -> torch.Tensor:
    """Total coded-bit estimate for a batch, accumulated over the four passes.

    Spatial context is teacher-forced with the hard-quantized latent (what the
    decoder will actually have); the rate itself is evaluated on `y_rate`,
    the noise-proxied latent.
    """
    b, _, h, w = y_hard.shape
    masks = pass_schedule(h, w)
    total = y_hard.new_zeros(())
    decoded_mask = np.zeros((h, w), dtype=bool)
    for pass_mask in masks:
        mean, scale = predict_params(predictor, hyper, y_hard, decoded_mask)
        sel = torch.from_numpy(pass_mask)[None, None].expand(b, y_hard.shape[1], -1, -1)
        total = total + rate_estimate(y_rate[sel], mean[sel], scale[sel])
        decoded_mask = decoded_mask | pass_mask
    return total
