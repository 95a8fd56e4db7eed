"""Hyper encoder, finite scalar quantization, and the two hyper decoders.

The hyper code has 7 channels of 4 levels at 1/64 resolution, an implicit
codebook of 4^7 = 16384 entries per position. It is transmitted at a fixed
2 bits per channel (14 bits per position); the context decoder conditions
the entropy model and the semantic decoder emits the cross-attention tokens.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ContractViolation
from .latent_codec import round_half_away
from .layers import InterpolatedPosEmbed, ResBlock, SelfAttention2d

HYPER_CHANNELS = 7
FSQ_LEVELS = 4
FSQ_BOUND = 1.5
CODEBOOK_SIZE = FSQ_LEVELS**HYPER_CHANNELS  # 16384
BITS_PER_POSITION = HYPER_CHANNELS * 2  # log2(4) bits per channel


def fsq_bound(z: torch.Tensor) -> torch.Tensor:
    return FSQ_BOUND * torch.tanh(z)


def fsq_quantize(z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantize each channel to 4 levels.

    Returns (codes, values): integer codes in {0..3} and the straight-through
    dequantized values at the level centres {-1.5, -0.5, 0.5, 1.5}. The
    backward pass is identity on the bounded pre-quantization value.
    """
    if z.shape[1] != HYPER_CHANNELS:
        raise ContractViolation(f"hyper code needs {HYPER_CHANNELS} channels, got {z.shape[1]}")
    b = fsq_bound(z)
    codes = torch.clamp(round_half_away(b + FSQ_BOUND), 0, FSQ_LEVELS - 1)
    centers = codes - FSQ_BOUND
    values = b + (centers - b).detach()
    return codes.long(), values


def codes_to_values(codes: torch.Tensor) -> torch.Tensor:
    """Dequantize integer codes to their level centres."""
    return codes.float() - FSQ_BOUND


def pack_index(codes: np.ndarray) -> np.ndarray:
    """Fold per-channel codes (..., 7) into a single index in [0, 16383]."""
    codes = np.asarray(codes)
    if codes.shape[-1] != HYPER_CHANNELS:
        raise ContractViolation("expected 7 codes per position")
    if codes.min() < 0 or codes.max() >= FSQ_LEVELS:
        raise ContractViolation("codes must lie in {0..3}")
    weights = FSQ_LEVELS ** np.arange(HYPER_CHANNELS, dtype=np.int64)
    return (codes.astype(np.int64) * weights).sum(axis=-1)


def unpack_index(index: np.ndarray) -> np.ndarray:
    """Inverse of pack_index; returns codes with a trailing channel axis."""
    index = np.asarray(index, dtype=np.int64)
    if index.min() < 0 or index.max() >= CODEBOOK_SIZE:
        raise ContractViolation(f"index outside [0, {CODEBOOK_SIZE - 1}]")
    shifts = 2 * np.arange(HYPER_CHANNELS, dtype=np.int64)
    return (index[..., None] >> shifts) & (FSQ_LEVELS - 1)


def hyper_bpp(n_positions: int, img_h: int, img_w: int) -> float:
    """Fixed hyper rate: 14 bits per 1/64-resolution position."""
    return BITS_PER_POSITION * n_positions / (img_h * img_w)


def pack_hyper_segment(codes: np.ndarray) -> bytes:
    """Serialize codes (7, h, w): 2 bits each, channel-major then raster order,
    most significant bits first, zero-padded to a byte boundary."""
    flat = np.asarray(codes, dtype=np.uint8).reshape(HYPER_CHANNELS, -1).ravel()
    pad = (-len(flat)) % 4
    flat = np.concatenate([flat, np.zeros(pad, dtype=np.uint8)])
    quads = flat.reshape(-1, 4)
    packed = (quads[:, 0] << 6) | (quads[:, 1] << 4) | (quads[:, 2] << 2) | quads[:, 3]
    return packed.astype(np.uint8).tobytes()


def unpack_hyper_segment(data: bytes, h: int, w: int) -> np.ndarray:
    n = HYPER_CHANNELS * h * w
    if len(data) != (2 * n + 7) // 8:
        raise ContractViolation(
            f"hyper segment of {len(data)} bytes does not match a {h}x{w} grid"
        )
    raw = np.frombuffer(data, dtype=np.uint8)
    quads = np.stack([(raw >> 6) & 3, (raw >> 4) & 3, (raw >> 2) & 3, raw & 3], axis=1)
    return quads.ravel()[:n].reshape(HYPER_CHANNELS, h, w)


class HyperEncoder(nn.Module):
    """h_enc: latent grid at 1/16 -> raw hyper features at 1/64 (pre-bounding)."""

    def __init__(self, y_channels: int = 16, width: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(y_channels, width, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, HYPER_CHANNELS, 3, padding=1),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class SteCodeEmbedding(nn.Module):
    """Per-channel 4-level embedding with a straight-through backward path.

    Forward is the exact hard table lookup (usable straight from decoded
    integer codes). When the bounded pre-quantization values are supplied,
    the backward pass blends the table rows with soft nearest-level weights,
    so gradients reach both the tables and the hyper encoder.
    """

    def __init__(self, dim: int = 8, tau: float = 1.0):
        super().__init__()
        self.dim = dim
        self.tau = tau
        self.tables = nn.Parameter(torch.randn(HYPER_CHANNELS, FSQ_LEVELS, dim) * 0.02)
        centers = torch.arange(FSQ_LEVELS, dtype=torch.float32) - FSQ_BOUND
        self.register_buffer("centers", centers)

    @property
    def out_channels(self) -> int:
        return HYPER_CHANNELS * self.dim

    def forward(self, codes: torch.Tensor, bounded: torch.Tensor | None = None) -> torch.Tensor:
        b, c, h, w = codes.shape
        onehot = torch.nn.functional.one_hot(codes, FSQ_LEVELS).float()  # (b,7,h,w,4)
        if bounded is not None:
            logits = -((bounded.unsqueeze(-1) - self.centers) ** 2) / self.tau
            soft = torch.softmax(logits, dim=-1)
            onehot = onehot + soft - soft.detach()
        emb = torch.einsum("bchwl,cld->bchwd", onehot, self.tables)
        return emb.permute(0, 1, 4, 2, 3).reshape(b, c * self.dim, h, w)


class ContextDecoder(nn.Module):
    """h_ctx: hyper codes -> entropy-model conditioning at 1/16 resolution."""

    def __init__(self, ctx_channels: int = 64, width: int = 64, embed_dim: int = 8):
        super().__init__()
        self.embed = SteCodeEmbedding(embed_dim)
        self.net = nn.Sequential(
            nn.ConvTranspose2d(self.embed.out_channels, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(width, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, ctx_channels, 3, padding=1),
        )

    def forward(self, codes: torch.Tensor, bounded: torch.Tensor | None = None) -> torch.Tensor:
        return self.net(self.embed(codes, bounded))


class SemanticDecoder(nn.Module):
    """h_sem: hyper codes -> one guidance token per 1/64 position.

    The per-position stage (embedding + pointwise MLP) is permutation
    equivariant; a learned 2-D positional embedding is added before the
    spatial blocks because cross-attention has no other notion of position.
    """

    def __init__(self, sem_dim: int = 256, width: int = 128, embed_dim: int = 8):
        super().__init__()
        self.embed = SteCodeEmbedding(embed_dim)
        self.pointwise = nn.Sequential(
            nn.Conv2d(self.embed.out_channels, width, 1),
            nn.SiLU(),
            nn.Conv2d(width, sem_dim, 1),
        )
        self.pos = InterpolatedPosEmbed(sem_dim)
        self.blocks = nn.ModuleList([ResBlock(sem_dim) for _ in range(4)])
        self.attn = SelfAttention2d(sem_dim, heads=4)
        self.head = nn.Conv2d(sem_dim, sem_dim, 1)

    def pre_positional(self, codes: torch.Tensor, bounded: torch.Tensor | None = None) -> torch.Tensor:
        return self.pointwise(self.embed(codes, bounded))

    def forward(self, codes: torch.Tensor, bounded: torch.Tensor | None = None) -> torch.Tensor:
        h = self.pre_positional(codes, bounded)
        h = h + self.pos(h.shape[-2], h.shape[-1])
        for block in self.blocks:
            h = block(h)
        h = self.head(self.attn(h))
        return h.flatten(2).transpose(1, 2)  # (b, n_tok, sem_dim)
