"""Deterministic per-step RNG derivation.

Every stochastic draw in training is keyed by (seed, stage, step, purpose),
so resuming from a checkpoint replays the exact same randomness without
having to serialize generator states.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def stable_seed(*parts) -> int:
    blob = repr(parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") % (2**63)


def np_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(stable_seed(*parts))


def torch_gen(*parts) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(stable_seed(*parts))
    return g
