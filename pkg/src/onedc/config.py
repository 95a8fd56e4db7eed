"""Run configuration: typed sections, strict key checking, stable hashing.

A config file fully determines a run. Unknown keys are rejected so that a
typo cannot silently fall back to a default, and the hash covers every
effective value (defaults included) so two runs with the same hash ran the
same recipe.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError

LAMBDA_PRESETS = (1.8, 2.9, 4.6, 7.4)


@dataclass
class DataConfig:
    root: str = "data/train"
    split_seed: int = 0
    crop_sizes: list[int] = field(default_factory=lambda: [64, 128])
    crop_probs: list[float] = field(default_factory=lambda: [0.6, 0.4])
    hflip: bool = False
    val_count: int = 50
    val_root: str = ""  # optional separate directory for held-out images


@dataclass
class ModelConfig:
    y_channels: int = 16
    ctx_channels: int = 64
    sem_dim: int = 256
    ga_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 128])
    gs_width: int = 64
    hyper_width: int = 64
    sem_width: int = 128
    entropy_width: int = 64
    unet_widths: list[int] = field(default_factory=lambda: [64, 128, 256])
    lora_rank: int = 64
    lora_scale: float = 1.0
    t_gen: int = 249
    timesteps: int = 1000
    vae_widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    vae_latent_channels: int = 4
    tokenizer_codebook: int = 512
    tokenizer_dim: int = 64
    tokenizer_width: int = 64
    paux_depth: int = 4
    paux_width: int = 128
    paux_window: int = 4
    paux_head_dim: int = 64


@dataclass
class Stage0Config:
    vae_steps: int = 20000
    tokenizer_steps: int = 20000
    teacher_steps: int = 20000
    lr: float = 1e-3
    batch: int = 8
    vae_psnr_gate: float = 28.0
    teacher_loss_drop_gate: float = 0.30


@dataclass
class Stage1Config:
    total_steps: int = 50000
    alpha: float = 0.001
    # (fraction of total steps, learning rate); mirrors the 62.5%/87.5% split
    lr_schedule: list[list[float]] = field(
        default_factory=lambda: [[0.625, 5e-5], [0.875, 1e-5], [1.0, 1e-6]]
    )
    batch_by_size: dict[int, int] = field(default_factory=lambda: {64: 8, 128: 2})
    checkpoint_every: int = 1000


@dataclass
class Stage2Config:
    total_steps: int = 30000
    beta: float = 0.625
    gamma: float = 0.001
    sigma_disc: float = 0.01
    t_min: int = 20
    t_max: int = 640
    lr: float = 1e-6
    update_ratio: int = 10
    freeze_gs_hsem: bool = False
    checkpoint_every: int = 1000


@dataclass
class TrainConfig:
    seed: int = 0
    asset_dir: str = "assets"
    run_dir: str = "runs"
    perceptual_plugin: str = ""  # path to a TorchScript module; empty = built-in
    stage0: Stage0Config = field(default_factory=Stage0Config)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)


@dataclass
class CoderConfig:
    backend: str = "reference"  # reference | fast
    fast_cli: str = "fastcoder/dist/cli.js"


@dataclass
class EvalConfig:
    dataset: str = "data/val"
    repetitions: int = 5
    warmup: int = 3


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    coder: CoderConfig = field(default_factory=CoderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def config_hash(self) -> str:
        payload = json.dumps(to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def asset_dir(self) -> str:
        return os.environ.get("ONEDC_ASSET_DIR", self.train.asset_dir)

    def lambda_value(self, lambda_index: int, custom: float | None = None) -> float:
        if custom is not None:
            return float(custom)
        if not 0 <= lambda_index < len(LAMBDA_PRESETS):
            raise ConfigError(
                f"lambda index {lambda_index} outside preset table "
                f"{list(LAMBDA_PRESETS)}; pass a custom lambda explicitly"
            )
        return LAMBDA_PRESETS[lambda_index]


def to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _merge(dc: Any, raw: dict, path: str) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{path or '<root>'}' must be a mapping")
    names = {f.name: f for f in dataclasses.fields(dc)}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(f"unknown config key '{path}{key}'")
        current = getattr(dc, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, f"{path}{key}.")
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}{key}' must be a mapping")
            setattr(dc, key, {int(k): v for k, v in value.items()})
        else:
            setattr(dc, key, value)
    return dc


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional YAML file, and overrides."""
    cfg = RunConfig()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        _merge(cfg, raw, "")
    if overrides:
        _merge(cfg, overrides, "")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    d = cfg.data
    if len(d.crop_sizes) != len(d.crop_probs):
        raise ConfigError("data.crop_sizes and data.crop_probs must have equal length")
    if any(p < 0 for p in d.crop_probs) or abs(sum(d.crop_probs) - 1.0) > 1e-9:
        raise ConfigError("data.crop_probs must be non-negative and sum to 1")
    if cfg.coder.backend not in ("reference", "fast"):
        raise ConfigError(f"coder.backend must be reference|fast, got {cfg.coder.backend!r}")
    s2 = cfg.train.stage2
    if not (0 <= s2.t_min <= s2.t_max < cfg.model.timesteps):
        raise ConfigError("stage2 t range must satisfy 0 <= t_min <= t_max < timesteps")
    if min(s2.beta, s2.gamma, s2.sigma_disc) < 0:
        raise ConfigError("stage2 loss weights must be non-negative")
    if cfg.train.stage1.alpha < 0:
        raise ConfigError("stage1.alpha must be non-negative")
