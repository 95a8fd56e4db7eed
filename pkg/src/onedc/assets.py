"""Stage-0 training of the frozen teacher assets.

Everything the deployed codec treats as pretrained is trained here from the
corpus: the latent autoencoder, the VQ tokenizer, and the multi-step noise
predictor. Each asset records its quality-gate metrics in a manifest;
later stages refuse to start when a gate failed. Assets are immutable once
written.
"""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import RunConfig
from .data import Corpus, CropPolicy, sample_batch
from .diffusion import CondUNet, DdimSampler, NoiseSchedule, add_noise
from .distill import DiscriminatorHead
from .errors import AssetError
from .metrics import psnr
from .seeding import np_rng, torch_gen
from .tokenizer import VQTokenizer
from .vae import ToyAutoencoder

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    top = max(0, (h - size) // 2)
    left = max(0, (w - size) // 2)
    return img[top : top + size, left : left + size]


def _val_tensor(val: Corpus, size: int = 64, limit: int = 32) -> torch.Tensor:
    imgs = [_center_crop(val[i].pixels, size) for i in range(min(len(val), limit))]
    return torch.from_numpy(np.stack(imgs)).permute(0, 3, 1, 2).float()


class AssetStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / f"{name}.ckpt"

    def manifest(self) -> dict:
        p = self.root / MANIFEST
        if not p.exists():
            return {}
        return json.loads(p.read_text())

    def record(self, name: str, config_hash: str, gates: dict, passed: bool) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        manifest[name] = {"config_hash": config_hash, "gates": gates, "passed": passed}
        (self.root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))

    def require(self, name: str) -> Path:
        entry = self.manifest().get(name)
        if entry is None:
            raise AssetError(f"asset '{name}' missing; run stage 0 first")
        if not entry["passed"]:
            raise AssetError(f"asset '{name}' failed its quality gate: {entry['gates']}")
        return self.path(name)


def train_vae(cfg: RunConfig, train: Corpus, val: Corpus, store: AssetStore) -> dict:
    """Train the latent autoencoder and gate on val reconstruction PSNR."""
    model = ToyAutoencoder(tuple(cfg.model.vae_widths), cfg.model.vae_latent_channels)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.stage0.lr)
    policy = CropPolicy((64,), (1.0,))
    steps = cfg.train.stage0.vae_steps
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=steps, eta_min=cfg.train.stage0.lr * 0.05
    )
    for step in range(1, steps + 1):
        batch = sample_batch(train, policy, {64: cfg.train.stage0.batch}, np_rng(cfg.train.seed, "vae", step))
        x = torch.from_numpy(batch).permute(0, 3, 1, 2)
        raw = model.encoder(x)
        recon = model.decoder(raw)
        loss = (recon - x).abs().mean() + 2.0 * (recon - x).pow(2).mean()
        if not torch.isfinite(loss):
            raise AssetError(f"autoencoder diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 200 == 0 or step == steps:
            log.info("vae step %d loss %.5f", step, float(loss.detach()))

    model.eval()
    vx = _val_tensor(val)
    with torch.no_grad():
        raw = model.encoder(vx)
        model.calibrate(raw)
        rec = model.decode(model.encode(vx))
        scores = [psnr(vx[i].permute(1, 2, 0).numpy(), rec[i].permute(1, 2, 0).numpy()) for i in range(len(vx))]
        z = model.encode(vx)
        stds = z.transpose(0, 1).reshape(z.shape[1], -1).std(dim=1)
    gates = {
        "val_psnr": float(np.mean(scores)),
        "latent_std_min": float(stds.min()),
        "latent_std_max": float(stds.max()),
    }
    passed = gates["val_psnr"] >= cfg.train.stage0.vae_psnr_gate and 0.5 <= gates["latent_std_min"] and gates["latent_std_max"] <= 2.0
    ckpt.save_checkpoint(store.path("vae"), {"vae": ckpt.module_state(model)}, {"gates": gates, "config_hash": cfg.config_hash()})
    store.record("vae", cfg.config_hash(), gates, passed)
    if not passed:
        raise AssetError(f"autoencoder quality gate failed: {gates}")
    return gates


def train_tokenizer(cfg: RunConfig, train: Corpus, val: Corpus, store: AssetStore) -> dict:
    model = VQTokenizer(cfg.model.tokenizer_codebook, cfg.model.tokenizer_dim, cfg.model.tokenizer_width)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.stage0.lr)
    policy = CropPolicy((64,), (1.0,))
    steps = cfg.train.stage0.tokenizer_steps
    for step in range(1, steps + 1):
        batch = sample_batch(train, policy, {64: cfg.train.stage0.batch}, np_rng(cfg.train.seed, "tok", step))
        x = torch.from_numpy(batch).permute(0, 3, 1, 2)
        recon, codebook_loss, commit_loss = model(x)
        loss = (recon - x).pow(2).mean() + codebook_loss + 0.25 * commit_loss
        if not torch.isfinite(loss):
            raise AssetError(f"tokenizer diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == steps:
            log.info("tokenizer step %d loss %.5f", step, float(loss.detach()))

    model.eval()
    vx = _val_tensor(val)
    with torch.no_grad():
        idx = model.tokenize(vx)
    hist = np.bincount(idx.numpy().ravel(), minlength=model.codebook_size).astype(np.float64)
    p = hist / hist.sum()
    entropy = float(-(p[p > 0] * np.log2(p[p > 0])).sum())
    gates = {"token_entropy_bits": entropy, "distinct_tokens": int((hist > 0).sum())}
    passed = entropy > 0.0
    ckpt.save_checkpoint(store.path("tokenizer"), {"tokenizer": ckpt.module_state(model)}, {"gates": gates, "config_hash": cfg.config_hash()})
    store.record("tokenizer", cfg.config_hash(), gates, passed)
    if not passed:
        raise AssetError(f"tokenizer collapsed to a single code: {gates}")
    return gates


def train_teacher(cfg: RunConfig, train: Corpus, val: Corpus, store: AssetStore) -> dict:
    """Noise-prediction training of the multi-step teacher in latent space."""
    vae = load_vae(cfg, store)
    model = CondUNet(cfg.model.vae_latent_channels, tuple(cfg.model.unet_widths))
    schedule = NoiseSchedule(cfg.model.timesteps)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.stage0.lr * 0.3)
    policy = CropPolicy((64,), (1.0,))
    steps = cfg.train.stage0.teacher_steps

    vx = _val_tensor(val)
    with torch.no_grad():
        vlat = vae.encode(vx)

    def val_loss(net) -> float:
        gen = torch_gen(cfg.train.seed, "teacher-val")
        t = torch.randint(0, schedule.timesteps, (vlat.shape[0],), generator=gen)
        x_t, noise = add_noise(vlat, t, schedule, generator=gen)
        with torch.no_grad():
            return float((net(x_t, t) - noise).pow(2).mean())

    loss_init = val_loss(model)
    for step in range(1, steps + 1):
        batch = sample_batch(train, policy, {64: cfg.train.stage0.batch}, np_rng(cfg.train.seed, "teacher", step))
        x = torch.from_numpy(batch).permute(0, 3, 1, 2)
        with torch.no_grad():
            lat = vae.encode(x)
        gen = torch_gen(cfg.train.seed, "teacher", step)
        t = torch.randint(0, schedule.timesteps, (lat.shape[0],), generator=gen)
        x_t, noise = add_noise(lat, t, schedule, generator=gen)
        loss = (model(x_t, t) - noise).pow(2).mean()
        if not torch.isfinite(loss):
            raise AssetError(f"teacher diverged (non-finite loss) at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == steps:
            log.info("teacher step %d loss %.5f", step, float(loss.detach()))

    model.eval()
    loss_final = val_loss(model)

    # noise recovery at t=0: prediction vs the injected noise on near-clean latents
    gen = torch_gen(cfg.train.seed, "teacher-t0")
    t0 = torch.zeros(vlat.shape[0], dtype=torch.long)
    x_t, noise = add_noise(vlat, t0, schedule, generator=gen)
    with torch.no_grad():
        pred = model(x_t, t0)
    cos = torch.nn.functional.cosine_similarity(pred.flatten(1), noise.flatten(1), dim=1)
    gates = {
        "val_loss_init": loss_init,
        "val_loss_final": loss_final,
        "loss_drop": (loss_init - loss_final) / loss_init,
        "t0_noise_cosine": float(cos.mean()),
    }
    passed = gates["loss_drop"] >= cfg.train.stage0.teacher_loss_drop_gate
    ckpt.save_checkpoint(store.path("teacher"), {"teacher": ckpt.module_state(model)}, {"gates": gates, "config_hash": cfg.config_hash()})
    store.record("teacher", cfg.config_hash(), gates, passed)
    if not passed:
        raise AssetError(f"teacher quality gate failed: {gates}")
    return gates


def load_vae(cfg: RunConfig, store: AssetStore) -> ToyAutoencoder:
    path = store.require("vae")
    groups, _ = ckpt.load_checkpoint(path)
    model = ToyAutoencoder(tuple(cfg.model.vae_widths), cfg.model.vae_latent_channels)
    ckpt.state_to_module(model, groups["vae"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def load_tokenizer(cfg: RunConfig, store: AssetStore) -> VQTokenizer:
    path = store.require("tokenizer")
    groups, _ = ckpt.load_checkpoint(path)
    model = VQTokenizer(cfg.model.tokenizer_codebook, cfg.model.tokenizer_dim, cfg.model.tokenizer_width)
    ckpt.state_to_module(model, groups["tokenizer"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def load_teacher(cfg: RunConfig, store: AssetStore) -> CondUNet:
    path = store.require("teacher")
    groups, _ = ckpt.load_checkpoint(path)
    model = CondUNet(cfg.model.vae_latent_channels, tuple(cfg.model.unet_widths))
    ckpt.state_to_module(model, groups["teacher"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def init_fake_and_disc(teacher: CondUNet, cfg: RunConfig) -> tuple[CondUNet, DiscriminatorHead]:
    """Tracking network starts as an exact copy of the teacher; the critic head
    is freshly initialized over the U-Net's bottleneck features."""
    fake = copy.deepcopy(teacher)
    for p in fake.parameters():
        p.requires_grad_(True)
    disc = DiscriminatorHead(in_channels=cfg.model.unet_widths[-1])
    return fake, disc


def teacher_sampler(cfg: RunConfig, steps: int) -> DdimSampler:
    return DdimSampler(NoiseSchedule(cfg.model.timesteps), steps)


def run_stage0(cfg: RunConfig, train: Corpus, val: Corpus, store: AssetStore) -> dict:
    gates = {}
    gates["vae"] = train_vae(cfg, train, val, store)
    gates["tokenizer"] = train_tokenizer(cfg, train, val, store)
    gates["teacher"] = train_teacher(cfg, train, val, store)
    return gates
