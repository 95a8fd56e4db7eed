"""Two-stage training orchestration and the checkpoint-owning system bundle.

Stage I learns the compression path end-to-end in pixel space; stage II
freezes the latent compression module and sharpens the one-step generator
with latent-domain distillation, adversarial alignment, and a pixel-domain
reconstruction anchor.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .assets import AssetStore, init_fake_and_disc, load_teacher, load_tokenizer, load_vae
from .config import RunConfig, load_config
from .data import Corpus, CropPolicy, sample_batch
from .diffusion import (
    CondUNet,
    NoiseSchedule,
    add_noise,
    eps_to_x0,
    lora_parameters,
    one_step_generate,
)
from .distill import (
    discriminator_losses,
    distill_surrogate_loss,
    sample_t,
    stage2_update_schedule,
)
from .entropy_model import ParamPredictor, training_rate
from .errors import AssetError, ConfigError, OnedcError
from .hyperprior import (
    BITS_PER_POSITION,
    ContextDecoder,
    HyperEncoder,
    SemanticDecoder,
    fsq_bound,
    fsq_quantize,
)
from .latent_codec import AnalysisTransform, SynthesisTransform, quantize_ste
from .metrics import DefaultPerceptual
from .semantic import CodePredictor, aux_loss, top1_accuracy
from .seeding import np_rng, torch_gen
from .vae import ToyAutoencoder

log = logging.getLogger(__name__)


class TrainingDiverged(OnedcError):
    pass


DEPLOY_GROUPS = ("g_a", "g_s", "h_enc", "h_ctx", "h_sem", "entropy", "unet", "vae")


class CodecSystem:
    """Every module the deployed codec needs, constructed from one config."""

    def __init__(self, cfg: RunConfig):
        m = cfg.model
        self.cfg = cfg
        self.g_a = AnalysisTransform(m.y_channels, m.vae_latent_channels, tuple(m.ga_widths))
        self.g_s = SynthesisTransform(m.y_channels, m.vae_latent_channels, m.gs_width)
        self.h_enc = HyperEncoder(m.y_channels, m.hyper_width)
        self.h_ctx = ContextDecoder(m.ctx_channels, m.hyper_width)
        self.h_sem = SemanticDecoder(m.sem_dim, m.sem_width)
        self.entropy = ParamPredictor(m.y_channels, m.ctx_channels, m.entropy_width)
        self.unet = CondUNet(
            m.vae_latent_channels,
            tuple(m.unet_widths),
            cond_dim=m.sem_dim,
            lora_rank=m.lora_rank,
            lora_scale=m.lora_scale,
        )
        self.vae = ToyAutoencoder(tuple(m.vae_widths), m.vae_latent_channels)
        self.schedule = NoiseSchedule(m.timesteps)

    def modules(self) -> dict[str, torch.nn.Module]:
        return {
            "g_a": self.g_a,
            "g_s": self.g_s,
            "h_enc": self.h_enc,
            "h_ctx": self.h_ctx,
            "h_sem": self.h_sem,
            "entropy": self.entropy,
            "unet": self.unet,
            "vae": self.vae,
        }

    def eval_mode(self) -> None:
        for mod in self.modules().values():
            mod.eval()

    def save_deploy(self, path: str | Path, meta: dict) -> None:
        groups = {name: ckpt.module_state(mod) for name, mod in self.modules().items()}
        ckpt.save_checkpoint(path, groups, meta)

    @classmethod
    def load_deploy(cls, path: str | Path) -> tuple["CodecSystem", dict]:
        groups, meta = ckpt.load_checkpoint(path)
        cfg = load_config(overrides=meta["config"])
        system = cls(cfg)
        for name, mod in system.modules().items():
            ckpt.state_to_module(mod, groups[name])
        system.eval_mode()
        return system, meta


def params_hash(module: torch.nn.Module, exclude: tuple[str, ...] = ()) -> str:
    digest = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        if any(tag in f".{name}" for tag in exclude):
            continue
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:16]


# LoRA adapter components; everything else in the generator stays frozen
LORA_KEYS = (".down.", ".up.")


def load_perceptual(path: str) -> torch.nn.Module:
    """External TorchScript metric if available, else the built-in plugin."""
    if path:
        try:
            plugin = torch.jit.load(path)
            plugin.eval()
            return plugin
        except Exception as exc:
            log.warning("perceptual plugin %s unusable (%s); using built-in", path, exc)
    return DefaultPerceptual()


def _optimizer_state_from_ckpt(group: dict) -> dict:
    state = {int(k): v for k, v in group.get("state", {}).items()}
    return {"state": state, "param_groups": group["param_groups"]}


class JsonlLogger:
    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path

    def write(self, record: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


class Stage1Trainer:
    """Pixel-domain compression learning (rate + reconstruction + code prediction)."""

    def __init__(
        self,
        cfg: RunConfig,
        lambda_index: int,
        train: Corpus,
        store: AssetStore,
        run_dir: str | Path,
        custom_lambda: float | None = None,
        alpha: float | None = None,
    ):
        self.cfg = cfg
        self.lambda_index = lambda_index
        self.lam = cfg.lambda_value(lambda_index, custom_lambda)
        self.alpha = cfg.train.stage1.alpha if alpha is None else alpha
        self.train_corpus = train
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.system = CodecSystem(cfg)
        self.system.vae = load_vae(cfg, store)
        self.tokenizer = load_tokenizer(cfg, store)
        m = cfg.model
        self.p_aux = CodePredictor(
            m.sem_dim, m.tokenizer_codebook, m.paux_width, m.paux_depth, m.paux_window, m.paux_head_dim
        )
        self.perceptual = load_perceptual(cfg.train.perceptual_plugin)

        for p in self.system.unet.parameters():
            p.requires_grad_(False)
        lora = list(lora_parameters(self.system.unet))
        for p in lora:
            p.requires_grad_(True)
        self.params = (
            list(self.system.g_a.parameters())
            + list(self.system.g_s.parameters())
            + list(self.system.h_enc.parameters())
            + list(self.system.h_ctx.parameters())
            + list(self.system.h_sem.parameters())
            + list(self.system.entropy.parameters())
            + list(self.p_aux.parameters())
            + lora
        )
        self.opt = torch.optim.AdamW(self.params, lr=cfg.train.stage1.lr_schedule[0][1])
        self.policy = CropPolicy(tuple(cfg.data.crop_sizes), tuple(cfg.data.crop_probs))
        self.step_idx = 0
        self.logger = JsonlLogger(self.run_dir / "log.jsonl")
        self.last_good: Path | None = None

    def lr_at(self, step: int) -> float:
        total = self.cfg.train.stage1.total_steps
        for frac, lr in self.cfg.train.stage1.lr_schedule:
            if step <= frac * total:
                return lr
        return self.cfg.train.stage1.lr_schedule[-1][1]

    def _batch(self, step: int) -> torch.Tensor:
        arr = sample_batch(
            self.train_corpus,
            self.policy,
            self.cfg.train.stage1.batch_by_size,
            np_rng(self.cfg.train.seed, "stage1", self.lambda_index, self.alpha, step),
            hflip=self.cfg.data.hflip,
        )
        return torch.from_numpy(arr).permute(0, 3, 1, 2)

    def forward_losses(self, x: torch.Tensor, step: int) -> dict[str, torch.Tensor]:
        sys = self.system
        with torch.no_grad():
            vlat = sys.vae.encode(x)
            targets = self.tokenizer.tokenize(x)
        y = sys.g_a(x, vlat)
        y_hard = quantize_ste(y, "hard")
        gen = torch_gen(self.cfg.train.seed, "stage1-noise", step)
        y_rate = quantize_ste(y, "noise", generator=gen)
        z = sys.h_enc(y)
        bounded = fsq_bound(z)
        codes, _ = fsq_quantize(z)
        hyper_ctx = sys.h_ctx(codes, bounded)
        tokens = sys.h_sem(codes, bounded)

        bits = training_rate(sys.entropy, hyper_ctx, y_hard, y_rate)
        b, _, hh, ww = x.shape
        n_tok = codes.shape[-2] * codes.shape[-1]
        bpp = (bits + b * BITS_PER_POSITION * n_tok) / (b * hh * ww)

        y_t = sys.g_s(y_hard)
        y0 = one_step_generate(sys.unet, y_t, tokens, self.cfg.model.t_gen, sys.schedule)
        x_hat = sys.vae.decode(y0, clamp=False)
        l1 = (x_hat - x).abs().mean()
        l_perc = self.perceptual(x, x_hat.clamp(0, 1))

        logits = self.p_aux(tokens, (codes.shape[-2], codes.shape[-1]))
        l_aux = aux_loss(logits, targets)
        total = l1 + l_perc + self.lam * bpp + self.alpha * l_aux
        return {
            "L1": l1,
            "L_perceptual": l_perc,
            "R_bpp": bpp,
            "L_aux": l_aux,
            "aux_top1": torch.tensor(top1_accuracy(logits, targets)),
            "total": total,
        }

    def step(self) -> dict[str, float]:
        self.step_idx += 1
        step = self.step_idx
        lr = self.lr_at(step)
        for group in self.opt.param_groups:
            group["lr"] = lr
        x = self._batch(step)
        losses = self.forward_losses(x, step)
        total = losses["total"]
        if not torch.isfinite(total):
            raise TrainingDiverged(
                f"stage 1 loss became non-finite at step {step}; "
                f"last good checkpoint: {self.last_good}"
            )
        self.opt.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.params, 1.0)
        self.opt.step()
        report = {k: float(v.detach()) for k, v in losses.items()}
        report.update(step=step, lr=lr)
        self.logger.write(report)
        return report

    def checkpoint_paths(self) -> tuple[Path, Path]:
        tag = f"l{self.lambda_index}" + ("" if self.alpha else "_a0")
        return self.run_dir / f"train_{tag}.ckpt", self.run_dir / f"deploy_{tag}.ckpt"

    def meta(self) -> dict:
        from .config import to_dict

        return {
            "stage": 1,
            "step": self.step_idx,
            "lambda_index": self.lambda_index,
            "lambda_value": self.lam,
            "alpha": self.alpha,
            "config": to_dict(self.cfg),
            "config_hash": self.cfg.config_hash(),
        }

    def save(self) -> tuple[Path, Path]:
        train_path, deploy_path = self.checkpoint_paths()
        groups = {name: ckpt.module_state(mod) for name, mod in self.system.modules().items()}
        groups["p_aux"] = ckpt.module_state(self.p_aux)
        groups["opt"] = self.opt.state_dict()
        ckpt.save_checkpoint(train_path, groups, self.meta())
        # the deployed codec never carries the code predictor or optimizer state
        self.system.save_deploy(deploy_path, self.meta())
        self.last_good = train_path
        return train_path, deploy_path

    def restore(self, train_path: str | Path) -> None:
        groups, meta = ckpt.load_checkpoint(train_path)
        for name, mod in self.system.modules().items():
            ckpt.state_to_module(mod, groups[name])
        ckpt.state_to_module(self.p_aux, groups["p_aux"])
        self.opt.load_state_dict(_optimizer_state_from_ckpt(groups["opt"]))
        self.step_idx = meta["step"]
        self.last_good = Path(train_path)

    def train(self, total_steps: int | None = None) -> Path:
        total = total_steps or self.cfg.train.stage1.total_steps
        every = self.cfg.train.stage1.checkpoint_every
        while self.step_idx < total:
            report = self.step()
            if self.step_idx % every == 0 or self.step_idx == total:
                self.save()
            if self.step_idx % 100 == 0:
                log.info(
                    "stage1[l%d a=%s] step %d total %.4f bpp %.4f",
                    self.lambda_index, self.alpha, self.step_idx,
                    report["total"], report["R_bpp"],
                )
        _, deploy = self.save()
        return deploy


class Stage2Trainer:
    """Hybrid-domain perceptual learning on top of a stage-I checkpoint."""

    FROZEN = ("g_a", "h_enc", "h_ctx", "entropy", "vae")

    def __init__(
        self,
        cfg: RunConfig,
        lambda_index: int,
        train: Corpus,
        store: AssetStore,
        run_dir: str | Path,
        stage1_deploy: str | Path,
    ):
        if not Path(stage1_deploy).exists():
            raise AssetError(f"stage 2 requires a stage 1 checkpoint; missing {stage1_deploy}")
        self.cfg = cfg
        self.lambda_index = lambda_index
        self.train_corpus = train
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.system, meta = CodecSystem.load_deploy(stage1_deploy)
        if meta.get("lambda_index") != lambda_index:
            raise ConfigError(
                f"checkpoint was trained for lambda index {meta.get('lambda_index')}, "
                f"not {lambda_index}"
            )
        # run under the caller's config; model shapes come from the checkpoint
        self.teacher = load_teacher(self.system.cfg, store)
        self.fake, self.disc = init_fake_and_disc(self.teacher, self.system.cfg)
        self.perceptual = load_perceptual(cfg.train.perceptual_plugin)

        s2 = cfg.train.stage2
        for name in self.FROZEN:
            for p in self.system.modules()[name].parameters():
                p.requires_grad_(False)
        for p in self.system.unet.parameters():
            p.requires_grad_(False)
        gen_params = list(lora_parameters(self.system.unet))
        for p in gen_params:
            p.requires_grad_(True)
        if not s2.freeze_gs_hsem:
            for p in self.system.g_s.parameters():
                p.requires_grad_(True)
            for p in self.system.h_sem.parameters():
                p.requires_grad_(True)
            gen_params += list(self.system.g_s.parameters()) + list(self.system.h_sem.parameters())
        else:
            for mod in (self.system.g_s, self.system.h_sem):
                for p in mod.parameters():
                    p.requires_grad_(False)
        self.gen_params = gen_params
        self.fake_params = list(self.fake.parameters()) + list(self.disc.parameters())
        self.gen_opt = torch.optim.AdamW(self.gen_params, lr=s2.lr)
        self.fake_opt = torch.optim.AdamW(self.fake_params, lr=s2.lr)

        self.freeze_hashes = self._hash_frozen()
        self.counters = {"generator": 0, "fake": 0, "disc": 0, "steps": 0}
        self.step_idx = 0
        self.logger = JsonlLogger(self.run_dir / "log.jsonl")
        self.last_good: Path | None = None
        self.policy = CropPolicy(tuple(cfg.data.crop_sizes), tuple(cfg.data.crop_probs))

    def _hash_frozen(self) -> dict[str, str]:
        hashes = {name: params_hash(self.system.modules()[name]) for name in self.FROZEN}
        hashes["teacher"] = params_hash(self.teacher)
        hashes["unet_base"] = params_hash(self.system.unet, exclude=LORA_KEYS)
        return hashes

    def _batch(self, step: int) -> torch.Tensor:
        arr = sample_batch(
            self.train_corpus,
            self.policy,
            self.cfg.train.stage1.batch_by_size,
            np_rng(self.cfg.train.seed, "stage2", self.lambda_index, step),
            hflip=self.cfg.data.hflip,
        )
        return torch.from_numpy(arr).permute(0, 3, 1, 2)

    def _set_fake_grad(self, enabled: bool) -> None:
        for p in self.fake_params:
            p.requires_grad_(enabled)

    def step(self) -> dict[str, float]:
        self.step_idx += 1
        step = self.step_idx
        cfg2 = self.cfg.train.stage2
        sys = self.system
        x = self._batch(step)
        with torch.no_grad():
            vlat = sys.vae.encode(x)
            y = sys.g_a(x, vlat)
            y_hard = quantize_ste(y, "hard")
            z = sys.h_enc(y)
            bounded = fsq_bound(z)
            codes, _ = fsq_quantize(z)

        tokens = sys.h_sem(codes, bounded)
        y_t = sys.g_s(y_hard)
        y0 = one_step_generate(sys.unet, y_t, tokens, self.cfg.model.t_gen, sys.schedule)

        t = sample_t(x.shape[0], cfg2.t_min, cfg2.t_max, torch_gen(self.cfg.train.seed, "s2-t", step))
        flags = stage2_update_schedule(step, cfg2.update_ratio)
        report: dict[str, float] = {"step": step}

        if flags["generator"]:
            self._set_fake_grad(False)
            l_distill, _ = distill_surrogate_loss(
                y0, t, self.teacher, self.fake, sys.schedule,
                generator=torch_gen(self.cfg.train.seed, "s2-distill", step),
            )
            x_hat = sys.vae.decode(y0, clamp=False)
            l_recon = (x_hat - x).abs().mean() + self.perceptual(x, x_hat.clamp(0, 1))
            x_t_adv, _ = add_noise(
                y0, t, sys.schedule, generator=torch_gen(self.cfg.train.seed, "s2-adv", step)
            )
            _, feats = self.fake(x_t_adv, t, return_mid=True)
            l_adv = -self.disc(feats, t).mean()
            total_gen = l_distill + cfg2.beta * l_recon + cfg2.gamma * l_adv
            if not torch.isfinite(total_gen):
                raise TrainingDiverged(
                    f"stage 2 generator loss non-finite at step {step}; last good: {self.last_good}"
                )
            self.gen_opt.zero_grad()
            total_gen.backward()
            torch.nn.utils.clip_grad_norm_(self.gen_params, 1.0)
            self.gen_opt.step()
            self._set_fake_grad(True)
            self.counters["generator"] += 1
            report.update(
                L_distill=float(l_distill.detach()), L_recon=float(l_recon.detach()),
                L_adv=float(l_adv.detach()), total_gen=float(total_gen.detach()),
            )

        # tracking network + critic update on every step
        y0_d = y0.detach()
        gen_fake = torch_gen(self.cfg.train.seed, "s2-fake", step)
        x_t_f, _ = add_noise(y0_d, t, sys.schedule, generator=gen_fake)
        eps_f, feats_fake = self.fake(x_t_f, t, return_mid=True)
        pred = eps_to_x0(x_t_f, eps_f, t, sys.schedule)
        l_fake = (pred - y0_d).pow(2).mean()
        with torch.no_grad():
            real_lat = sys.vae.encode(x)
        x_t_r, _ = add_noise(
            real_lat, t, sys.schedule, generator=torch_gen(self.cfg.train.seed, "s2-real", step)
        )
        _, feats_real = self.fake(x_t_r, t, return_mid=True)
        l_disc, _ = discriminator_losses(self.disc, feats_fake, feats_real, t)
        total_fake = l_fake + cfg2.sigma_disc * l_disc
        if not torch.isfinite(total_fake):
            raise TrainingDiverged(
                f"stage 2 fake-branch loss non-finite at step {step}; last good: {self.last_good}"
            )
        self.fake_opt.zero_grad()
        total_fake.backward()
        torch.nn.utils.clip_grad_norm_(self.fake_params, 1.0)
        self.fake_opt.step()
        self.counters["fake"] += 1
        self.counters["disc"] += 1
        self.counters["steps"] += 1

        report.update(L_fake=float(l_fake.detach()), L_Disc=float(l_disc.detach()))
        self.logger.write(report)
        return report

    def verify_freeze(self) -> dict[str, bool]:
        current = self._hash_frozen()
        return {name: current[name] == self.freeze_hashes[name] for name in current}

    def meta(self) -> dict:
        from .config import to_dict

        return {
            "stage": 2,
            "step": self.step_idx,
            "lambda_index": self.lambda_index,
            "lambda_value": self.cfg.lambda_value(self.lambda_index),
            "alpha": self.cfg.train.stage1.alpha,
            "config": to_dict(self.system.cfg),
            "config_hash": self.cfg.config_hash(),
            "counters": dict(self.counters),
            "freeze_hashes_start": self.freeze_hashes,
            "freeze_hashes_end": self._hash_frozen(),
            "freeze_ok": all(self.verify_freeze().values()),
        }

    def save(self) -> tuple[Path, Path]:
        train_path = self.run_dir / f"train_l{self.lambda_index}.ckpt"
        deploy_path = self.run_dir / f"deploy_l{self.lambda_index}.ckpt"
        groups = {name: ckpt.module_state(mod) for name, mod in self.system.modules().items()}
        groups["fake"] = ckpt.module_state(self.fake)
        groups["disc"] = ckpt.module_state(self.disc)
        groups["gen_opt"] = self.gen_opt.state_dict()
        groups["fake_opt"] = self.fake_opt.state_dict()
        ckpt.save_checkpoint(train_path, groups, self.meta())
        self.system.save_deploy(deploy_path, self.meta())
        self.last_good = train_path
        return train_path, deploy_path

    def restore(self, train_path: str | Path) -> None:
        groups, meta = ckpt.load_checkpoint(train_path)
        for name, mod in self.system.modules().items():
            ckpt.state_to_module(mod, groups[name])
        ckpt.state_to_module(self.fake, groups["fake"])
        ckpt.state_to_module(self.disc, groups["disc"])
        self.gen_opt.load_state_dict(_optimizer_state_from_ckpt(groups["gen_opt"]))
        self.fake_opt.load_state_dict(_optimizer_state_from_ckpt(groups["fake_opt"]))
        self.step_idx = meta["step"]
        self.counters = dict(meta["counters"])
        self.freeze_hashes = meta["freeze_hashes_start"]
        self.last_good = Path(train_path)

    def train(self, total_steps: int | None = None) -> Path:
        total = total_steps or self.cfg.train.stage2.total_steps
        every = self.cfg.train.stage2.checkpoint_every
        while self.step_idx < total:
            report = self.step()
            if self.step_idx % every == 0 or self.step_idx == total:
                self.save()
            if self.step_idx % 100 == 0:
                log.info("stage2[l%d] step %d fake %.4f", self.lambda_index, self.step_idx, report["L_fake"])
        _, deploy = self.save()
        return deploy
