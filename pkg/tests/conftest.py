import logging

import numpy as np
import pytest
import torch

from onedc.assets import AssetStore, run_stage0
from onedc.config import load_config
from onedc.data import load_corpus
from onedc.synth import generate_corpus
from onedc.training import Stage1Trainer

logging.getLogger("onedc").setLevel(logging.WARNING)

TINY_MODEL = {
    "ga_widths": [8, 16, 24, 24],
    "gs_width": 16,
    "hyper_width": 16,
    "sem_width": 32,
    "sem_dim": 64,
    "ctx_channels": 16,
    "entropy_width": 16,
    "unet_widths": [16, 24, 32],
    "lora_rank": 4,
    "vae_widths": [8, 16, 24],
    "tokenizer_width": 16,
    "tokenizer_dim": 16,
    "tokenizer_codebook": 64,
    "paux_width": 32,
    "paux_head_dim": 16,
}


def tiny_config(tmp_root, **extra):
    overrides = {
        "data": {"root": f"{tmp_root}/data", "val_count": 4},
        "model": dict(TINY_MODEL),
        "train": {
            "asset_dir": f"{tmp_root}/assets",
            "run_dir": f"{tmp_root}/runs",
            "stage0": {
                "vae_steps": 50,
                "tokenizer_steps": 30,
                "teacher_steps": 30,
                "vae_psnr_gate": 0.0,
                "teacher_loss_drop_gate": -10.0,
            },
            "stage1": {"total_steps": 6, "checkpoint_every": 3},
            "stage2": {"total_steps": 10, "checkpoint_every": 5},
        },
    }
    for key, value in extra.items():
        section = overrides.setdefault(key, {})
        for k, v in value.items():
            if isinstance(v, dict) and isinstance(section.get(k), dict):
                section[k].update(v)
            else:
                section[k] = v
    return load_config(overrides=overrides)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """Miniature end-to-end run: corpus, gated assets, a few stage-1 steps."""
    root = tmp_path_factory.mktemp("tiny_run")
    generate_corpus(root / "data", 16, size=128, seed=3)
    cfg = tiny_config(root)
    corpus = load_corpus(cfg.data.root, cfg.data.split_seed)
    train, val = corpus.split(cfg.data.val_count)
    store = AssetStore(cfg.train.asset_dir)
    run_stage0(cfg, train, val, store)
    trainer = Stage1Trainer(cfg, 1, train, store, root / "runs/stage1_l1")
    trainer.train(6)
    train_ckpt, deploy_ckpt = trainer.checkpoint_paths()
    return {
        "root": root,
        "cfg": cfg,
        "train": train,
        "val": val,
        "store": store,
        "trainer": trainer,
        "train_ckpt": train_ckpt,
        "deploy_ckpt": deploy_ckpt,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
