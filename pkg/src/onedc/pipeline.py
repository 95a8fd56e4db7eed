"""High-level run orchestration shared by the CLI and the acceptance runner."""

from __future__ import annotations

import logging
from pathlib import Path

from .assets import AssetStore, run_stage0
from .codec import ImageCodec
from .config import LAMBDA_PRESETS, RunConfig
from .data import Corpus, load_corpus
from .errors import AssetError
from .evaluation import (
    bd_rate,
    curve_from_rows,
    evaluate_codec,
    write_bdrate_report,
    write_rd_csv,
)
from .training import Stage1Trainer, Stage2Trainer

log = logging.getLogger(__name__)


def corpora_from_cfg(cfg: RunConfig) -> tuple[Corpus, Corpus]:
    if cfg.data.val_root:
        return (
            load_corpus(cfg.data.root, cfg.data.split_seed),
            load_corpus(cfg.data.val_root, cfg.data.split_seed),
        )
    corpus = load_corpus(cfg.data.root, cfg.data.split_seed)
    train, val = corpus.split(cfg.data.val_count)
    return train, val


def export_val_dir(cfg: RunConfig) -> Path:
    """Materialize the held-out split as a plain directory of images."""
    import shutil

    _, val = corpora_from_cfg(cfg)
    out = Path(cfg.train.run_dir) / "val"
    out.mkdir(parents=True, exist_ok=True)
    for path in val.paths:
        target = out / path.name
        if not target.exists():
            shutil.copy2(path, target)
    return out


def stage1_dir(cfg: RunConfig, lambda_index: int, alpha_zero: bool = False) -> Path:
    tag = f"stage1_l{lambda_index}" + ("_a0" if alpha_zero else "")
    return Path(cfg.train.run_dir) / tag


def stage2_dir(cfg: RunConfig, lambda_index: int) -> Path:
    return Path(cfg.train.run_dir) / f"stage2_l{lambda_index}"


def stage1_deploy_path(cfg: RunConfig, lambda_index: int, alpha_zero: bool = False) -> Path:
    tag = f"l{lambda_index}" + ("_a0" if alpha_zero else "")
    return stage1_dir(cfg, lambda_index, alpha_zero) / f"deploy_{tag}.ckpt"


def run_stage0_cmd(cfg: RunConfig) -> dict:
    train, val = corpora_from_cfg(cfg)
    store = AssetStore(cfg.asset_dir())
    return run_stage0(cfg, train, val, store)


def run_stage1_cmd(
    cfg: RunConfig,
    lambda_index: int,
    steps: int | None = None,
    alpha_zero: bool = False,
    resume: str | None = None,
    custom_lambda: float | None = None,
) -> Path:
    train, _ = corpora_from_cfg(cfg)
    store = AssetStore(cfg.asset_dir())
    trainer = Stage1Trainer(
        cfg,
        lambda_index,
        train,
        store,
        stage1_dir(cfg, lambda_index, alpha_zero),
        custom_lambda=custom_lambda,
        alpha=0.0 if alpha_zero else None,
    )
    if resume:
        trainer.restore(resume)
    return trainer.train(steps)


def run_stage2_cmd(
    cfg: RunConfig,
    lambda_index: int,
    steps: int | None = None,
    init_from: str | None = None,
) -> Path:
    train, _ = corpora_from_cfg(cfg)
    store = AssetStore(cfg.asset_dir())
    deploy = Path(init_from) if init_from else stage1_deploy_path(cfg, lambda_index)
    if not deploy.exists():
        raise AssetError(
            f"stage 2 needs the stage 1 checkpoint {deploy}; train stage 1 first"
        )
    trainer = Stage2Trainer(cfg, lambda_index, train, store, stage2_dir(cfg, lambda_index), deploy)
    return trainer.train(steps)


def eval_checkpoints(
    cfg: RunConfig,
    checkpoints: list[str],
    dataset: str,
    out_csv: str,
    limit: int | None = None,
    codec_id: str = "onedc",
    backend: str | None = None,
) -> list[dict]:
    corpus = load_corpus(dataset, cfg.data.split_seed)
    rows: list[dict] = []
    for path in checkpoints:
        codec = ImageCodec.from_checkpoint(path, backend_name=backend)
        result = evaluate_codec(codec, corpus, codec_id, limit=limit)
        rows.extend(result["rows"])
        rows.append(result["aggregate"])
        log.info(
            "eval %s: bpp %.5f psnr %.2f msssim %.4f",
            path, result["aggregate"]["bpp"], result["aggregate"]["psnr"],
            result["aggregate"]["msssim"],
        )
    write_rd_csv(out_csv, rows)
    _plot_aggregates(rows, Path(out_csv))
    return rows


def _plot_aggregates(rows: list[dict], csv_path: Path) -> None:
    from .evaluation import RDPoint, plot_rd

    aggs = [r for r in rows if r["image"] == "__mean__"]
    if not aggs:
        return
    for metric in ("psnr", "msssim"):
        curves: dict[str, list[RDPoint]] = {}
        for r in aggs:
            curves.setdefault(str(r["codec_id"]), []).append(
                RDPoint(float(r["bpp"]), float(r[metric]), metric, str(r["codec_id"]))
            )
        for pts in curves.values():
            pts.sort(key=lambda p: p.bpp)
        plot_rd(curves, csv_path.with_name(csv_path.stem + f"_{metric}.png"), metric)


def run_ablation(
    cfg: RunConfig,
    dataset: str,
    out_csv: str,
    steps: int | None = None,
    limit: int | None = None,
) -> list[dict]:
    """Table comparing the code-prediction loss on vs off.

    The main run's stage-1 checkpoints are the alpha-on arm; alpha=0 arms are
    trained on demand at the same step budget, then both arms are evaluated
    and the delta rate per metric is reported (direction recorded, not
    asserted).
    """
    corpus = load_corpus(dataset, cfg.data.split_seed)
    rows_by_arm: dict[str, list[dict]] = {}
    for alpha_zero in (False, True):
        rows: list[dict] = []
        for idx in range(len(LAMBDA_PRESETS)):
            deploy = stage1_deploy_path(cfg, idx, alpha_zero)
            if not deploy.exists():
                log.info("training missing ablation arm: lambda %d alpha_zero=%s", idx, alpha_zero)
                run_stage1_cmd(cfg, idx, steps=steps, alpha_zero=alpha_zero)
            codec = ImageCodec.from_checkpoint(deploy)
            result = evaluate_codec(codec, corpus, "alpha0" if alpha_zero else "base", limit=limit)
            rows.append(result["aggregate"])
        rows_by_arm["alpha0" if alpha_zero else "base"] = rows

    entries = []
    for metric in ("psnr", "msssim"):
        anchor = curve_from_rows(rows_by_arm["base"], "base", metric)
        test = curve_from_rows(rows_by_arm["alpha0"], "alpha0", metric)
        entries.append(
            {
                "anchor": "base",
                "test": "alpha0",
                "metric": metric,
                "bdrate_pct": f"{bd_rate(anchor, test):.4f}",
            }
        )
    write_bdrate_report(out_csv, entries)
    return entries
