#!/usr/bin/env python3
"""Builds every training artifact the acceptance suite consumes.

Phases (all idempotent; finished artifacts are skipped):
  main    stage-1 runs for the four lambda presets, then the alpha=0
          ablation arms and the ablation report
  stage2  the stage-2 run for lambda index 1 (long; run concurrently)
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from onedc import pipeline
from onedc.config import LAMBDA_PRESETS, load_config

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
log = logging.getLogger("smoke")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/smoke.yaml")
    ap.add_argument("--phase", choices=("main", "stage2"), required=True)
    ap.add_argument("--stage2-steps", type=int, default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)

    if args.phase == "stage2":
        deploy = pipeline.stage2_dir(cfg, 1) / "deploy_l1.ckpt"
        pipeline.run_stage2_cmd(cfg, 1, steps=args.stage2_steps)
        log.info("stage2 artifact: %s", deploy)
        return 0

    # lambda 1 first so the stage-2 job can start as early as possible
    for idx in (1, 0, 2, 3):
        deploy = pipeline.stage1_deploy_path(cfg, idx)
        if deploy.exists():
            log.info("stage1 l%d already done", idx)
            continue
        log.info("training stage1 lambda index %d", idx)
        pipeline.run_stage1_cmd(cfg, idx)
    for idx in range(len(LAMBDA_PRESETS)):
        deploy = pipeline.stage1_deploy_path(cfg, idx, alpha_zero=True)
        if deploy.exists():
            continue
        log.info("training alpha-zero arm lambda index %d", idx)
        pipeline.run_stage1_cmd(cfg, idx, alpha_zero=True)
    val_dir = pipeline.export_val_dir(cfg)
    report = Path(cfg.train.run_dir) / "ablation_report.csv"
    log.info("building ablation report over %s", val_dir)
    pipeline.run_ablation(cfg, str(val_dir), str(report))
    log.info("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
