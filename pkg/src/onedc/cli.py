"""Command-line surface: training stages, encode/decode, evaluation, reports.

Exit codes: 0 success, 2 user/input error, 1 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from .config import LAMBDA_PRESETS, load_config
from .errors import OnedcError

log = logging.getLogger("onedc")


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML run configuration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onedc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic image corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run a training stage")
    _add_config_arg(p)
    p.add_argument("--stage", type=int, choices=(0, 1, 2), required=True)
    p.add_argument("--lambda-index", type=int, default=1)
    p.add_argument("--custom-lambda", type=float, default=None)
    p.add_argument("--alpha-zero", action="store_true", help="disable the code-prediction loss")
    p.add_argument("--steps", type=int, default=None, help="override configured step count")
    p.add_argument("--resume", default=None, help="training checkpoint to resume from")
    p.add_argument("--init-from", default=None, help="stage-1 deploy checkpoint for stage 2")

    p = sub.add_parser("encode", help="compress an image to .odc")
    _add_config_arg(p)
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lambda-index", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--coder", choices=("reference", "fast"), default=None)

    p = sub.add_parser("decode", help="reconstruct an image from .odc")
    _add_config_arg(p)
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--coder", choices=("reference", "fast"), default=None)

    p = sub.add_parser("eval", help="encode/decode a dataset and emit RD rows")
    _add_config_arg(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--coder", choices=("reference", "fast"), default=None)

    p = sub.add_parser("bdrate", help="delta rate between two RD csv files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=("psnr", "msssim"), default="psnr")
    p.add_argument("--out", default=None)

    p = sub.add_parser("ablate", help="code-prediction ablation table")
    _add_config_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)

    return parser


def _cmd_synth(args) -> int:
    from .synth import generate_corpus

    paths = generate_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images under {args.out}")
    return 0


def _cmd_train(args) -> int:
    from . import pipeline

    cfg = load_config(args.config)
    print(f"config_hash {cfg.config_hash()}")
    if args.stage == 0:
        gates = pipeline.run_stage0_cmd(cfg)
        print(f"stage 0 complete; gates: {gates}")
    elif args.stage == 1:
        deploy = pipeline.run_stage1_cmd(
            cfg,
            args.lambda_index,
            steps=args.steps,
            alpha_zero=args.alpha_zero,
            resume=args.resume,
            custom_lambda=args.custom_lambda,
        )
        print(f"stage 1 complete; deploy checkpoint {deploy}")
    else:
        deploy = pipeline.run_stage2_cmd(
            cfg, args.lambda_index, steps=args.steps, init_from=args.init_from
        )
        print(f"stage 2 complete; deploy checkpoint {deploy}")
    return 0


def _cmd_encode(args) -> int:
    from .codec import ImageCodec
    from .data import load_image

    codec = ImageCodec.from_checkpoint(args.checkpoint, args.lambda_index, args.coder)
    coded = codec.encode(load_image(args.input))
    Path(args.output).write_bytes(coded.data)
    print(f"config_hash {codec.system.cfg.config_hash()}")
    print(coded.segment_report())
    return 0


def _cmd_decode(args) -> int:
    from PIL import Image

    from .codec import ImageCodec

    codec = ImageCodec.from_checkpoint(args.checkpoint, backend_name=args.coder)
    out = codec.decode_to_uint8(Path(args.input).read_bytes())
    Image.fromarray(out).save(args.output)
    print(f"config_hash {codec.system.cfg.config_hash()}")
    print(f"wrote {args.output} ({out.shape[1]}x{out.shape[0]})")
    return 0


def _cmd_eval(args) -> int:
    from . import pipeline

    cfg = load_config(args.config)
    print(f"config_hash {cfg.config_hash()}")
    pipeline.eval_checkpoints(
        cfg, args.checkpoint, args.dataset, args.out, limit=args.limit, backend=args.coder
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_bdrate(args) -> int:
    from .evaluation import bd_rate, curve_from_rows, read_rd_csv, write_bdrate_report

    anchor_rows = read_rd_csv(args.anchor)
    test_rows = read_rd_csv(args.test)
    value = bd_rate(
        curve_from_rows(anchor_rows, "anchor", args.metric),
        curve_from_rows(test_rows, "test", args.metric),
    )
    print(f"bd-rate[{args.metric}] test vs anchor: {value:.2f}%")
    if args.out:
        write_bdrate_report(
            args.out,
            [{"anchor": args.anchor, "test": args.test, "metric": args.metric,
              "bdrate_pct": f"{value:.4f}"}],
        )
    return 0


def _cmd_ablate(args) -> int:
    from . import pipeline

    cfg = load_config(args.config)
    print(f"config_hash {cfg.config_hash()}")
    entries = pipeline.run_ablation(cfg, args.dataset, args.out, steps=args.steps, limit=args.limit)
    for e in entries:
        print(f"{e['metric']}: alpha0 vs base bd-rate {e['bdrate_pct']}%")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "bdrate": _cmd_bdrate,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except OnedcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
