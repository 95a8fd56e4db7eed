import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from onedc.cli import main
from onedc.config import to_dict
from onedc.data import load_image


def run_cli(*args):
    return main(list(args))


def test_synth_command(tmp_path, capsys):
    assert run_cli("synth", "--out", str(tmp_path / "d"), "--count", "3", "--size", "64") == 0
    assert len(list((tmp_path / "d").glob("*.png"))) == 3


def test_encode_decode_round_trip(tiny_run, tmp_path, capsys):
    img = tiny_run["val"][0]
    src = tmp_path / "in.png"
    Image.fromarray((img.pixels * 255).astype(np.uint8)).save(src)
    odc = tmp_path / "out.odc"
    rc = run_cli(
        "encode", "--input", str(src), "--checkpoint", str(tiny_run["deploy_ckpt"]),
        "--lambda-index", "1", "--output", str(odc),
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "config_hash" in out and "bpp=" in out
    assert odc.exists()

    dst = tmp_path / "rec.png"
    rc = run_cli("decode", "--input", str(odc), "--checkpoint", str(tiny_run["deploy_ckpt"]),
                 "--output", str(dst))
    assert rc == 0
    rec = load_image(dst)
    assert rec.shape == img.pixels.shape

    # decode determinism at the byte level
    dst2 = tmp_path / "rec2.png"
    run_cli("decode", "--input", str(odc), "--checkpoint", str(tiny_run["deploy_ckpt"]),
            "--output", str(dst2))
    assert dst.read_bytes() == dst2.read_bytes()


def test_encode_lambda_mismatch_is_user_error(tiny_run, tmp_path, capsys):
    img = tiny_run["val"][0]
    src = tmp_path / "in.png"
    Image.fromarray((img.pixels * 255).astype(np.uint8)).save(src)
    rc = run_cli(
        "encode", "--input", str(src), "--checkpoint", str(tiny_run["deploy_ckpt"]),
        "--lambda-index", "3", "--output", str(tmp_path / "x.odc"),
    )
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_stage2_without_stage1_is_actionable(tmp_path, capsys):
    import yaml

    cfgfile = tmp_path / "cfg.yaml"
    from conftest import tiny_config

    cfg = tiny_config(tmp_path)
    (tmp_path / "data").mkdir(exist_ok=True)
    Image.fromarray(np.zeros((128, 128, 3), np.uint8)).save(tmp_path / "data/a.png")
    Image.fromarray(np.full((128, 128, 3), 128, np.uint8)).save(tmp_path / "data/b.png")
    Image.fromarray(np.full((128, 128, 3), 200, np.uint8)).save(tmp_path / "data/c.png")
    cfgfile.write_text(yaml.safe_dump({
        "data": {"root": str(tmp_path / "data"), "val_count": 1},
        "train": {"asset_dir": str(tmp_path / "assets"), "run_dir": str(tmp_path / "runs")},
    }))
    rc = run_cli("train", "--config", str(cfgfile), "--stage", "2", "--lambda-index", "1")
    assert rc == 2
    err = capsys.readouterr().err
    assert "stage 1" in err


def test_bdrate_identical_csvs(tmp_path, capsys):
    from onedc.evaluation import write_rd_csv

    rows = [
        {"codec_id": "a", "lambda_index": i, "image": "__mean__", "bpp": b,
         "psnr": q, "msssim": 0.9, "bytes": 1, "est_main_bits": 1, "main_bits": 1,
         "hyper_bits": 1, "clamped_symbols": 0}
        for i, (b, q) in enumerate([(0.01, 30.0), (0.02, 33.0), (0.04, 36.0), (0.08, 39.0)])
    ]
    csv_path = tmp_path / "c.csv"
    write_rd_csv(csv_path, rows)
    rc = run_cli("bdrate", "--anchor", str(csv_path), "--test", str(csv_path))
    assert rc == 0
    assert "0.00%" in capsys.readouterr().out


def test_unknown_config_key_is_user_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("data:\n  wrong_key: 1\n")
    rc = run_cli("train", "--config", str(bad), "--stage", "0")
    assert rc == 2


def test_usage_error_exit_code():
    proc = subprocess.run(
        [sys.executable, "-m", "onedc.cli", "train"],
        capture_output=True, cwd="/root/pkg",
    )
    assert proc.returncode == 2  # argparse usage error


def test_eval_writes_rd_rows(tiny_run, tmp_path):
    import yaml

    from onedc.evaluation import read_rd_csv

    cfgfile = tmp_path / "cfg.yaml"
    cfgfile.write_text(yaml.safe_dump({"data": to_dict(tiny_run["cfg"].data)}))
    out = tmp_path / "rd.csv"
    rc = run_cli(
        "eval", "--config", str(cfgfile), "--checkpoint", str(tiny_run["deploy_ckpt"]),
        "--dataset", str(tiny_run["root"] / "data"), "--out", str(out), "--limit", "2",
    )
    assert rc == 0
    rows = read_rd_csv(out)
    assert len(rows) == 3  # 2 images + aggregate
    assert rows[-1]["image"] == "__mean__"
    assert float(rows[0]["bpp"]) > 0
