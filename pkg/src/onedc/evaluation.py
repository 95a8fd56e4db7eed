"""RD-curve collection, Bjontegaard delta rate, and the timing harness."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError
from .metrics import ms_ssim, psnr


@dataclass(frozen=True)
class RDPoint:
    bpp: float  # from actual file bytes, header included
    metric: float
    metric_name: str
    codec_id: str


def make_curve(points: list[RDPoint]) -> list[RDPoint]:
    if len(points) < 4:
        raise EvaluationError(f"an RD curve needs >= 4 points, got {len(points)}")
    names = {p.metric_name for p in points}
    if len(names) != 1:
        raise EvaluationError(f"mixed metrics in one curve: {names}")
    pts = sorted(points, key=lambda p: p.bpp)
    if any(b.bpp <= a.bpp for a, b in zip(pts, pts[1:])):
        raise EvaluationError("curve bpp values must be strictly increasing")
    return pts


def bd_rate(anchor: list[RDPoint], test: list[RDPoint]) -> float:
    """Average bitrate difference (%) of `test` vs `anchor` at equal quality.

    Cubic fit of log10(bpp) as a function of the metric, integrated over the
    overlapping quality interval. Negative means the test codec saves rate.
    """
    anchor = make_curve(anchor)
    test = make_curve(test)
    qa = np.array([p.metric for p in anchor])
    qt = np.array([p.metric for p in test])
    ra = np.log10([p.bpp for p in anchor])
    rt = np.log10([p.bpp for p in test])
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if hi <= lo:
        raise EvaluationError(
            f"quality ranges do not overlap: anchor [{qa.min()}, {qa.max()}], "
            f"test [{qt.min()}, {qt.max()}]"
        )
    fit_a = np.polyfit(qa, ra, 3)
    fit_t = np.polyfit(qt, rt, 3)
    int_a = np.polyval(np.polyint(fit_a), [lo, hi])
    int_t = np.polyval(np.polyint(fit_t), [lo, hi])
    avg_diff = ((int_t[1] - int_t[0]) - (int_a[1] - int_a[0])) / (hi - lo)
    return float((10.0**avg_diff - 1.0) * 100.0)


def evaluate_codec(codec, corpus, codec_id: str, limit: int | None = None) -> dict:
    """Encode/decode the corpus; per-image rows plus the aggregate RD point."""
    rows = []
    n = len(corpus) if limit is None else min(limit, len(corpus))
    for i in range(n):
        img = corpus[i]
        coded = codec.encode(img.pixels)
        decoded = codec.decode(coded.data)
        rows.append(
            {
                "codec_id": codec_id,
                "lambda_index": codec.lambda_index,
                "image": img.source_id,
                "bpp": coded.bpp,
                "psnr": psnr(img.pixels, decoded.image),
                "msssim": ms_ssim(img.pixels, decoded.image),
                "bytes": len(coded.data),
                "est_main_bits": coded.est_main_bits,
                "main_bits": coded.main_bits,
                "hyper_bits": coded.hyper_bits,
                "clamped_symbols": coded.clamped_symbols,
            }
        )
    agg = {
        "codec_id": codec_id,
        "lambda_index": codec.lambda_index,
        "image": "__mean__",
        "bpp": float(np.mean([r["bpp"] for r in rows])),
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "msssim": float(np.mean([r["msssim"] for r in rows])),
        "bytes": float(np.mean([r["bytes"] for r in rows])),
        "est_main_bits": float(np.sum([r["est_main_bits"] for r in rows])),
        "main_bits": int(np.sum([r["main_bits"] for r in rows])),
        "hyper_bits": int(np.sum([r["hyper_bits"] for r in rows])),
        "clamped_symbols": int(np.sum([r["clamped_symbols"] for r in rows])),
    }
    return {"rows": rows, "aggregate": agg}


RD_FIELDS = (
    "codec_id", "lambda_index", "image", "bpp", "psnr", "msssim", "bytes",
    "est_main_bits", "main_bits", "hyper_bits", "clamped_symbols",
)


def write_rd_csv(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RD_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_rd_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def curve_from_rows(rows: list[dict], codec_id: str, metric: str) -> list[RDPoint]:
    pts = [
        RDPoint(float(r["bpp"]), float(r[metric]), metric, codec_id)
        for r in rows
        if r["image"] == "__mean__"
    ]
    return make_curve(pts)


def write_bdrate_report(path: str | Path, entries: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("anchor", "test", "metric", "bdrate_pct"))
        writer.writeheader()
        writer.writerows(entries)


def timing_harness(fn, inputs, repetitions: int, warmup: int = 3) -> dict:
    """Median wall-clock seconds of fn over the inputs; warm-up runs excluded."""
    for _ in range(warmup):
        fn(inputs[0])
    times = []
    for rep in range(max(1, repetitions)):
        item = inputs[rep % len(inputs)]
        start = time.perf_counter()
        fn(item)
        times.append(time.perf_counter() - start)
    return {"median_s": statistics.median(times), "samples": times}


def plot_rd(curves: dict[str, list[RDPoint]], path: str | Path, metric_label: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, pts in curves.items():
        ax.plot([p.bpp for p in pts], [p.metric for p in pts], marker="o", label=name)
    ax.set_xlabel("bpp")
    ax.set_ylabel(metric_label)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
