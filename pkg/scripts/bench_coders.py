#!/usr/bin/env python3
"""Throughput benchmark: fast coder vs the reference on million-symbol streams.

The >=20x target is a soft gate; results are recorded, not enforced.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from onedc.coder import FastBackend, ReferenceBackend
from onedc.entropy_model import build_cdf_batch


def main() -> int:
    n = 1_000_000
    rng = np.random.default_rng(0)
    pool_means = rng.normal(0, 6, 256)
    pool_scales = rng.uniform(0.11, 12, 256)
    pool = build_cdf_batch(pool_means, pool_scales)
    ids = rng.integers(0, 256, n)
    tables = [pool[i] for i in ids]
    symbols = [
        int(np.clip(round(rng.normal(pool_means[i], pool_scales[i])), -64, 63)) for i in ids
    ]

    ref = ReferenceBackend()
    t0 = time.perf_counter()
    ref_bytes = ref.encode_symbols(symbols, tables)
    ref_enc = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref_out = ref.decode_symbols(ref_bytes, tables)
    ref_dec = time.perf_counter() - t0
    assert ref_out == symbols

    fast = FastBackend("fastcoder/dist/cli.js")
    t0 = time.perf_counter()
    fast_bytes = fast.encode_symbols(symbols, tables)
    fast_enc = time.perf_counter() - t0
    t0 = time.perf_counter()
    fast_out = fast.decode_symbols(fast_bytes, tables)
    fast_dec = time.perf_counter() - t0
    assert fast_bytes == ref_bytes
    assert fast_out == symbols

    report = {
        "symbols": n,
        "stream_bytes": len(ref_bytes),
        "reference_encode_s": ref_enc,
        "reference_decode_s": ref_dec,
        "fast_encode_s": fast_enc,
        "fast_decode_s": fast_dec,
        "encode_speedup": ref_enc / fast_enc,
        "decode_speedup": ref_dec / fast_dec,
        "note": "fast timings include subprocess marshaling; >=20x is a soft target",
    }
    out = Path("runs/coder_bench.json")
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
