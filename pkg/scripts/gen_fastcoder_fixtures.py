#!/usr/bin/env python3
"""Differential fixtures for the fast coder: randomized (symbols, tables)
streams with the reference coder's exact output bytes.

Layout (big-endian):
  magic "FCF1"
  u32 pool size, pool tables (259 bytes each)
  u32 case count
  per case: u32 n_symbols, n x u16 pool ids, n x i8 symbols,
            u32 ref length, ref bytes
"""

import argparse
import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from onedc.entropy_model import build_cdf_batch
from onedc.rans import encode_symbols


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="fastcoder/test/fixtures/streams.bin")
    ap.add_argument("--cases", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    pool_means = np.concatenate([rng.normal(0, 6, 192), rng.uniform(-60, 59, 64)])
    pool_scales = np.concatenate([rng.uniform(0.11, 12, 192), rng.uniform(0.11, 300, 64)])
    pool = build_cdf_batch(pool_means, pool_scales)

    out = bytearray(b"FCF1")
    out += struct.pack(">I", len(pool))
    for table in pool:
        out += table.pack()

    out += struct.pack(">I", args.cases)
    for case in range(args.cases):
        n = 0 if case < 5 else int(rng.integers(1, 101))
        ids = rng.integers(0, len(pool), n)
        tables = [pool[i] for i in ids]
        symbols = []
        for i in ids:
            mean, scale = pool_means[i], pool_scales[i]
            symbols.append(int(np.clip(round(rng.normal(mean, scale)), -64, 63)))
        ref = encode_symbols(symbols, tables)
        out += struct.pack(">I", n)
        out += struct.pack(f">{n}H", *[int(i) for i in ids])
        out += struct.pack(f">{n}b", *symbols)
        out += struct.pack(">I", len(ref))
        out += ref

    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(out))
    print(f"wrote {args.cases} cases ({len(out)} bytes) to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
