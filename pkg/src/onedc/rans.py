"""Reference rANS stream coder.

Canonical (slow) implementation of the normative coding contract:

* 32-bit state, 16-bit probability precision, byte-wise renormalization.
* Symbols are consumed in model order; the encoder walks them in reverse
  (rANS is LIFO) and the decoder re-emits them forward.
* Stream layout: 4-byte big-endian final state, then the renormalization
  bytes in decoder-consumption order.
* The empty stream is exactly the 4 flush bytes of the initial state.

Every alternative backend must reproduce these bytes exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DecodeError, EncodeError

RANS_L = 1 << 23  # lower bound of the normalized state interval
PROB_BITS = 16
PROB_SCALE = 1 << PROB_BITS

SYMBOL_MIN = -64
SYMBOL_MAX = 63
NUM_SYMBOLS = SYMBOL_MAX - SYMBOL_MIN + 1  # 128

TABLE_BYTES = 1 + 2 * (NUM_SYMBOLS + 1)  # packed wire size: offset + 129 u16


@dataclass(frozen=True)
class CdfTable:
    """Quantized CDF over a contiguous symbol range.

    cdf has length L+1 with cdf[0] == 0 and cdf[L] == PROB_SCALE, strictly
    increasing (every symbol keeps at least one count).
    """

    offset: int
    cdf: np.ndarray

    def __post_init__(self):
        cdf = self.cdf
        if cdf[0] != 0 or cdf[-1] != PROB_SCALE or np.any(np.diff(cdf) < 1):
            raise EncodeError("malformed CDF table")

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    def freq_start(self, symbol: int) -> tuple[int, int]:
        idx = symbol - self.offset
        if not 0 <= idx < self.num_symbols:
            raise EncodeError(
                f"symbol {symbol} outside table range "
                f"[{self.offset}, {self.offset + self.num_symbols - 1}]"
            )
        lo = int(self.cdf[idx])
        return int(self.cdf[idx + 1]) - lo, lo

    def pack(self) -> bytes:
        """Wire layout shared with other backends.

        Signed 8-bit symbol offset, then each cumulative count as big-endian
        u16 modulo 65536 (only the final entry is 65536, stored as 0).
        """
        out = bytearray(struct.pack(">b", self.offset))
        for v in self.cdf:
            out += struct.pack(">H", int(v) & 0xFFFF)
        return bytes(out)

    @classmethod
    def unpack(cls, data: bytes) -> "CdfTable":
        if len(data) != TABLE_BYTES:
            raise DecodeError(f"packed table must be {TABLE_BYTES} bytes")
        offset = struct.unpack_from(">b", data, 0)[0]
        vals = np.frombuffer(data[1:], dtype=">u2").astype(np.int64)
        vals = vals.copy()
        vals[-1] = PROB_SCALE
        return cls(offset, vals)


def encode_symbols(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    """Entropy-code symbols against their per-symbol tables."""
    if len(symbols) != len(tables):
        raise EncodeError(
            f"{len(symbols)} symbols but {len(tables)} tables; one table per symbol"
        )
    x = RANS_L
    emitted = bytearray()
    for sym, table in zip(reversed(symbols), reversed(tables)):
        freq, start = table.freq_start(int(sym))
        x_max = freq << (PROB_BITS - 1)
        while x >= x_max:
            emitted.append(x & 0xFF)
            x >>= 8
        x = ((x // freq) << PROB_BITS) + (x % freq) + start
    emitted.reverse()
    return struct.pack(">I", x) + bytes(emitted)


class RansDecoder:
    """Incremental decoder; passes of a stream may be decoded one at a time."""

    def __init__(self, data: bytes):
        if len(data) < 4:
            raise DecodeError("stream shorter than the 4 flush bytes")
        self.data = data
        self.state = struct.unpack_from(">I", data, 0)[0]
        self.pos = 4
        if self.state < RANS_L:
            raise DecodeError("initial state below normalization bound")

    def decode(self, tables: Iterable[CdfTable]) -> list[int]:
        out = []
        x = self.state
        data = self.data
        pos = self.pos
        for table in tables:
            low = x & (PROB_SCALE - 1)
            idx = int(np.searchsorted(table.cdf, low, side="right")) - 1
            lo = int(table.cdf[idx])
            freq = int(table.cdf[idx + 1]) - lo
            x = freq * (x >> PROB_BITS) + low - lo
            while x < RANS_L:
                if pos >= len(data):
                    raise DecodeError("stream truncated mid-symbol")
                x = (x << 8) | data[pos]
                pos += 1
            out.append(idx + table.offset)
        self.state = x
        self.pos = pos
        return out

    def finish(self) -> None:
        """Integrity check: a well-formed stream ends back at the start state."""
        if self.state != RANS_L:
            raise DecodeError("final state mismatch; stream corrupt or tables wrong")
        if self.pos != len(self.data):
            raise DecodeError(
                f"{len(self.data) - self.pos} unconsumed trailing bytes"
            )


def decode_symbols(data: bytes, tables: Sequence[CdfTable]) -> list[int]:
    """One-shot inverse of encode_symbols, with the end-state integrity check."""
    dec = RansDecoder(data)
    out = dec.decode(tables)
    dec.finish()
    return out
