"""Coder backend selection.

The reference backend is the in-package rANS implementation. The fast
backend shells out to the TypeScript coder over a framed stdin/stdout
protocol, passing symbol buffers and packed CDF tables by value; its bytes
must equal the reference coder's exactly.
"""

from __future__ import annotations

import shutil
import struct
import subprocess
from pathlib import Path
from typing import Sequence

from . import rans
from .errors import DecodeError, EncodeError, OnedcError
from .rans import CdfTable

OP_ENCODE = 0
OP_DECODE = 1


class ReferenceBackend:
    name = "reference"

    def encode_symbols(self, symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
        return rans.encode_symbols(symbols, tables)

    def decode_symbols(self, data: bytes, tables: Sequence[CdfTable]) -> list[int]:
        return rans.decode_symbols(data, tables)

    def start_decoder(self, data: bytes) -> rans.RansDecoder:
        return rans.RansDecoder(data)


class _FastDecoder:
    """Streaming decode via repeated subprocess calls carrying explicit
    (state, cursor) resume values."""

    def __init__(self, backend: "FastBackend", data: bytes):
        if len(data) < 4:
            raise DecodeError("stream shorter than the 4 flush bytes")
        self.backend = backend
        self.data = data
        self.state = struct.unpack_from(">I", data, 0)[0]
        self.pos = 4
        if self.state < rans.RANS_L:
            raise DecodeError("initial state below normalization bound")

    def decode(self, tables: Sequence[CdfTable]) -> list[int]:
        symbols, self.state, self.pos = self.backend._decode_resume(
            self.data, tables, self.state, self.pos
        )
        return symbols

    def finish(self) -> None:
        if self.state != rans.RANS_L:
            raise DecodeError("final state mismatch; stream corrupt or tables wrong")
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} unconsumed trailing bytes")


class FastBackend:
    name = "fast"

    def __init__(self, cli_path: str):
        self.cli = Path(cli_path)
        if not self.cli.exists():
            raise OnedcError(
                f"fast coder not built: {cli_path} missing (node package not compiled)"
            )
        self.node = shutil.which("node")
        if not self.node:
            raise OnedcError("fast coder requires node on PATH")

    def _call(self, request: bytes) -> bytes:
        proc = subprocess.run(
            [self.node, str(self.cli)], input=request, stdout=subprocess.PIPE, check=False
        )
        if proc.returncode != 0:
            raise DecodeError(f"fast coder exited with {proc.returncode}")
        return proc.stdout

    @staticmethod
    def _frame_tables(tables: Sequence[CdfTable]) -> bytes:
        out = bytearray(struct.pack(">I", len(tables)))
        for table in tables:
            out += table.pack()
        return bytes(out)

    def encode_many(
        self, streams: Sequence[tuple[Sequence[int], Sequence[CdfTable]]]
    ) -> list[bytes]:
        req = bytearray(struct.pack(">I", len(streams)))
        for symbols, tables in streams:
            if len(symbols) != len(tables):
                raise EncodeError("one table per symbol required")
            req += struct.pack(">BI", OP_ENCODE, len(symbols))
            req += self._frame_tables(tables)
            req += struct.pack(f">{len(symbols)}b", *[int(s) for s in symbols])
        resp = self._call(bytes(req))
        return [payload for _, payload in _parse_responses(resp, len(streams))]

    def encode_symbols(self, symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
        return self.encode_many([(symbols, tables)])[0]

    def _decode_resume(
        self, data: bytes, tables: Sequence[CdfTable], state: int, pos: int
    ) -> tuple[list[int], int, int]:
        req = bytearray(struct.pack(">I", 1))
        req += struct.pack(">BI", OP_DECODE, len(tables))
        req += self._frame_tables(tables)
        req += struct.pack(">IIQ", state, pos, len(data))
        req += data
        resp = self._call(bytes(req))
        status, payload = _parse_responses(resp, 1)[0]
        if status != 0:
            raise DecodeError(payload.decode("utf-8", "replace"))
        new_state, new_pos = struct.unpack_from(">II", payload, 0)
        symbols = list(struct.unpack_from(f">{len(tables)}b", payload, 8))
        return symbols, new_state, new_pos

    def decode_symbols(self, data: bytes, tables: Sequence[CdfTable]) -> list[int]:
        dec = _FastDecoder(self, data)
        out = dec.decode(tables)
        dec.finish()
        return out

    def start_decoder(self, data: bytes) -> _FastDecoder:
        return _FastDecoder(self, data)


def _parse_responses(resp: bytes, expected: int) -> list[tuple[int, bytes]]:
    out = []
    pos = 0
    for _ in range(expected):
        if pos + 5 > len(resp):
            raise DecodeError("fast coder response truncated")
        status = resp[pos]
        (length,) = struct.unpack_from(">I", resp, pos + 1)
        pos += 5
        if pos + length > len(resp):
            raise DecodeError("fast coder response truncated")
        out.append((status, resp[pos : pos + length]))
        pos += length
    return out


def get_backend(name: str, fast_cli: str = "fastcoder/dist/cli.js"):
    if name == "reference":
        return ReferenceBackend()
    if name == "fast":
        return FastBackend(fast_cli)
    raise OnedcError(f"unknown coder backend {name!r}")
