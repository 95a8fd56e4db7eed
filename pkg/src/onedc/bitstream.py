"""`.odc` container: fixed 14-byte header plus the two coded segments.

All header integers are big-endian. Layout:

    offset  size  field
    0       4     magic "ODC1"
    4       1     version (currently 1)
    5       2     original image width  (pre-padding)
    7       2     original image height (pre-padding)
    9       1     lambda preset index
    10      2     hyper segment length in bytes
    12      2     main segment length in bytes
    14      ...   hyper segment, then main segment
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import BitstreamError

MAGIC = b"ODC1"
VERSION = 1
HEADER_LEN = 14
_MAX_U16 = 0xFFFF


@dataclass(frozen=True)
class Header:
    width: int
    height: int
    lambda_index: int
    hyper_len: int
    main_len: int


def assemble(
    width: int,
    height: int,
    lambda_index: int,
    hyper_bytes: bytes,
    main_bytes: bytes,
) -> bytes:
    for name, value in (
        ("width", width),
        ("height", height),
        ("hyper segment length", len(hyper_bytes)),
        ("main segment length", len(main_bytes)),
    ):
        if not 0 <= value <= _MAX_U16:
            raise BitstreamError(f"{name} {value} does not fit the 16-bit header field")
    if not 0 <= lambda_index <= 0xFF:
        raise BitstreamError(f"lambda index {lambda_index} does not fit one byte")
    header = MAGIC + struct.pack(
        ">BHHBHH", VERSION, width, height, lambda_index, len(hyper_bytes), len(main_bytes)
    )
    return header + hyper_bytes + main_bytes


def parse(data: bytes) -> tuple[Header, bytes, bytes]:
    if len(data) < HEADER_LEN:
        raise BitstreamError(f"stream of {len(data)} bytes shorter than the header")
    if data[:4] != MAGIC:
        raise BitstreamError("bad magic; not an .odc stream")
    version, width, height, lambda_index, hyper_len, main_len = struct.unpack_from(
        ">BHHBHH", data, 4
    )
    if version != VERSION:
        raise BitstreamError(f"unknown container version {version}")
    expected = HEADER_LEN + hyper_len + main_len
    if len(data) != expected:
        raise BitstreamError(
            f"length mismatch: header promises {expected} bytes, stream has {len(data)}"
        )
    hyper = data[HEADER_LEN : HEADER_LEN + hyper_len]
    main = data[HEADER_LEN + hyper_len :]
    return Header(width, height, lambda_index, hyper_len, main_len), hyper, main
