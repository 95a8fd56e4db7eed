"""Differential tests of the fast coder backend through the subprocess bridge.

These run only when the node package has been built (npm run build); the
reference-backend suite is independent of them.
"""

import struct
from pathlib import Path

import numpy as np
import pytest

from onedc.coder import FastBackend, ReferenceBackend
from onedc.entropy_model import build_cdf_batch
from onedc.errors import DecodeError

FAST_CLI = Path("fastcoder/dist/cli.js")

pytestmark = pytest.mark.skipif(
    not FAST_CLI.exists(), reason="fast coder not built (cd fastcoder && npm run build)"
)


@pytest.fixture(scope="module")
def backends():
    return ReferenceBackend(), FastBackend(str(FAST_CLI))


def _random_streams(rng, count, max_len=80):
    streams = []
    for _ in range(count):
        n = int(rng.integers(0, max_len))
        means = rng.normal(0, 5, n)
        scales = rng.uniform(0.11, 20, n)
        tables = build_cdf_batch(means, scales)
        symbols = [
            int(np.clip(round(rng.normal(m, s)), -64, 63)) for m, s in zip(means, scales)
        ]
        streams.append((symbols, tables))
    return streams


def test_byte_parity_on_randomized_streams(backends, rng):
    ref, fast = backends
    streams = _random_streams(rng, 600)
    fast_outs = fast.encode_many(streams)
    for (symbols, tables), fast_bytes in zip(streams, fast_outs):
        ref_bytes = ref.encode_symbols(symbols, tables)
        assert fast_bytes == ref_bytes
        assert ref.decode_symbols(fast_bytes, tables) == symbols
        assert fast.decode_symbols(ref_bytes, tables) == symbols


def test_empty_stream_parity(backends):
    ref, fast = backends
    assert fast.encode_symbols([], []) == ref.encode_symbols([], []) == b"\x00\x80\x00\x00"


def test_incremental_decode_parity(backends, rng):
    ref, fast = backends
    (symbols, tables) = _random_streams(rng, 1, max_len=120)[0]
    data = ref.encode_symbols(symbols, tables)
    dec = fast.start_decoder(data)
    n = len(symbols)
    out = dec.decode(tables[: n // 2]) + dec.decode(tables[n // 2 :])
    dec.finish()
    assert out == symbols


def test_truncated_stream_is_typed_error(backends, rng):
    ref, fast = backends
    (symbols, tables) = _random_streams(rng, 1, max_len=60)[0]
    data = ref.encode_symbols(symbols, tables)
    with pytest.raises(DecodeError):
        fast.decode_symbols(data[:-1], tables)


def test_fuzzed_decode_never_crashes_the_bridge(backends, rng):
    _, fast = backends
    tables = build_cdf_batch(rng.normal(0, 3, 8), rng.uniform(0.11, 5, 8))
    packed = fast._frame_tables(tables)
    req = bytearray(struct.pack(">I", 300))
    for _ in range(300):
        blob = rng.bytes(int(rng.integers(0, 50)))
        req += struct.pack(">BI", 1, len(tables))
        req += packed
        req += struct.pack(">IIQ", 1 << 23, 0, len(blob))
        req += blob
    # one batched call: the node process must exit cleanly with 300 framed
    # responses, each either symbols or a typed error
    resp = fast._call(bytes(req))
    from onedc.coder import _parse_responses

    frames = _parse_responses(resp, 300)
    assert len(frames) == 300
    assert all(status in (0, 1) for status, _ in frames)


def test_real_image_parity(backends, tiny_run):
    from onedc.codec import ImageCodec

    ref, fast = backends
    codec_ref = ImageCodec.from_checkpoint(tiny_run["deploy_ckpt"], backend_name="reference")
    codec_fast = ImageCodec.from_checkpoint(tiny_run["deploy_ckpt"], backend_name="fast")
    for i in range(2):
        img = tiny_run["val"][i].pixels
        a = codec_ref.encode(img)
        b = codec_fast.encode(img)
        assert a.data == b.data
        dec = codec_fast.decode(a.data)
        assert np.array_equal(dec.y_hat, a.y_hat)
        assert np.array_equal(dec.codes, a.codes)


def test_cli_coder_flag_byte_identical(tiny_run, tmp_path):
    from PIL import Image

    from onedc.cli import main

    img = tiny_run["val"][0]
    src = tmp_path / "in.png"
    Image.fromarray((img.pixels * 255).astype(np.uint8)).save(src)
    outs = {}
    for coder in ("reference", "fast"):
        dst = tmp_path / f"{coder}.odc"
        rc = main([
            "encode", "--input", str(src), "--checkpoint", str(tiny_run["deploy_ckpt"]),
            "--lambda-index", "1", "--output", str(dst), "--coder", coder,
        ])
        assert rc == 0
        outs[coder] = dst.read_bytes()
    assert outs["reference"] == outs["fast"]
