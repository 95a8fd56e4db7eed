"""End-to-end image encoder/decoder built on a trained system checkpoint.

Encoding produces the `.odc` container: fixed-rate hyper segment plus the
rANS-coded main latent, symbols ordered by coding pass, raster position,
then channel. Decoding re-derives the entropy parameters pass by pass, so
the latent and hyper code are recovered bit-exactly before the generator
synthesizes pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import bitstream
from .coder import get_backend
from .data import pad_to_multiple, to_uint8
from .diffusion import one_step_generate
from .entropy_model import build_cdf_batch, pass_schedule, predict_params, rate_estimate
from .errors import ConfigError, DecodeError, EncodeError
from .hyperprior import fsq_quantize, pack_hyper_segment, unpack_hyper_segment
from .latent_codec import round_half_away
from .rans import SYMBOL_MAX, SYMBOL_MIN
from .training import CodecSystem


@dataclass
class CodedImage:
    data: bytes
    y_hat: np.ndarray  # (C, h16, w16) int64
    codes: np.ndarray  # (7, h64, w64) int64
    bpp: float
    hyper_bits: int
    main_bits: int
    est_main_bits: float
    clamped_symbols: int

    def segment_report(self) -> str:
        return (
            f"bpp={self.bpp:.6f} header=14B hyper={self.hyper_bits // 8}B "
            f"main={self.main_bits // 8}B est_main={self.est_main_bits / 8:.1f}B"
        )


@dataclass
class DecodedImage:
    image: np.ndarray  # (H, W, 3) float32, original extent
    y_hat: np.ndarray
    codes: np.ndarray


class ImageCodec:
    def __init__(self, system: CodecSystem, lambda_index: int, backend=None):
        self.system = system
        self.lambda_index = lambda_index
        cfg = system.cfg
        self.backend = backend or get_backend(cfg.coder.backend, cfg.coder.fast_cli)
        system.eval_mode()

    @classmethod
    def from_checkpoint(cls, path: str | Path, lambda_index: int | None = None, backend_name: str | None = None):
        system, meta = CodecSystem.load_deploy(path)
        ckpt_index = meta.get("lambda_index")
        if lambda_index is not None and ckpt_index != lambda_index:
            raise ConfigError(
                f"checkpoint carries lambda index {ckpt_index}, refusing requested {lambda_index}"
            )
        backend = None
        if backend_name:
            backend = get_backend(backend_name, system.cfg.coder.fast_cli)
        return cls(system, ckpt_index, backend)

    def _symbol_plan(self, mean_t: torch.Tensor, scale_t: torch.Tensor, pass_mask: np.ndarray):
        """Per-pass (means, scales) in normative order: raster position, then channel."""
        mean = mean_t[0].detach().numpy()  # (C, h, w)
        scale = scale_t[0].detach().numpy()
        rows, cols = np.nonzero(pass_mask)
        means = mean[:, rows, cols].T.reshape(-1)  # position-major, channel-minor
        scales = scale[:, rows, cols].T.reshape(-1)
        return means, scales, rows, cols

    @torch.no_grad()
    def encode(self, image: np.ndarray) -> CodedImage:
        sys = self.system
        padded, (orig_h, orig_w) = pad_to_multiple(image.astype(np.float32), 64)
        x = torch.from_numpy(padded).permute(2, 0, 1)[None]
        vlat = sys.vae.encode(x)
        y = sys.g_a(x, vlat)
        y_hat = round_half_away(y)
        z = sys.h_enc(y)
        codes_t, _ = fsq_quantize(z)
        codes = codes_t[0].numpy().astype(np.int64)
        hyper_bytes = pack_hyper_segment(codes)

        clamped = int(((y_hat < SYMBOL_MIN) | (y_hat > SYMBOL_MAX)).sum())
        y_hat = torch.clamp(y_hat, SYMBOL_MIN, SYMBOL_MAX)

        hyper_ctx = sys.h_ctx(codes_t)
        h16, w16 = y_hat.shape[-2:]
        decoded_mask = np.zeros((h16, w16), dtype=bool)
        all_symbols: list[int] = []
        all_means: list[np.ndarray] = []
        all_scales: list[np.ndarray] = []
        for pass_mask in pass_schedule(h16, w16):
            mean, scale = predict_params(sys.entropy, hyper_ctx, y_hat, decoded_mask)
            means, scales, rows, cols = self._symbol_plan(mean, scale, pass_mask)
            symbols = y_hat[0].numpy()[:, rows, cols].T.reshape(-1).astype(np.int64)
            all_symbols.extend(int(s) for s in symbols)
            all_means.append(means)
            all_scales.append(scales)
            decoded_mask = decoded_mask | pass_mask

        means = np.concatenate(all_means)
        scales = np.concatenate(all_scales)
        tables = build_cdf_batch(means, scales)
        main_bytes = self.backend.encode_symbols(all_symbols, tables)
        if len(main_bytes) > 0xFFFF:
            raise EncodeError("main segment exceeds the 16-bit container limit")

        est_bits = float(
            rate_estimate(
                torch.from_numpy(np.asarray(all_symbols, dtype=np.float64)),
                torch.from_numpy(means),
                torch.from_numpy(scales),
            )
        )
        data = bitstream.assemble(orig_w, orig_h, self.lambda_index, hyper_bytes, main_bytes)
        return CodedImage(
            data=data,
            y_hat=y_hat[0].numpy().astype(np.int64),
            codes=codes,
            bpp=len(data) * 8 / (orig_h * orig_w),
            hyper_bits=len(hyper_bytes) * 8,
            main_bits=len(main_bytes) * 8,
            est_main_bits=est_bits,
            clamped_symbols=clamped,
        )

    @torch.no_grad()
    def decode(self, data: bytes) -> DecodedImage:
        sys = self.system
        header, hyper_bytes, main_bytes = bitstream.parse(data)
        if header.lambda_index != self.lambda_index:
            raise ConfigError(
                f"stream was coded at lambda index {header.lambda_index}, "
                f"checkpoint is for {self.lambda_index}"
            )
        pad_h = -(-header.height // 64) * 64
        pad_w = -(-header.width // 64) * 64
        h64, w64 = pad_h // 64, pad_w // 64
        h16, w16 = pad_h // 16, pad_w // 16
        expected_hyper = (2 * 7 * h64 * w64 + 7) // 8
        if header.hyper_len != expected_hyper:
            raise DecodeError(
                f"hyper segment of {header.hyper_len} bytes does not match the "
                f"{h64}x{w64} grid (expected {expected_hyper})"
            )
        codes = unpack_hyper_segment(hyper_bytes, h64, w64)
        codes_t = torch.from_numpy(codes.astype(np.int64))[None]
        hyper_ctx = sys.h_ctx(codes_t)

        decoder = self.backend.start_decoder(main_bytes)
        y_hat = torch.zeros((1, sys.cfg.model.y_channels, h16, w16))
        decoded_mask = np.zeros((h16, w16), dtype=bool)
        for pass_mask in pass_schedule(h16, w16):
            mean, scale = predict_params(sys.entropy, hyper_ctx, y_hat, decoded_mask)
            means, scales, rows, cols = self._symbol_plan(mean, scale, pass_mask)
            tables = build_cdf_batch(means, scales)
            symbols = np.asarray(decoder.decode(tables), dtype=np.float32)
            grid = symbols.reshape(len(rows), -1).T  # back to (C, n_positions)
            y_hat[0][:, rows, cols] = torch.from_numpy(grid)
            decoded_mask = decoded_mask | pass_mask
        decoder.finish()

        tokens = sys.h_sem(codes_t)
        y_t = sys.g_s(y_hat)
        y0 = one_step_generate(sys.unet, y_t, tokens, sys.cfg.model.t_gen, sys.schedule)
        recon = sys.vae.decode(y0)[0].permute(1, 2, 0).numpy()
        recon = recon[: header.height, : header.width]
        return DecodedImage(
            image=recon,
            y_hat=y_hat[0].numpy().astype(np.int64),
            codes=codes.astype(np.int64),
        )

    def decode_to_uint8(self, data: bytes) -> np.ndarray:
        return to_uint8(self.decode(data).image)
