"""Synthetic corpus generator.

Piecewise-smooth compositions (gradients, anti-aliased shapes, mild stripe
textures) keep the repo self-contained: they are simple enough for the small
stage-0 assets to model well, but carry enough structure that the codec has
to spend bits.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

_SS = 4  # supersampling factor for anti-aliased drawing


def _random_color(rng) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(0, 256, 3))


def _gradient(size: int, rng) -> Image.Image:
    c0 = np.array(_random_color(rng), dtype=np.float64)
    c1 = np.array(_random_color(rng), dtype=np.float64)
    xs, ys = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = xs * np.cos(angle) + ys * np.sin(angle)
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-9)
    if rng.random() < 0.3:  # radial
        ramp = np.hypot(xs - rng.uniform(0.2, 0.8), ys - rng.uniform(0.2, 0.8))
        ramp = ramp / (ramp.max() + 1e-9)
    arr = c0[None, None] * (1 - ramp[..., None]) + c1[None, None] * ramp[..., None]
    return Image.fromarray(arr.astype(np.uint8))


def make_image(size: int, rng: np.random.Generator) -> Image.Image:
    big = size * _SS
    img = _gradient(big, rng)
    draw = ImageDraw.Draw(img)
    for _ in range(int(rng.integers(2, 6))):
        shape = rng.choice(["ellipse", "rect", "line", "poly"])
        color = _random_color(rng)
        x0, y0 = rng.integers(0, big, 2)
        ww, hh = rng.integers(big // 10, big // 2, 2)
        box = [int(x0), int(y0), int(min(x0 + ww, big - 1)), int(min(y0 + hh, big - 1))]
        if box[0] >= box[2] or box[1] >= box[3]:
            continue
        if shape == "ellipse":
            draw.ellipse(box, fill=color)
        elif shape == "rect":
            draw.rectangle(box, fill=color)
        elif shape == "line":
            draw.line(box, fill=color, width=int(rng.integers(2, _SS * 6)))
        else:
            cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
            n = int(rng.integers(3, 7))
            angles = np.sort(rng.uniform(0, 2 * np.pi, n))
            radius = min(box[2] - box[0], box[3] - box[1]) / 2
            pts = [(cx + radius * np.cos(a), cy + radius * np.sin(a)) for a in angles]
            draw.polygon(pts, fill=color)
    if rng.random() < 0.5:  # mild stripe texture band
        arr = np.asarray(img).astype(np.float64)
        freq = rng.uniform(2, 8)
        phase = rng.uniform(0, 2 * np.pi)
        ys = np.linspace(0, 2 * np.pi * freq, big)
        stripe = 8.0 * np.sin(ys + phase)
        top = int(rng.integers(0, big // 2))
        band = slice(top, top + int(rng.integers(big // 8, big // 2)))
        arr[band, :, :] = np.clip(arr[band, :, :] + stripe[band, None, None], 0, 255)
        img = Image.fromarray(arr.astype(np.uint8))
    img = img.resize((size, size), Image.LANCZOS)
    return img.filter(ImageFilter.GaussianBlur(radius=0.85))


def generate_corpus(out_dir: str | Path, count: int, size: int = 160, seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        img = make_image(size, rng)
        path = out / f"synth_{i:05d}.png"
        img.save(path)
        paths.append(path)
    return paths
