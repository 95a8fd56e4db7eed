"""Corpus loading, deterministic splits, and multi-size random cropping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation, CorpusError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class ImagePlane:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    source_id: str

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class CropPolicy:
    sizes: tuple[int, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.probabilities):
            raise ContractViolation("crop sizes and probabilities must align")
        if any(p < 0 for p in self.probabilities):
            raise ContractViolation("crop probabilities must be non-negative")
        if abs(sum(self.probabilities) - 1.0) > 1e-9:
            raise ContractViolation("crop probabilities must sum to 1")


def to_unit(arr: np.ndarray) -> np.ndarray:
    """Map 8-bit pixels to [0, 1]."""
    return (arr.astype(np.float32)) / 255.0


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats back to 8-bit, rounding half away from zero."""
    scaled = np.clip(arr, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return to_unit(np.asarray(im.convert("RGB")))


class Corpus:
    """Deterministically ordered list of images under a directory.

    The order is the seed-shuffled sorted listing, so two loads with the
    same (root, seed) iterate the same sequence. Images are decoded lazily
    and cached.
    """

    def __init__(self, paths: list[Path], split_seed: int, skipped: int):
        self.paths = paths
        self.split_seed = split_seed
        self.skipped = skipped
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index: int) -> ImagePlane:
        if index not in self._cache:
            self._cache[index] = load_image(self.paths[index])
        return ImagePlane(self._cache[index], self.paths[index].name)

    def split(self, n_val: int) -> tuple["Corpus", "Corpus"]:
        """First n_val items (in seeded order) become the validation set."""
        if n_val >= len(self.paths):
            raise CorpusError(
                f"validation split of {n_val} leaves no training items "
                f"(corpus has {len(self.paths)})"
            )
        val = Corpus(self.paths[:n_val], self.split_seed, 0)
        train = Corpus(self.paths[n_val:], self.split_seed, 0)
        return train, val


def load_corpus(root: str | Path, split_seed: int) -> Corpus:
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    candidates = sorted(
        p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    usable: list[Path] = []
    skipped = 0
    for path in candidates:
        try:
            with Image.open(path) as im:
                im.verify()
            usable.append(path)
        except Exception:
            skipped += 1
            log.warning("skipping undecodable file %s", path)
    if not usable:
        raise CorpusError(f"no decodable images under {root}")
    order = np.random.default_rng(split_seed).permutation(len(usable))
    return Corpus([usable[i] for i in order], split_seed, skipped)


def pad_to_multiple(img: np.ndarray, m: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad so both edges are the smallest multiples of m >= the input.

    Returns the padded image and the original (height, width) so the decoder
    can crop the reconstruction back.
    """
    if m < 1:
        raise ContractViolation(f"pad multiple must be >= 1, got {m}")
    h, w = img.shape[:2]
    target_h = math.ceil(h / m) * m
    target_w = math.ceil(w / m) * m
    return pad_to_size(img, target_h, target_w), (h, w)


def pad_to_size(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    out = img
    # symmetric reflection can at most double an edge per application
    while out.shape[0] < target_h or out.shape[1] < target_w:
        ph = min(target_h - out.shape[0], out.shape[0])
        pw = min(target_w - out.shape[1], out.shape[1])
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (out.ndim - 2)
        out = np.pad(out, pad, mode="symmetric")
    return out


def sample_crop(
    img: np.ndarray, policy: CropPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Draw a square patch whose edge follows the policy distribution."""
    size = int(rng.choice(policy.sizes, p=policy.probabilities))
    padded = pad_to_size(img, max(size, img.shape[0]), max(size, img.shape[1]))
    top = int(rng.integers(0, padded.shape[0] - size + 1))
    left = int(rng.integers(0, padded.shape[1] - size + 1))
    return padded[top : top + size, left : left + size]


def sample_batch(
    corpus: Corpus,
    policy: CropPolicy,
    batch_by_size: dict[int, int],
    rng: np.random.Generator,
    hflip: bool = False,
) -> np.ndarray:
    """One training batch: a single crop size per step, batch sized per size."""
    size = int(rng.choice(policy.sizes, p=policy.probabilities))
    batch = batch_by_size.get(size, max(batch_by_size.values()))
    crops = []
    single = CropPolicy((size,), (1.0,))
    for _ in range(batch):
        img = corpus[int(rng.integers(0, len(corpus)))]
        crop = sample_crop(img.pixels, single, rng)
        if hflip and rng.random() < 0.5:
            crop = crop[:, ::-1]
        crops.append(crop)
    return np.stack(crops).astype(np.float32)
