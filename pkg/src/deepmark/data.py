"""Cover / watermark ingestion and the synthetic desk corpus."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import list_images, read_image, read_pbm, resize_bilinear, write_pbm, write_png
from .nets import COVER_SHAPE, WATERMARK_SHAPE


def load_cover(path) -> np.ndarray:
    img = read_image(path)
    h, w = COVER_SHAPE[:2]
    if img.shape[:2] != (h, w):
        img = resize_bilinear(img, h, w)
    return np.clip(img, 0, 1).astype(np.float32)


def load_covers(directory) -> list[np.ndarray]:
    """Every image in ``directory`` (sorted by name) as a 128x128x3 array in [0, 1]."""
    return [load_cover(p) for p in list_images(directory)]


def luma(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def load_watermark(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pbm":
        gray = read_pbm(path)[..., 0]
    else:
        gray = luma(read_image(path))
    h, w = WATERMARK_SHAPE[:2]
    if gray.shape != (h, w):
        gray = resize_bilinear(gray, h, w)
    return (gray >= 0.5).astype(np.float32)[..., None]


def load_watermarks(directory) -> list[np.ndarray]:
    """Every image in ``directory`` as a binary 32x32x1 array (threshold 0.5)."""
    return [load_watermark(p) for p in list_images(directory)]


def generate_random_watermark(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=WATERMARK_SHAPE).astype(np.float32)


def synthetic_cover(seed: int, size: int = COVER_SHAPE[0]) -> np.ndarray:
    """A smooth, photo-like test image: tilted color gradients, soft blobs, fine grain."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.empty((size, size, 3))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.25, 0.75)
        img[..., c] = base + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0, 1, size=2)
        rx, ry = rng.uniform(0.05, 0.3, size=2)
        color = rng.uniform(-0.35, 0.35, size=3)
        blob = np.exp(-(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2))
        img += blob[..., None] * color
    freq = rng.uniform(4, 16, size=2)
    img += 0.04 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy))[..., None]
    img += rng.normal(0, 0.015, size=img.shape)
    return np.clip(img, 0.02, 0.98).astype(np.float32)


def write_corpus(root, n: int, seed: int = 0) -> tuple[Path, Path]:
    """Write ``n`` synthetic covers (PNG) and random watermarks (PBM) under ``root``.

    File ``i`` in each directory forms pair ``i``.
    """
    root = Path(root)
    cdir, wdir = root / "covers", root / "watermarks"
    cdir.mkdir(parents=True, exist_ok=True)
    wdir.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        write_png(cdir / f"{i:03d}.png", synthetic_cover(seed * 1000 + i))
        write_pbm(wdir / f"{i:03d}.pbm", generate_random_watermark(seed * 1000 + i))
    return cdir, wdir
