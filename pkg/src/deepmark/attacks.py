"""Deterministic image distortions applied to marked images.

Every kernel takes an (H, W, 3) float image in [0, 1] and returns a new
float32 image of the same shape, clipped to [0, 1].  Randomized kernels draw
from ``numpy.random.default_rng(seed)``, so a fixed spec is reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("identity", "histogram_eq", "gaussian_blur", "salt_pepper", "crop_retain",
         "jpeg", "gaussian_noise", "random_noise")

# Annex K baseline tables, natural (row-major) order.
LUMA_QTABLE = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.float64).reshape(8, 8)

CHROMA_QTABLE = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
], dtype=np.float64).reshape(8, 8)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        _check_strength(self.kind, float(self.strength))

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        unknown = set(d) - {"kind", "strength", "seed"}
        if unknown:
            raise ValueError(f"unknown attack spec fields: {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("attack spec needs a 'kind'")
        return cls(kind=d["kind"], strength=float(d.get("strength", 0.0)), seed=int(d.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        return cls.from_dict(json.loads(text))


def _check_strength(kind: str, s: float) -> None:
    if not math.isfinite(s):
        raise ValueError(f"{kind}: strength must be finite, got {s}")
    bad = {
        "salt_pepper": not 0.0 <= s <= 1.0,
        "random_noise": not 0.0 <= s <= 1.0,
        "crop_retain": not 0.0 < s <= 1.0,
        "gaussian_blur": not 0.0 < s <= 40.0,
        "gaussian_noise": not 0.0 < s <= 1.0,
        "jpeg": not (1.0 <= s <= 100.0 and s == int(s)),
    }.get(kind, False)
    if bad:
        ranges = {"salt_pepper": "[0, 1]", "random_noise": "[0, 1]", "crop_retain": "(0, 1]",
                  "gaussian_blur": "(0, 40]", "gaussian_noise": "(0, 1]", "jpeg": "integer in [1, 100]"}
        raise ValueError(f"{kind}: strength {s} outside valid range {ranges[kind]}")


def _image(m) -> np.ndarray:
    arr = np.asarray(getattr(m, "data", m), dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {arr.shape}")
    return arr


def apply_attack(m, spec: AttackSpec) -> np.ndarray:
    img = _image(m)
    _check_strength(spec.kind, float(spec.strength))
    s = float(spec.strength)
    if spec.kind == "identity":
        out = img.copy()
    elif spec.kind == "histogram_eq":
        out = histogram_eq(img)
    elif spec.kind == "gaussian_blur":
        out = gaussian_blur(img, s)
    elif spec.kind == "salt_pepper":
        out = salt_pepper(img, s, spec.seed)
    elif spec.kind == "crop_retain":
        out = crop_retain(img, s, spec.seed)
    elif spec.kind == "jpeg":
        out = jpeg(img, int(s))
    elif spec.kind == "gaussian_noise":
        out = gaussian_noise(img, s, spec.seed)
    else:
        out = random_noise(img, s, spec.seed)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _pick_pixels(h: int, w: int, density: float, rng: np.random.Generator) -> np.ndarray:
    count = int(math.floor(density * h * w))
    return rng.choice(h * w, size=count, replace=False)


def salt_pepper(m, density: float, seed: int = 0) -> np.ndarray:
    """floor(density*H*W) distinct pixels become black or white (fair coin, all channels)."""
    img = _image(m)
    h, w, c = img.shape
    rng = np.random.default_rng(seed)
    idx = _pick_pixels(h, w, density, rng)
    values = rng.integers(0, 2, size=idx.size).astype(np.float32)
    out = img.reshape(h * w, c).copy()
    out[idx] = values[:, None]
    return out.reshape(h, w, c)


def random_noise(m, density: float, seed: int = 0) -> np.ndarray:
    """floor(density*H*W) distinct pixels get a uniformly random color."""
    img = _image(m)
    h, w, c = img.shape
    rng = np.random.default_rng(seed)
    idx = _pick_pixels(h, w, density, rng)
    out = img.reshape(h * w, c).copy()
    out[idx] = rng.uniform(0.0, 1.0, size=(idx.size, c)).astype(np.float32)
    return out.reshape(h, w, c)


def crop_window(h: int, w: int, retain: float, seed: int = 0) -> tuple[int, int, int, int]:
    """(top, left, height, width) of the kept rectangle; its area never exceeds floor(retain*H*W)."""
    if retain >= 1.0:
        return 0, 0, h, w
    rng = np.random.default_rng(seed)
    area = max(1, int(math.floor(retain * h * w)))
    aspect = rng.uniform(0.5, 2.0)
    rh = int(min(h, max(1, round(math.sqrt(area * aspect)))))
    rw = int(min(w, max(1, area // rh)))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return top, left, rh, rw


def crop_retain(m, retain: float, seed: int = 0) -> np.ndarray:
    """Keep one seeded rectangle and zero everything else; the canvas size is unchanged."""
    img = _image(m)
    h, w, _ = img.shape
    top, left, rh, rw = crop_window(h, w, retain, seed)
    out = np.zeros_like(img)
    out[top:top + rh, left:left + rw] = img[top:top + rh, left:left + rw]
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _filter_axis(img: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = (k.size - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    p = np.pad(img, pad, mode="reflect")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for t, wt in enumerate(k):
        out += wt * np.take(p, np.arange(t, t + n), axis=axis)
    return out


def gaussian_blur(m, sigma: float) -> np.ndarray:
    """Separable Gaussian with radius ceil(3*sigma) and mirror padding, per channel."""
    img = _image(m).astype(np.float64)
    if int(math.ceil(3 * sigma)) >= min(img.shape[:2]):
        raise ValueError(f"gaussian_blur: sigma {sigma} too large for a {img.shape[0]}x{img.shape[1]} image")
    k = gaussian_kernel(sigma)
    return _filter_axis(_filter_axis(img, k, 0), k, 1)


def gaussian_noise(m, variance: float, seed: int = 0) -> np.ndarray:
    img = _image(m)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, math.sqrt(variance), size=img.shape)
    return img + noise


def histogram_eq(m) -> np.ndarray:
    """Per-channel 256-bin equalization; a constant channel is returned unchanged."""
    img = _image(m)
    out = img.copy()
    npix = img.shape[0] * img.shape[1]
    for ch in range(img.shape[2]):
        bins = np.round(np.clip(img[..., ch], 0, 1) * 255).astype(np.int64)
        cdf = np.cumsum(np.bincount(bins.ravel(), minlength=256))
        cdf_min = cdf[cdf > 0][0]
        if cdf_min == npix:
            continue
        out[..., ch] = (cdf[bins] - cdf_min) / (npix - cdf_min)
    return out


def quality_table(base: np.ndarray, quality: int) -> np.ndarray:
    """IJG quality scaling of a baseline quantization table."""
    quality = int(min(100, max(1, quality)))
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((base * scale + 50) / 100), 1, 255)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    d = np.cos((2 * x + 1) * k * np.pi / (2 * n)) * math.sqrt(2.0 / n)
    d[0] /= math.sqrt(2.0)
    return d


DCT8 = _dct_matrix()


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)


def jpeg(m, quality: int) -> np.ndarray:
    """Baseline JPEG quantization round trip (4:4:4, no entropy coding)."""
    img = _image(m)
    h, w, _ = img.shape
    rgb = np.round(np.clip(img.astype(np.float64), 0, 1) * 255)
    ph, pw = -h % 8, -w % 8
    rgb = np.pad(rgb, ((0, ph), (0, pw), (0, 0)), mode="edge")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    ycc = [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0,
        0.5 * r - 0.418688 * g - 0.081312 * b + 128.0,
    ]
    tables = (quality_table(LUMA_QTABLE, quality), quality_table(CHROMA_QTABLE, quality),
              quality_table(CHROMA_QTABLE, quality))
    rec = []
    for plane, q in zip(ycc, tables):
        blk = _blocks(plane - 128.0)
        coef = DCT8 @ blk @ DCT8.T
        coef = np.round(coef / q) * q
        rec.append(_unblocks(DCT8.T @ coef @ DCT8) + 128.0)
    y, cb, cr = rec
    out = np.stack([
        y + 1.402 * (cr - 128.0),
        y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0),
        y + 1.772 * (cb - 128.0),
    ], axis=-1)
    out = np.round(np.clip(out, 0, 255))[:h, :w] / 255.0
    return out
