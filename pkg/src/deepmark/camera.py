"""Simulated screen capture and bird's-eye rectification.

Points are (x, y) in pixel-center coordinates: pixel (row r, col c) sits at
x = c, y = r.  Quads are ordered top-left, top-right, bottom-right,
bottom-left.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import attacks, ecc
from .metrics import ber as bit_error_rate, binarize
from .nets import COVER_SHAPE, WatermarkingModel


def _points(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.shape != (4, 2):
        raise ValueError(f"expected 4 (x, y) points, got shape {a.shape}")
    return a


def _has_collinear_triple(q: np.ndarray, tol: float = 1e-9) -> bool:
    for i in range(4):
        a, b, c = (q[j] for j in range(4) if j != i)
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        scale = max(1.0, np.abs(q).max()) ** 2
        if abs(cross) <= tol * scale:
            return True
    return False


def is_convex(q) -> bool:
    q = _points(q)
    signs = []
    for i in range(4):
        a, b, c = q[i], q[(i + 1) % 4], q[(i + 2) % 4]
        signs.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
    return all(s > 0 for s in signs) or all(s < 0 for s in signs)


def homography_from_corners(src, dst) -> np.ndarray:
    """3x3 H with H @ (x, y, 1) proportional to the matching dst point; H[2, 2] == 1."""
    src, dst = _points(src), _points(dst)
    if _has_collinear_triple(src) or _has_collinear_triple(dst):
        raise ValueError("degenerate quad: three corners are collinear")
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = u, v
    h = np.linalg.solve(A, rhs)
    H = np.append(h, 1.0).reshape(3, 3)
    if abs(np.linalg.det(H)) <= 1e-9:
        raise ValueError("homography is singular")
    return H


def normalize(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    return H / H[2, 2] if H[2, 2] != 0 else H


def apply_homography(H, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    homog = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1) @ np.asarray(H).T
    return homog[..., :2] / homog[..., 2:3]


def warp(image, H, out_w: int, out_h: int) -> np.ndarray:
    """Resample ``image`` onto an out_h x out_w grid.

    Output pixel p takes the bilinear sample of ``image`` at ``H @ p``, i.e.
    ``H`` maps output coordinates into the source.  Samples outside the
    source extent are 0.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    src = apply_homography(H, np.stack([xs, ys], axis=-1).astype(np.float64))
    sx, sy = src[..., 0], src[..., 1]
    eps = 1e-9
    inside = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = (top * (1 - fy) + bottom * fy) * inside[..., None]
    out = out.astype(np.float32)
    return out[..., 0] if squeeze else out


def image_corners(w: int, h: int) -> np.ndarray:
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)


@dataclass(frozen=True)
class CaptureSpec:
    jitter: float = 0.0          # max corner displacement per axis, pixels
    canvas: int = 192            # square photo side
    noise_variance: float = 0.0
    jpeg_quality: int = 100
    gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.jitter < 0 or not math.isfinite(self.jitter):
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")
        if self.canvas < COVER_SHAPE[0]:
            raise ValueError(f"canvas {self.canvas} smaller than the marked image")
        if self.noise_variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_variance}")
        if not 1 <= int(self.jpeg_quality) <= 100:
            raise ValueError(f"jpeg quality must be in [1, 100], got {self.jpeg_quality}")
        if len(self.gain) != 3 or len(self.bias) != 3:
            raise ValueError("gain and bias need one value per color channel")

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown capture spec fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("gain", "bias"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def simulate_capture(m, spec: CaptureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render ``m`` as a tilted, relit, noisy, recompressed photo.

    Returns the photo and the four corners of ``m``'s corner pixels in it.
    """
    img = np.asarray(getattr(m, "data", m), dtype=np.float32)
    h, w = img.shape[:2]
    rng = np.random.default_rng(spec.seed)
    off = (spec.canvas - w) / 2.0, (spec.canvas - h) / 2.0
    corners = image_corners(w, h) + np.array(off)
    corners = corners + rng.uniform(-spec.jitter, spec.jitter, size=(4, 2))
    if not is_convex(corners):
        raise ValueError("corner perturbation collapsed the quad")
    to_photo = homography_from_corners(image_corners(w, h), corners)
    photo = warp(img, normalize(np.linalg.inv(to_photo)), spec.canvas, spec.canvas)
    photo = photo * np.asarray(spec.gain, np.float32) + np.asarray(spec.bias, np.float32)
    photo = np.clip(photo, 0, 1)
    if spec.noise_variance > 0:
        photo = attacks.gaussian_noise(photo, spec.noise_variance, seed=spec.seed + 1)
    photo = attacks.jpeg(np.clip(photo, 0, 1), int(spec.jpeg_quality))
    return np.clip(photo, 0, 1).astype(np.float32), corners


def rectify(photo, corners, size: int = COVER_SHAPE[0]) -> np.ndarray:
    H = homography_from_corners(image_corners(size, size), corners)
    return warp(photo, H, size, size)


@dataclass
class PhotoExtraction:
    bits: np.ndarray
    rectified: np.ndarray
    raw_ber: float | None
    payload: bytes | None
    corrected: int | None
    failure: str | None

    def to_dict(self) -> dict:
        out = {"raw_ber": self.raw_ber}
        if self.payload is not None:
            out.update(corrected=self.corrected, payload_hex=self.payload.hex())
        else:
            out["failure"] = self.failure
        return out


def extract_from_photo(photo, corners, model: WatermarkingModel, reference=None) -> PhotoExtraction:
    """Rectify, run the extracting components, binarize, then RS-decode."""
    rect = rectify(photo, corners)
    w_star = model.recover(rect).data
    bits = binarize(w_star).astype(np.float32)
    raw = bit_error_rate(reference, bits) if reference is not None else None
    try:
        payload, fixed = ecc.watermark_unpack(bits)
        failure = None
    except ecc.DecodeError as exc:
        payload, fixed, failure = None, None, str(exc)
    return PhotoExtraction(bits, rect, raw, payload, fixed, failure)
