"""Image file I/O (PNG/PPM via Pillow, PBM by hand) and bilinear resizing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pbm", ".pnm", ".bmp", ".jpg", ".jpeg"}


def read_image(path) -> np.ndarray:
    """Read an image as float32 RGB in [0, 1]; grayscale is replicated to 3 channels."""
    path = Path(path)
    if path.suffix.lower() == ".pbm":
        bits = read_pbm(path)[..., 0]
        return np.repeat(bits[..., None], 3, axis=2)
    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L", "I", "I;16", "F"):
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
                return np.repeat(arr[..., None], 3, axis=2)
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from None


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img) -> None:
    """Write a float image in [0, 1]; encoder settings are fixed so output bytes are reproducible."""
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(Path(path), format="PNG", compress_level=6, optimize=False)


def write_pbm(path, bits) -> None:
    """Binary (P4) portable bitmap; PBM uses 1 for black, so a 1-bit is written as white (0)."""
    b = np.asarray(bits).reshape(np.asarray(bits).shape[:2]) >= 0.5
    h, w = b.shape
    ink = (~b).astype(np.uint8)
    payload = np.packbits(ink, axis=1).tobytes()
    Path(path).write_bytes(f"P4\n{w} {h}\n".encode("ascii") + payload)


def read_pbm(path) -> np.ndarray:
    """Inverse of :func:`write_pbm`; returns (H, W, 1) float32 in {0, 1}.  Accepts P1 and P4."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PBM header")
        tokens.append(raw[start:pos].decode("ascii"))
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    if magic == "P4":
        body = raw[pos + 1:]
        row_bytes = (w + 7) // 8
        if len(body) < row_bytes * h:
            raise ValueError(f"{path}: PBM data truncated")
        packed = np.frombuffer(body[:row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
        ink = np.unpackbits(packed, axis=1)[:, :w]
    elif magic == "P1":
        digits = [c for c in raw[pos:].decode("ascii") if c in "01"]
        if len(digits) < w * h:
            raise ValueError(f"{path}: PBM data truncated")
        ink = np.array(digits[:w * h], dtype=np.uint8).reshape(h, w)
    else:
        raise ValueError(f"{path}: not a PBM file (magic {magic!r})")
    return (1 - ink).astype(np.float32)[..., None]


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    in_h, in_w = img.shape[:2]

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis_weights(in_h, out_h)
    x0, x1, fx = axis_weights(in_w, out_w)
    rows = img[y0] * (1 - fy)[:, None, None] + img[y1] * fy[:, None, None]
    out = rows[:, x0] * (1 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    out = out.astype(np.float32)
    return out[..., 0] if squeeze else out


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"image directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images in directory: {d}")
    return files
