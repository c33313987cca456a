"""Binary checkpoint format.

Layout, all little-endian::

    b"DMRK"  u32 version
    u32 redundancy, u32 use_invariance
    u32 cover h, w, c, u32 watermark h, w, c
    u64 training step
    u32 has_adam [f64 lr, beta1, beta2, eps, u64 adam step]
    u32 tensor count
    per tensor: u32 name length, utf-8 name, u32 rank, u32 dims..., f32 values

ADAM moments are stored as tensors named ``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nets import COVER_SHAPE, WATERMARK_SHAPE, WatermarkingModel
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"DMRK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: WatermarkingModel
    step: int = 0
    adam: AdamState | None = None


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<II", model.redundancy, int(model.use_invariance)),
             struct.pack("<3I", *COVER_SHAPE), struct.pack("<3I", *WATERMARK_SHAPE),
             struct.pack("<Q", ckpt.step)]
    tensors = [(name, p.data) for name, p in model.params.items()]
    adam = ckpt.adam
    if adam is None:
        parts.append(struct.pack("<I", 0))
    else:
        parts.append(struct.pack("<I4dQ", 1, adam.lr, adam.beta1, adam.beta2, adam.eps, adam.step))
        for name, p in model.params.items():
            if name in adam.m:
                tensors.append((f"adam.m/{name}", adam.m[name]))
                tensors.append((f"adam.v/{name}", adam.v[name]))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (needed {n} more bytes)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    redundancy, use_inv = r.unpack("<II")
    cover, wm = r.unpack("<3I"), r.unpack("<3I")
    if cover != COVER_SHAPE or wm != WATERMARK_SHAPE:
        raise CheckpointError(f"checkpoint image sizes cover={cover} watermark={wm} do not match "
                              f"this build ({COVER_SHAPE}, {WATERMARK_SHAPE})")
    (step,) = r.unpack("<Q")
    (has_adam,) = r.unpack("<I")
    adam = None
    if has_adam:
        lr, b1, b2, eps, astep = r.unpack("<4dQ")
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=astep)
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last tensor")

    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items() if not k.startswith("adam.")}
    try:
        model = WatermarkingModel(params, redundancy=redundancy, use_invariance=bool(use_inv))
    except ValueError as exc:
        raise CheckpointError(f"checkpoint does not match the architecture: {exc}") from None
    if adam is not None:
        for k, v in arrays.items():
            if k.startswith("adam.m/") or k.startswith("adam.v/"):
                slot, pname = k[5], k[7:]
                if pname not in params or params[pname].shape != v.shape:
                    raise CheckpointError(f"optimizer tensor {k} does not match a parameter")
                (adam.m if slot == "m" else adam.v)[pname] = v.copy()
    return Checkpoint(model=model, step=step, adam=adam)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
