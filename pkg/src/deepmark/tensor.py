"""Small reverse-mode autodiff engine over numpy arrays.

Images and feature maps use channels-last layout, either ``(H, W, C)`` or
batched ``(B, H, W, C)``.  Operations are recorded on the active :class:`Tape`
only when one of their inputs requires a gradient, so code run outside a
``with Tape():`` block is plain inference.

Training runs in float32.  Passing float64 arrays gives the double precision
mode used by the finite-difference checks; every op keeps the dtype of its
inputs.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "backward", "as_tensor",
    "conv2d", "dense_channels", "relu", "tanh", "sigmoid",
    "concat_channels", "depth_to_space", "space_to_depth", "gram", "mae",
    "add", "sub", "mul", "square", "sum", "mean",
]


class Tensor:
    """N-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, which is already a topological
    order of the graph.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, targets: Iterable[Tensor] | None = None) -> list[np.ndarray | None]:
    """Accumulate d(loss)/d(target) into ``target.grad`` for each target.

    Only ops lying on a path from a target to the loss are differentiated, so a
    restricted target set also restricts the work done.  ``targets=None`` means
    every leaf on the tape that requires a gradient.  Returns the accumulated
    gradient of each target (``None`` when the loss does not depend on it).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if targets is None:
        produced = {id(r.out) for r in tape.records}
        seen: dict[int, Tensor] = {}
        for r in tape.records:
            for t in r.inputs:
                if t.requires_grad and id(t) not in produced:
                    seen.setdefault(id(t), t)
        targets = list(seen.values())
    else:
        targets = list(targets)
    target_ids = {id(t) for t in targets}

    live = set(target_ids)
    for r in tape.records:
        if any(id(t) in live for t in r.inputs):
            live.add(id(r.out))
    if id(loss) not in live:
        return [t.grad for t in targets]

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for r in reversed(tape.records):
        g = grads.pop(id(r.out), None)
        if g is None:
            continue
        mask = tuple(id(t) in live for t in r.inputs)
        if not any(mask):
            continue
        in_grads = r.backward(g, mask)
        for t, gi, wanted in zip(r.inputs, in_grads, mask):
            if not wanted or gi is None:
                continue
            key = id(t)
            if key in target_ids:
                t.grad = gi.astype(t.dtype, copy=True) if t.grad is None else t.grad + gi
            elif key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return [t.grad for t in targets]


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def bw(g, mask):
        return (_unbroadcast(g, a.shape) if mask[0] else None,
                _unbroadcast(g, b.shape) if mask[1] else None)

    return _record(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def bw(g, mask):
        return (_unbroadcast(g, a.shape) if mask[0] else None,
                _unbroadcast(-g, b.shape) if mask[1] else None)

    return _record(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def bw(g, mask):
        return (_unbroadcast(g * b.data, a.shape) if mask[0] else None,
                _unbroadcast(g * a.data, b.shape) if mask[1] else None)

    return _record(a.data * b.data, (a, b), bw)


def square(x: Tensor) -> Tensor:
    def bw(g, mask):
        return (g * 2 * x.data,)

    return _record(x.data * x.data, (x,), bw)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    def bw(g, mask):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g, mask):
        return (np.full(x.shape, g.reshape(()) / n, dtype=x.dtype),)

    return _record(np.asarray(x.data.mean(dtype=x.dtype)), (x,), bw)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bw(g, mask):
        return (g * (out > 0),)

    return _record(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    h = np.tanh(x.data)

    def bw(g, mask):
        return (g * (1 - h * h),)

    return _record(h, (x,), bw)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + z), z / (1 + z)).astype(v.dtype)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bw(g, mask):
        return (g * s * (1 - s),)

    return _record(s, (x,), bw)


# --------------------------------------------------------------------------
# convolution and per-pixel dense map
# --------------------------------------------------------------------------

def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected an (H, W, C) or (B, H, W, C) array, got shape {x.shape}")


_IM2COL_MAX = 64


def conv2d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    ``filters`` has shape (k, k, C, F) with k odd, ``bias`` shape (F,).

    The padded batch is flattened to one (rows, C) matrix; each kernel tap is
    then a contiguous row offset, so every tap is a single BLAS matmul with no
    im2col copy.  Outputs that straddle a row or image boundary land in the
    padding margin and are discarded.
    """
    xs, fs = x.shape, filters.shape
    if len(fs) != 4 or fs[0] != fs[1] or fs[0] % 2 == 0:
        raise ValueError(f"filters must be (k, k, C, F) with odd k, got {fs}")
    xb, squeeze = _batched(x.data)
    if xb.shape[-1] != fs[2]:
        raise ValueError(f"conv2d channel mismatch: input {xs} vs filters {fs}")
    if bias.shape != (fs[3],):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match filters {fs}")
    k, C, F = fs[0], fs[2], fs[3]
    B, H, W, _ = xb.shape
    w = filters.data
    dtype = np.result_type(xb.dtype, w.dtype)

    if k == 1:
        flat = xb.reshape(-1, C)
        out = (flat @ w[0, 0] + bias.data).reshape(B, H, W, F)

        def bw(g, mask):
            g2 = g.reshape(-1, F)
            dx = (g2 @ w[0, 0].T).reshape(xs) if mask[0] else None
            dw = (flat.T @ g2)[None, None] if mask[1] else None
            db = g2.sum(axis=0) if mask[2] else None
            return dx, dw, db

        return _record(out[0] if squeeze else out, (x, filters, bias), bw)

    p = k // 2
    Hp, Wp = H + 2 * p, W + 2 * p
    rows = B * Hp * Wp
    span = rows - (k - 1) * (Wp + 1)
    offsets = [(i, j, i * Wp + j) for i in range(k) for j in range(k)]
    xp = np.zeros((B, Hp, Wp, C), dtype=dtype)
    xp[:, p:p + H, p:p + W] = xb
    xp = xp.reshape(rows, C)
    # Narrow inputs: gather the k*k taps once and do a single wide matmul.
    # Wide inputs: one matmul per tap on contiguous row-offset views.
    gathered = C * k * k <= _IM2COL_MAX
    if gathered:
        cols = np.empty((span, k * k, C), dtype=dtype)
        for t, (_, _, off) in enumerate(offsets):
            cols[:, t] = xp[off:off + span]
        cols = cols.reshape(span, k * k * C)
        acc = np.zeros((rows, F), dtype=dtype)
        np.matmul(cols, w.reshape(k * k * C, F), out=acc[:span])
    else:
        # Rows past ``span`` are never read back, so they may stay uninitialized.
        acc = np.empty((rows, F), dtype=dtype)
        head, tmp = acc[:span], np.empty((span, F), dtype=dtype)
        np.matmul(xp[:span], w[0, 0], out=head)
        for i, j, off in offsets[1:]:
            head += np.matmul(xp[off:off + span], w[i, j], out=tmp)
    out = acc.reshape(B, Hp, Wp, F)[:, :H, :W] + bias.data

    def bw(g, mask):
        gb = g[None] if squeeze else g
        gp = np.zeros((B, Hp, Wp, F), dtype=gb.dtype)
        gp[:, :H, :W] = gb
        gf = gp.reshape(rows, F)[:span]
        dx = dw = db = None
        if mask[0]:
            dxp = np.zeros((rows, C), dtype=gb.dtype)
            if gathered:
                dcols = (gf @ w.reshape(k * k * C, F).T).reshape(span, k * k, C)
                for t, (_, _, off) in enumerate(offsets):
                    dxp[off:off + span] += dcols[:, t]
            else:
                tmp = np.empty((span, C), dtype=gb.dtype)
                for i, j, off in offsets:
                    dxp[off:off + span] += np.matmul(gf, w[i, j].T, out=tmp)
            dx = dxp.reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W].reshape(xs)
        if mask[1]:
            if gathered:
                dw = (cols.T @ gf).reshape(w.shape)
            else:
                dw = np.empty_like(w)
                for i, j, off in offsets:
                    dw[i, j] = xp[off:off + span].T @ gf
        if mask[2]:
            db = gb.reshape(-1, F).sum(axis=0)
        return dx, dw, db

    return _record(out[0] if squeeze else np.ascontiguousarray(out), (x, filters, bias), bw)


def dense_channels(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel fully connected map: ``out[..., :] = x[..., :] @ weights + bias``."""
    C = x.shape[-1]
    if weights.ndim != 2 or weights.shape[0] != C:
        raise ValueError(f"dense_channels: input channels {x.shape} do not match weights {weights.shape}")
    N = weights.shape[1]
    if bias.shape != (N,):
        raise ValueError(f"dense_channels: bias {bias.shape} does not match weights {weights.shape}")
    flat = x.data.reshape(-1, C)
    out = (flat @ weights.data + bias.data).reshape(x.shape[:-1] + (N,))

    def bw(g, mask):
        g2 = g.reshape(-1, N)
        return ((g2 @ weights.data.T).reshape(x.shape) if mask[0] else None,
                flat.T @ g2 if mask[1] else None,
                g2.sum(axis=0) if mask[2] else None)

    return _record(out, (x, weights, bias), bw)


# --------------------------------------------------------------------------
# layout ops
# --------------------------------------------------------------------------

def concat_channels(*parts: Tensor) -> Tensor:
    """Concatenate along the last axis; all spatial dims must agree."""
    if len(parts) < 2:
        raise ValueError("concat_channels needs at least two tensors")
    for t in parts[1:]:
        if t.shape[:-1] != parts[0].shape[:-1]:
            raise ValueError(f"concat_channels: spatial mismatch {parts[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in parts])

    def bw(g, mask):
        return tuple(g[..., lo:hi] if m else None for lo, hi, m in zip(bounds[:-1], bounds[1:], mask))

    return _record(np.concatenate([t.data for t in parts], axis=-1), parts, bw)


def _d2s(x: np.ndarray, r: int) -> np.ndarray:
    xb, squeeze = _batched(x)
    B, h, w, cr = xb.shape
    if cr % (r * r):
        raise ValueError(f"depth_to_space: {cr} channels not divisible by r^2={r * r}")
    c = cr // (r * r)
    out = xb.reshape(B, h, w, c, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(B, h * r, w * r, c)
    return out[0] if squeeze else out


def _s2d(x: np.ndarray, r: int) -> np.ndarray:
    xb, squeeze = _batched(x)
    B, H, W, c = xb.shape
    if H % r or W % r:
        raise ValueError(f"space_to_depth: spatial size {H}x{W} not divisible by r={r}")
    out = xb.reshape(B, H // r, r, W // r, r, c).transpose(0, 1, 3, 5, 2, 4).reshape(B, H // r, W // r, c * r * r)
    return out[0] if squeeze else out


def depth_to_space(x: Tensor, r: int) -> Tensor:
    """Output pixel (i*r+di, j*r+dj, c) takes input channel c*r*r + di*r + dj at (i, j)."""
    out = np.ascontiguousarray(_d2s(x.data, r))
    return _record(out, (x,), lambda g, mask: (np.ascontiguousarray(_s2d(g, r)),))


def space_to_depth(x: Tensor, r: int) -> Tensor:
    out = np.ascontiguousarray(_s2d(x.data, r))
    return _record(out, (x,), lambda g, mask: (np.ascontiguousarray(_d2s(g, r)),))


# --------------------------------------------------------------------------
# reductions used by the losses
# --------------------------------------------------------------------------

def gram(features: Tensor) -> Tensor:
    """Channel Gram matrix normalized by H*W*C; batched input gives (B, C, C)."""
    fb, squeeze = _batched(features.data)
    B, H, W, C = fb.shape
    scale = 1.0 / (H * W * C)
    flat = fb.reshape(B, H * W, C)
    G = np.matmul(flat.transpose(0, 2, 1), flat) * np.asarray(scale, dtype=flat.dtype)

    def bw(g, mask):
        gb = g[None] if squeeze else g
        sym = gb + gb.transpose(0, 2, 1)
        df = np.matmul(flat, sym) * np.asarray(scale, dtype=flat.dtype)
        return (df.reshape(features.shape),)

    return _record(G[0] if squeeze else G, (features,), bw)


def mae(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at exact ties is 0."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.shape != b.shape:
        raise ValueError(f"mae: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g, mask):
        s = np.sign(diff) * (g.reshape(()) / n)
        return (s if mask[0] else None, -s if mask[1] else None)

    return _record(np.asarray(np.abs(diff).mean(dtype=diff.dtype)), (a, b), bw)
