"""Encoder, embedder, invariance layer, extractor and decoder networks.

All parameters of a model live in one ordered ``name -> Tensor`` dict.  The
first dotted component of a name says which component owns it, which is what
the objective uses to route gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

COVER_SHAPE = (128, 128, 3)
WATERMARK_SHAPE = (32, 32, 1)
CODE_SHAPE = (32, 32, 48)
BLOCK_WIDTH = 32
SPACE_FACTOR = 4
DEFAULT_REDUNDANCY = 12

COMPONENTS = ("encoder", "embedder", "extractor", "decoder", "invariance")


def component_of(name: str) -> str:
    return name.split(".", 1)[0]


# --------------------------------------------------------------------------
# parameter construction
# --------------------------------------------------------------------------

def _conv_shapes(prefix: str, k: int, cin: int, cout: int) -> list[tuple[str, tuple[int, ...], int]]:
    return [(f"{prefix}.w", (k, k, cin, cout), k * k * cin), (f"{prefix}.b", (cout,), 0)]


def block_shapes(prefix: str, channels: int) -> list[tuple[str, tuple[int, ...], int]]:
    """Parameter layout of one inception residual block over ``channels`` inputs."""
    wd = BLOCK_WIDTH
    return (_conv_shapes(f"{prefix}.p1", 1, channels, wd)
            + _conv_shapes(f"{prefix}.p3", 3, channels, wd)
            + _conv_shapes(f"{prefix}.p5a", 3, channels, wd)
            + _conv_shapes(f"{prefix}.p5b", 3, wd, wd)
            + _conv_shapes(f"{prefix}.fuse", 1, 3 * wd, channels))


def architecture(redundancy: int = DEFAULT_REDUNDANCY, use_invariance: bool = True):
    """Ordered (name, shape, fan_in) list for the whole model; fan_in 0 marks a bias."""
    if use_invariance and redundancy < 3:
        raise ValueError(f"redundancy N must be >= 3, got {redundancy}")
    extractor_in = redundancy if use_invariance else COVER_SHAPE[2]
    spec = []
    spec += _conv_shapes("encoder.lift1", 3, 1, 24)
    spec += block_shapes("encoder.block1", 24)
    spec += _conv_shapes("encoder.lift2", 3, 24, 48)
    spec += block_shapes("encoder.block2", 48)
    spec += block_shapes("embedder.block_b", 3)
    spec += block_shapes("embedder.mix", 6)
    spec += _conv_shapes("embedder.out", 1, 6, 3)
    if use_invariance:
        spec += [("invariance.w", (3, redundancy), 3), ("invariance.b", (redundancy,), 0)]
    spec += _conv_shapes("extractor.proj", 1, extractor_in, 3)
    spec += block_shapes("extractor.block1", 3)
    spec += block_shapes("extractor.block2", 3)
    spec += block_shapes("decoder.block1", 48)
    spec += _conv_shapes("decoder.lower1", 3, 48, 24)
    spec += block_shapes("decoder.block2", 24)
    spec += _conv_shapes("decoder.out", 3, 24, 1)
    return spec


def init_params(seed: int, redundancy: int = DEFAULT_REDUNDANCY, use_invariance: bool = True,
                dtype=np.float32) -> dict[str, Tensor]:
    """He-style uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in in architecture(redundancy, use_invariance):
        if fan_in:
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def _conv(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    return T.conv2d(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def conv_block_forward(x: Tensor, params: dict[str, Tensor], prefix: str) -> tuple[Tensor, Tensor, Tensor]:
    """Inception residual block.

    Three ReLU paths (1x1, 3x3, two stacked 3x3) of 32 channels each are
    concatenated into the 96-channel map ``b1``; a linear 1x1 fusion brings it
    back to the input width as ``b2``; the block returns ``x + b2``.
    """
    expected = params[f"{prefix}.fuse.w"].shape[-1]
    if x.shape[-1] != expected:
        raise ValueError(f"block {prefix} expects {expected} channels, got input {x.shape}")
    p1 = T.relu(_conv(x, params, f"{prefix}.p1"))
    p3 = T.relu(_conv(x, params, f"{prefix}.p3"))
    p5 = T.relu(_conv(T.relu(_conv(x, params, f"{prefix}.p5a")), params, f"{prefix}.p5b"))
    b1 = T.concat_channels(p1, p3, p5)
    b2 = _conv(b1, params, f"{prefix}.fuse")
    return T.add(x, b2), b1, b2


def _check_shape(x: Tensor, expected: tuple[int, ...], what: str) -> None:
    if x.shape[-3:] != expected or x.ndim not in (3, 4):
        raise ValueError(f"{what} must have shape {expected} (optionally batched), got {x.shape}")


# --------------------------------------------------------------------------
# the model
# --------------------------------------------------------------------------

@dataclass
class Intermediates:
    m: Tensor
    w_star: Tensor
    w_f: Tensor
    t: Tensor
    code_star: Tensor
    b_wf: tuple[Tensor, Tensor]
    b_m: tuple[Tensor, Tensor]


class WatermarkingModel:
    """The five trainable components plus their hyperparameters.

    ``use_invariance=False`` builds the ablation variant in which the extractor
    reads the marked image directly.
    """

    def __init__(self, params: dict[str, Tensor], redundancy: int = DEFAULT_REDUNDANCY,
                 use_invariance: bool = True):
        expected = architecture(redundancy, use_invariance)
        names = [n for n, _, _ in expected]
        if list(params) != names:
            missing = sorted(set(names) - set(params))
            extra = sorted(set(params) - set(names))
            raise ValueError(f"parameter set does not match architecture (missing={missing}, extra={extra})")
        for name, shape, _ in expected:
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = params
        self.redundancy = redundancy
        self.use_invariance = use_invariance

    @classmethod
    def create(cls, seed: int, redundancy: int = DEFAULT_REDUNDANCY, use_invariance: bool = True,
               dtype=np.float32) -> "WatermarkingModel":
        return cls(init_params(seed, redundancy, use_invariance, dtype), redundancy, use_invariance)

    def astype(self, dtype) -> "WatermarkingModel":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return WatermarkingModel(params, self.redundancy, self.use_invariance)

    def copy(self) -> "WatermarkingModel":
        return self.astype(next(iter(self.params.values())).dtype)

    def group(self, component: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if component_of(k) == component}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # component forwards ---------------------------------------------------

    def encode(self, w) -> Tensor:
        w = T.as_tensor(w)
        _check_shape(w, WATERMARK_SHAPE, "watermark")
        p = self.params
        x = T.relu(_conv(w, p, "encoder.lift1"))
        x, _, _ = conv_block_forward(x, p, "encoder.block1")
        x = T.relu(_conv(x, p, "encoder.lift2"))
        x, _, _ = conv_block_forward(x, p, "encoder.block2")
        return T.depth_to_space(x, SPACE_FACTOR)

    def embed(self, w_f, c) -> tuple[Tensor, tuple[Tensor, Tensor], tuple[Tensor, Tensor]]:
        """Returns ``(m, (B1, B2) of w_f, (B1, B2) of m)``."""
        w_f, c = T.as_tensor(w_f), T.as_tensor(c)
        _check_shape(w_f, COVER_SHAPE, "watermark code")
        _check_shape(c, COVER_SHAPE, "cover")
        if w_f.shape != c.shape:
            raise ValueError(f"embed: watermark code {w_f.shape} and cover {c.shape} differ")
        p = self.params
        feature, b1_wf, b2_wf = conv_block_forward(w_f, p, "embedder.block_b")
        x = T.concat_channels(feature, c)
        x, _, _ = conv_block_forward(x, p, "embedder.mix")
        m = T.sigmoid(_conv(x, p, "embedder.out"))
        _, b1_m, b2_m = conv_block_forward(m, p, "embedder.block_b")
        return m, (b1_wf, b2_wf), (b1_m, b2_m)

    def mark(self, w, c) -> Tensor:
        return self.embed(self.encode(w), c)[0]

    def invariance_forward(self, m) -> Tensor:
        m = T.as_tensor(m)
        if not self.use_invariance:
            return m
        return T.tanh(T.dense_channels(m, self.params["invariance.w"], self.params["invariance.b"]))

    def extract(self, t) -> Tensor:
        t = T.as_tensor(t)
        n_in = self.params["extractor.proj.w"].shape[2]
        _check_shape(t, COVER_SHAPE[:2] + (n_in,), "invariance output")
        p = self.params
        x = T.relu(_conv(t, p, "extractor.proj"))
        x, _, _ = conv_block_forward(x, p, "extractor.block1")
        x, _, _ = conv_block_forward(x, p, "extractor.block2")
        return T.space_to_depth(x, SPACE_FACTOR)

    def decode(self, code) -> Tensor:
        code = T.as_tensor(code)
        _check_shape(code, CODE_SHAPE, "extracted code")
        p = self.params
        x, _, _ = conv_block_forward(code, p, "decoder.block1")
        x = T.relu(_conv(x, p, "decoder.lower1"))
        x, _, _ = conv_block_forward(x, p, "decoder.block2")
        return T.sigmoid(_conv(x, p, "decoder.out"))

    def recover(self, marked) -> Tensor:
        """Blind extraction: marked image -> extracted watermark in (0, 1)."""
        return self.decode(self.extract(self.invariance_forward(marked)))

    def forward_full(self, w, c) -> Intermediates:
        w_f = self.encode(w)
        m, b_wf, b_m = self.embed(w_f, c)
        t = self.invariance_forward(m)
        code_star = self.extract(t)
        w_star = self.decode(code_star)
        return Intermediates(m=m, w_star=w_star, w_f=w_f, t=t, code_star=code_star, b_wf=b_wf, b_m=b_m)
