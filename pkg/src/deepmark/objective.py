"""Training objective: extraction, fidelity and Gram-correlation terms plus the
contractive penalty on the invariance layer, with per-component gradient routing.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from . import tensor as T
from .nets import COMPONENTS, Intermediates, WatermarkingModel
from .tensor import Tape, Tensor

CSV_FIELDS = ("extraction", "fidelity", "information", "penalty", "total", "objective")


@dataclass(frozen=True)
class LossWeights:
    extraction: float = 1.0   # lambda_1
    fidelity: float = 1.0     # lambda_2
    information: float = 1.0  # lambda_3
    penalty: float = 0.01     # lambda_4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be a finite nonnegative number, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    extraction: float
    fidelity: float
    information: float
    penalty: float
    total: float
    objective: float

    def csv_row(self) -> list[float]:
        return list(astuple(self))

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in astuple(self))


def correlation_loss(b1_wf: Tensor, b2_wf: Tensor, b1_m: Tensor, b2_m: Tensor) -> Tensor:
    """Half the sum of mean absolute Gram-matrix differences at both tap points."""
    for a, b in ((b1_wf, b1_m), (b2_wf, b2_m)):
        if a.shape != b.shape:
            raise ValueError(f"correlation_loss: feature shapes differ {a.shape} vs {b.shape}")
    d1 = T.mae(T.gram(b1_wf), T.gram(b1_m))
    d2 = T.mae(T.gram(b2_wf), T.gram(b2_m))
    return T.mul(T.add(d1, d2), 0.5)


def total_loss(w_star: Tensor, w, m: Tensor, c, psi: Tensor, weights: LossWeights) -> Tensor:
    """lambda_1*|w* - w| + lambda_2*|m - c| + lambda_3*psi, all as means."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    terms = (T.mae(w_star, T.as_tensor(w, w_star.dtype)),
             T.mae(m, T.as_tensor(c, m.dtype)),
             psi)
    return _weighted(terms, (weights.extraction, weights.fidelity, weights.information), w_star.dtype)


def _weighted(terms, lams, dtype) -> Tensor:
    out = None
    for term, lam in zip(terms, lams):
        if lam == 0:
            continue
        part = T.mul(term, float(lam))
        out = part if out is None else T.add(out, part)
    return out if out is not None else Tensor(np.zeros((), dtype=dtype))


def contractive_penalty(h: Tensor, omega: Tensor) -> Tensor:
    """Jacobian energy of a tanh dense layer in closed form.

    Per pixel: sum_j (1 - h_j^2)^2 * sum_i omega_ij^2, averaged over pixels
    (and batch).  ``omega`` has one row per input channel.
    """
    if h.shape[-1] != omega.shape[1]:
        raise ValueError(f"contractive_penalty: {h.shape[-1]} hidden units vs weights {omega.shape}")
    slope = T.square(T.sub(1.0, T.square(h)))
    col_energy = T.sum(T.square(omega), axis=0)
    per_pixel = T.sum(T.mul(slope, col_energy), axis=-1)
    return T.mean(per_pixel)


def jacobian_energy_numeric(x: np.ndarray, omega: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> float:
    """Mean over pixels of sum_ij (dh_j/dx_i)^2 by central differences on each input channel.

    Independent of the closed form: it only evaluates tanh(x @ omega + bias).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, omega.shape[0])
    layer = lambda v: np.tanh(v @ omega + bias)  # noqa: E731
    total = np.zeros(x.shape[0])
    for i in range(omega.shape[0]):
        step = np.zeros_like(x)
        step[:, i] = eps
        d = (layer(x + step) - layer(x - step)) / (2 * eps)
        total += (d * d).sum(axis=1)
    return float(total.mean())


def evaluate(inter: Intermediates, w, c, model: WatermarkingModel, weights: LossWeights) -> dict[str, Tensor]:
    """Build every loss term as graph nodes on the active tape (if any)."""
    dtype = inter.w_star.dtype
    extraction = T.mae(inter.w_star, T.as_tensor(w, dtype))
    fidelity = T.mae(inter.m, T.as_tensor(c, dtype))
    information = correlation_loss(inter.b_wf[0], inter.b_wf[1], inter.b_m[0], inter.b_m[1])
    if model.use_invariance:
        penalty = contractive_penalty(inter.t, model.params["invariance.w"])
    else:
        penalty = Tensor(np.zeros((), dtype=dtype))
    return {"extraction": extraction, "fidelity": fidelity, "information": information, "penalty": penalty}


def breakdown(terms: dict[str, Tensor], weights: LossWeights) -> LossBreakdown:
    e, f, i, p = (float(terms[k].data) for k in ("extraction", "fidelity", "information", "penalty"))
    total = weights.extraction * e + weights.fidelity * f + weights.information * i
    return LossBreakdown(e, f, i, p, total, total + weights.penalty * p)


def apply_objective_gradients(model: WatermarkingModel, w, c, weights: LossWeights) -> tuple[LossBreakdown, Intermediates]:
    """One forward pass and routed backward passes.

    The extraction term updates every component.  The fidelity and
    information terms are functions of the encoder and embedder alone, so the
    combined pass routes them there by construction; the target set is still
    stated explicitly.  The penalty is back-propagated into the invariance
    layer only and stops at its input.

    Gradients accumulate into ``param.grad``; the caller zeroes them.
    """
    if not isinstance(weights, LossWeights):
        raise TypeError("weights must be a LossWeights")
    everything = list(model.params.values())
    with Tape() as tape:
        inter = model.forward_full(w, c)
        terms = evaluate(inter, w, c, model, weights)
        dtype = inter.w_star.dtype
        data_term = _weighted((terms["extraction"],), (weights.extraction,), dtype)
        embed_terms = _weighted((terms["fidelity"], terms["information"]),
                                (weights.fidelity, weights.information), dtype)
        if weights.extraction and (weights.fidelity or weights.information):
            main = T.add(data_term, embed_terms)
        else:
            main = data_term if weights.extraction else embed_terms
        reg = T.mul(terms["penalty"], float(weights.penalty)) if model.use_invariance and weights.penalty else None

    T.backward(tape, main, everything)
    if reg is not None:
        T.backward(tape, reg, list(model.group("invariance").values()))
    return breakdown(terms, weights), inter


def routed_gradients(model: WatermarkingModel) -> dict[str, np.ndarray]:
    """Current gradients with absent entries filled by zeros."""
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in model.params.items()}


__all__ = [
    "COMPONENTS", "CSV_FIELDS", "LossWeights", "LossBreakdown", "correlation_loss", "total_loss",
    "contractive_penalty", "jacobian_energy_numeric", "evaluate", "breakdown",
    "apply_objective_gradients", "routed_gradients",
]
