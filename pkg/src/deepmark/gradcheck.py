"""Central finite-difference checks of every differentiable op, in float64."""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import tensor as T
from .nets import COMPONENTS, WatermarkingModel, conv_block_forward, init_params, block_shapes
from .objective import LossWeights, contractive_penalty, correlation_loss, evaluate
from .tensor import Tape, Tensor

STEP = 1e-5
# The whole network has thousands of ReLU and L1 kinks; a 1e-5 step straddles
# some of them, so the full-graph check uses a smaller step (float64 keeps the
# rounding error near 1e-7).
FULL_GRAPH_STEP = 1e-7
TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def check(fn: Callable[..., Tensor], inputs: list[np.ndarray], rng: np.random.Generator,
          max_coords: int = 24, h: float = STEP) -> float:
    """Compare backward() against central differences for a scalar-valued ``fn``.

    At most ``max_coords`` randomly chosen coordinates of each input are probed.
    """
    tensors = [Tensor(x.astype(np.float64), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(*tensors)
    T.backward(tape, out, tensors)
    worst = 0.0
    for k, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        coords = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
        analytic = (t.grad.reshape(-1)[coords] if t.grad is not None else np.zeros(coords.size))
        numeric = np.empty(coords.size)
        for n, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(fn(*tensors).data)
            flat[idx] = orig - h
            down = float(fn(*tensors).data)
            flat[idx] = orig
            numeric[n] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _weighted_sum(rng, shape):
    """A random linear functional turning a tensor-valued op into a scalar."""
    proj = rng.normal(size=shape)
    return lambda y: T.sum(T.mul(y, Tensor(proj)))


def op_cases() -> dict[str, Callable[[np.random.Generator], float]]:
    """One callable per op; each runs a single random instance and returns its error."""

    def conv(rng, k):
        cin, cout = rng.integers(1, 5), rng.integers(1, 5)
        x = rng.normal(size=(int(rng.integers(3, 7)), int(rng.integers(3, 7)), cin))
        f = rng.normal(size=(k, k, cin, cout))
        b = rng.normal(size=(cout,))
        red = _weighted_sum(rng, x.shape[:2] + (cout,))
        return check(lambda a, w, c: red(T.conv2d(a, w, c)), [x, f, b], rng)

    def conv_wide(rng):
        x = rng.normal(size=(2, 5, 5, 12))
        f = rng.normal(size=(3, 3, 12, 3)) * 0.3
        b = rng.normal(size=(3,))
        red = _weighted_sum(rng, (2, 5, 5, 3))
        return check(lambda a, w, c: red(T.conv2d(a, w, c)), [x, f, b], rng)

    def dense(rng):
        x = rng.normal(size=(4, 4, 3))
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=(5,))
        red = _weighted_sum(rng, (4, 4, 5))
        return check(lambda a, ww, bb: red(T.dense_channels(a, ww, bb)), [x, w, b], rng)

    def unary(op, sample):
        def run(rng):
            x = sample(rng)
            red = _weighted_sum(rng, x.shape)
            return check(lambda a: red(op(a)), [x], rng)
        return run

    def concat(rng):
        parts = [rng.normal(size=(3, 3, c)) for c in (2, 4, 1)]
        red = _weighted_sum(rng, (3, 3, 7))
        return check(lambda *ps: red(T.concat_channels(*ps)), parts, rng)

    def d2s(rng):
        x = rng.normal(size=(2, 3, 12))
        red = _weighted_sum(rng, (4, 6, 3))
        return check(lambda a: red(T.depth_to_space(a, 2)), [x], rng)

    def s2d(rng):
        x = rng.normal(size=(4, 6, 3))
        red = _weighted_sum(rng, (2, 3, 12))
        return check(lambda a: red(T.space_to_depth(a, 2)), [x], rng)

    def gram(rng):
        x = rng.normal(size=(4, 4, 3))
        red = _weighted_sum(rng, (3, 3))
        return check(lambda a: red(T.gram(a)), [x], rng)

    def mae(rng):
        a = rng.normal(size=(5, 5))
        b = a + _away_from_zero(rng, (5, 5))
        return check(T.mae, [a, b], rng)

    def block(rng):
        c = int(rng.integers(1, 4))
        params = {}
        for name, shape, fan_in in block_shapes("blk", c):
            params[name] = rng.normal(size=shape) * (np.sqrt(2.0 / fan_in) if fan_in else 0.1)
        names = list(params)
        x = rng.normal(size=(5, 5, c))
        red = _weighted_sum(rng, (5, 5, c))

        def fn(xt, *ps):
            y, b1, b2 = conv_block_forward(xt, dict(zip(names, ps)), "blk")
            return T.add(red(y), T.sum(T.mul(b1, 0.01)))
        return check(fn, [x] + list(params.values()), rng, max_coords=8)

    def correlation(rng):
        feats = [rng.normal(size=(4, 4, 6)), rng.normal(size=(4, 4, 2))]
        others = [f + _away_from_zero(rng, f.shape) for f in feats]
        return check(lambda a, b, c, d: correlation_loss(a, b, c, d), [feats[0], feats[1], others[0], others[1]], rng)

    def penalty(rng):
        x = rng.uniform(size=(3, 3, 3))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        return check(lambda a, ww, bb: contractive_penalty(T.tanh(T.dense_channels(a, ww, bb)), ww), [x, w, b], rng)

    return {
        "conv2d_1x1": lambda rng: conv(rng, 1),
        "conv2d_3x3": lambda rng: conv(rng, 3),
        "conv2d_5x5": lambda rng: conv(rng, 5),
        "conv2d_wide": conv_wide,
        "dense_channels": dense,
        "relu": unary(T.relu, lambda rng: _away_from_zero(rng, (4, 4, 2))),
        "tanh": unary(T.tanh, lambda rng: rng.normal(size=(4, 4, 2))),
        "sigmoid": unary(T.sigmoid, lambda rng: rng.normal(size=(4, 4, 2)) * 3),
        "concat_channels": concat,
        "depth_to_space": d2s,
        "space_to_depth": s2d,
        "gram": gram,
        "mae": mae,
        "conv_block": block,
        "correlation_loss": correlation,
        "contractive_penalty": penalty,
    }


def full_graph_case(rng: np.random.Generator, model: WatermarkingModel | None = None) -> float:
    """Objective gradient of the whole network w.r.t. one sampled entry per component."""
    model = model or WatermarkingModel(init_params(int(rng.integers(1 << 31)), dtype=np.float64))
    w = rng.integers(0, 2, size=(32, 32, 1)).astype(np.float64)
    c = rng.uniform(0.05, 0.95, size=(128, 128, 3))
    weights = LossWeights()
    params = model.params

    def objective() -> Tensor:
        terms = evaluate(model.forward_full(w, c), w, c, model, weights)
        out = T.add(T.mul(terms["extraction"], weights.extraction), T.mul(terms["fidelity"], weights.fidelity))
        out = T.add(out, T.mul(terms["information"], weights.information))
        return T.add(out, T.mul(terms["penalty"], weights.penalty))

    model.zero_grad()
    with Tape() as tape:
        loss = objective()
    T.backward(tape, loss, list(params.values()))
    analytic, numeric = [], []
    for comp in COMPONENTS:
        names = [n for n in params if n.startswith(comp + ".") and n.endswith(".w")]
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        flat = p.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + FULL_GRAPH_STEP
        up = float(objective().data)
        flat[idx] = orig - FULL_GRAPH_STEP
        down = float(objective().data)
        flat[idx] = orig
        analytic.append(p.grad.reshape(-1)[idx])
        numeric.append((up - down) / (2 * FULL_GRAPH_STEP))
    return relative_error(np.array(analytic), np.array(numeric))


def run_suite(instances: int = 10, seed: int = 0, full_graph: bool = True,
              report: Callable[[str], None] | None = None) -> dict[str, float]:
    """Max relative error per op over ``instances`` random cases."""
    rng = np.random.default_rng(seed)
    results = {}
    cases = op_cases()
    for name, case in cases.items():
        results[name] = max(case(rng) for _ in range(instances))
        if report:
            report(f"{name:20s} max_rel_err={results[name]:.3e}")
    if full_graph:
        start = time.perf_counter()
        results["forward_full"] = max(full_graph_case(rng) for _ in range(instances))
        if report:
            report(f"{'forward_full':20s} max_rel_err={results['forward_full']:.3e} "
                   f"({time.perf_counter() - start:.1f}s)")
    return results
