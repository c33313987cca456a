"""PSNR / BER and attack sweeps over a trained model."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackSpec, apply_attack
from .nets import WatermarkingModel


def psnr(c, m) -> float:
    """10*log10(max(c)^2 / MSE(c, m)); the peak is the cover's own maximum.

    Identical images give ``math.inf``.
    """
    c = np.asarray(getattr(c, "data", c), dtype=np.float64)
    m = np.asarray(getattr(m, "data", m), dtype=np.float64)
    if c.shape != m.shape:
        raise ValueError(f"psnr: shape mismatch {c.shape} vs {m.shape}")
    peak = c.max()
    if peak <= 0:
        raise ValueError("psnr undefined for a cover whose maximum is 0")
    mse = np.mean((c - m) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * math.log10(peak * peak / mse))


def binarize(w) -> np.ndarray:
    """Threshold at 0.5; an exact 0.5 maps to 1."""
    return (np.asarray(getattr(w, "data", w)) >= 0.5).astype(np.uint8)


def ber(w, w_star) -> float:
    """Percentage of mismatched bits after binarizing both inputs."""
    a, b = binarize(w), binarize(w_star)
    if a.shape != b.shape:
        raise ValueError(f"ber: shape mismatch {a.shape} vs {b.shape}")
    return float(np.count_nonzero(a != b) * 100.0 / a.size)


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


@dataclass
class SweepResult:
    kind: str
    rows: list[tuple[float, float, float, int]] = field(default_factory=list)  # strength, mean BER, mean PSNR, n

    @property
    def strengths(self) -> list[float]:
        return [r[0] for r in self.rows]


def worker_count() -> int:
    """Thread cap from ``DEEPMARK_THREADS``, defaulting to the CPU count."""
    env = os.environ.get("DEEPMARK_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"DEEPMARK_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"DEEPMARK_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _attack_each(marked: np.ndarray, specs: list[AttackSpec], workers: int) -> np.ndarray:
    # Results are collected in input order, so the thread count never changes the output.
    if workers <= 1 or len(specs) <= 1:
        return np.stack([apply_attack(marked[i], sp) for i, sp in enumerate(specs)])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.stack(list(pool.map(apply_attack, list(marked), specs)))


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def mark_all(model: WatermarkingModel, watermarks, covers, batch: int = 8) -> np.ndarray:
    watermarks, covers = np.asarray(watermarks, np.float32), np.asarray(covers, np.float32)
    out = [model.mark(watermarks[s], covers[s]).data for s in _batches(len(covers), batch)]
    return np.concatenate(out, axis=0)


def recover_all(model: WatermarkingModel, marked, batch: int = 8) -> np.ndarray:
    marked = np.asarray(marked, np.float32)
    return np.concatenate([model.recover(marked[s]).data for s in _batches(len(marked), batch)], axis=0)


def robustness_sweep(model: WatermarkingModel, watermarks, covers, grids: dict[str, Sequence[float]],
                     seed: int = 0, csv_path=None, svg_dir=None, workers: int | None = None) -> list[SweepResult]:
    """Embed every pair, attack it at each strength, extract, and average BER / PSNR.

    Pair ``i`` at grid index ``j`` uses attack seed ``seed + 1000*j + i``.
    PSNR is measured between the cover and the attacked marked image.
    """
    watermarks = np.asarray(watermarks, np.float32)
    covers = np.asarray(covers, np.float32)
    if len(covers) == 0 or len(covers) != len(watermarks):
        raise ValueError(f"sweep needs a non-empty paired dataset, got {len(covers)} covers and {len(watermarks)} watermarks")
    workers = worker_count() if workers is None else workers
    marked = mark_all(model, watermarks, covers)
    results = []
    for kind, grid in grids.items():
        grid = [float(s) for s in grid]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"strength grid for {kind} must be strictly increasing: {grid}")
        res = SweepResult(kind)
        for j, s in enumerate(grid):
            attacked = _attack_each(marked, [AttackSpec(kind, s, seed + 1000 * j + i)
                                             for i in range(len(marked))], workers)
            rec = recover_all(model, attacked)
            bers = [ber(watermarks[i], rec[i]) for i in range(len(marked))]
            psnrs = [psnr(covers[i], attacked[i]) for i in range(len(marked))]
            res.rows.append((s, float(np.mean(bers)), float(np.mean(psnrs)), len(marked)))
        results.append(res)
    if csv_path is not None:
        write_sweep_csv(results, csv_path)
    if svg_dir is not None:
        Path(svg_dir).mkdir(parents=True, exist_ok=True)
        for res in results:
            Path(svg_dir, f"{res.kind}.svg").write_text(sweep_svg(res))
    return results


def write_sweep_csv(results: list[SweepResult], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kind", "strength", "mean_ber", "mean_psnr", "n"])
        for res in results:
            for s, b, p, n in res.rows:
                wr.writerow([res.kind, repr(s), f"{b:.6f}", format_db(p), n])


def sweep_svg(res: SweepResult, width: int = 480, height: int = 320) -> str:
    """Single-polyline chart of mean BER against strength."""
    pad = 50
    xs = [r[0] for r in res.rows] or [0.0]
    x_lo, x_hi = min(xs), max(xs)
    span = (x_hi - x_lo) or 1.0
    pts = []
    for s, b, _, _ in res.rows:
        px = pad + (s - x_lo) / span * (width - 2 * pad)
        py = height - pad - b / 100.0 * (height - 2 * pad)
        pts.append(f"{px:.2f},{py:.2f}")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">{res.kind} strength '
        f'({x_lo:g} to {x_hi:g})</text>\n'
        f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" text-anchor="middle">'
        f'mean BER (%, 0 to 100)</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{" ".join(pts)}"/>\n'
        f'</svg>\n'
    )


def ablation_tau(with_tau: WatermarkingModel, without_tau: WatermarkingModel, watermarks, covers,
                 attack: AttackSpec, csv_path=None) -> dict[str, float]:
    """Mean BER of both variants on identically attacked inputs.

    Each variant marks the pairs with its own embedder; the same attack spec
    (including the per-pair seed ``attack.seed + i``) is then applied to both.
    """
    if with_tau.use_invariance is False or without_tau.use_invariance is True:
        raise ValueError("ablation_tau expects (model with invariance layer, model without)")
    watermarks = np.asarray(watermarks, np.float32)
    covers = np.asarray(covers, np.float32)
    if len(covers) == 0 or len(covers) != len(watermarks):
        raise ValueError("ablation needs a non-empty paired dataset")
    out = {}
    for label, model in (("with_tau", with_tau), ("without_tau", without_tau)):
        marked = mark_all(model, watermarks, covers)
        attacked = np.stack([apply_attack(marked[i], AttackSpec(attack.kind, attack.strength, attack.seed + i))
                             for i in range(len(marked))])
        rec = recover_all(model, attacked)
        out[label] = float(np.mean([ber(watermarks[i], rec[i]) for i in range(len(marked))]))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["variant", "kind", "strength", "mean_ber", "n"])
            for label in ("with_tau", "without_tau"):
                wr.writerow([label, attack.kind, repr(float(attack.strength)), f"{out[label]:.6f}", len(covers)])
    return out
