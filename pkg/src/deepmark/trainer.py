"""Training loop: pairing, ADAM updates, validation, logging, checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .data import load_covers, load_watermarks
from .nets import DEFAULT_REDUNDANCY, WatermarkingModel
from .objective import CSV_FIELDS, LossBreakdown, LossWeights, apply_objective_gradients, breakdown, evaluate
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOG_HEADER = ("step",) + CSV_FIELDS + ("phase",)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    cover_dir: str = "covers"
    watermark_dir: str = "watermarks"
    epochs: int = 1
    batch_size: int = 4
    steps_per_epoch: int = 0          # 0: one pass over the training pairs
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    redundancy: int = DEFAULT_REDUNDANCY
    seed: int = 0
    validation_fraction: float = 0.0
    checkpoint_path: str = "model.dmrk"
    log_path: str = "train_log.csv"
    pairing: str = "random"           # "random" or "fixed" (cover i with watermark i)
    use_invariance: bool = True
    save_optimizer: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.steps_per_epoch < 0:
            raise ValueError("epochs and steps_per_epoch must be >= 0")
        if self.use_invariance and self.redundancy < 3:
            raise ValueError(f"redundancy N must be >= 3, got {self.redundancy}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.pairing not in ("random", "fixed"):
            raise ValueError(f"pairing must be 'random' or 'fixed', got {self.pairing!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            for key in ("cover_dir", "watermark_dir", "checkpoint_path", "log_path"):
                p = Path(getattr(cfg, key))
                if not p.is_absolute():
                    setattr(cfg, key, str(Path(base_dir) / p))
        return cfg

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


@dataclass
class TrainResult:
    model: WatermarkingModel
    adam: AdamState
    steps: int
    rows: list[list]
    best_validation: float | None = None


def _split(n_covers: int, n_marks: int, cfg: TrainConfig, rng: np.random.Generator):
    """Training and validation (cover index, watermark index) pools."""
    if cfg.pairing == "fixed":
        if n_covers != n_marks:
            raise ValueError(f"fixed pairing needs equal counts, got {n_covers} covers and {n_marks} watermarks")
        order = rng.permutation(n_covers)
        n_val = int(math.floor(cfg.validation_fraction * n_covers))
        if n_val >= n_covers:
            raise ValueError("validation split leaves no training pairs")
        train = sorted(order[n_val:].tolist())
        val = sorted(order[:n_val].tolist())
        return [(i, i) for i in train], [(i, i) for i in val]
    order = rng.permutation(n_covers)
    n_val = int(math.floor(cfg.validation_fraction * n_covers))
    if n_val >= n_covers:
        raise ValueError("validation split leaves no training covers")
    val_marks = rng.integers(0, n_marks, size=n_val)
    val = [(int(c), int(w)) for c, w in zip(sorted(order[:n_val].tolist()), val_marks)]
    return sorted(order[n_val:].tolist()), val


def _epoch_pairs(train, cfg: TrainConfig, n_marks: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if cfg.pairing == "fixed":
        # Fixed pairs also keep a fixed order so every epoch sees the same batches.
        return list(train)
    covers = [train[i] for i in rng.permutation(len(train))]
    marks = rng.integers(0, n_marks, size=len(covers))
    return [(c, int(w)) for c, w in zip(covers, marks)]


def validate(model: WatermarkingModel, covers, marks, pairs, weights: LossWeights, batch: int) -> LossBreakdown:
    """Mean loss over held-out pairs; no tape is active, so nothing is recorded or updated."""
    acc = np.zeros(4)
    for start in range(0, len(pairs), batch):
        chunk = pairs[start:start + batch]
        c = np.stack([covers[i] for i, _ in chunk])
        w = np.stack([marks[j] for _, j in chunk])
        inter = model.forward_full(w, c)
        terms = evaluate(inter, w, c, model, weights)
        acc += len(chunk) * np.array([float(terms[k].data) for k in ("extraction", "fidelity", "information", "penalty")])
    e, f, i, p = acc / len(pairs)
    return breakdown({"extraction": _Scalar(e), "fidelity": _Scalar(f), "information": _Scalar(i),
                      "penalty": _Scalar(p)}, weights)


class _Scalar:
    def __init__(self, v):
        self.data = v


def _row(step: int, b: LossBreakdown, phase: str) -> list:
    return [step, *[repr(float(v)) for v in b.csv_row()], phase]


def train(cfg: TrainConfig, covers=None, watermarks=None, model: WatermarkingModel | None = None) -> TrainResult:
    """Run ``epochs * steps_per_epoch`` ADAM steps and write the log and checkpoint.

    ``covers`` / ``watermarks`` override the configured directories.
    """
    covers = list(covers) if covers is not None else load_covers(cfg.cover_dir)
    marks = list(watermarks) if watermarks is not None else load_watermarks(cfg.watermark_dir)
    if not covers or not marks:
        raise ValueError("training needs at least one cover and one watermark")

    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = WatermarkingModel.create(cfg.seed, cfg.redundancy, cfg.use_invariance)
    adam = AdamState(lr=cfg.learning_rate)
    train_pool, val_pairs = _split(len(covers), len(marks), cfg, rng)
    n_train = len(train_pool)
    steps_per_epoch = cfg.steps_per_epoch or math.ceil(n_train / cfg.batch_size)

    rows: list[list] = []
    log_path = Path(cfg.log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    best = None
    step = 0
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for epoch in range(cfg.epochs):
            queue: list[tuple[int, int]] = []
            for _ in range(steps_per_epoch):
                while len(queue) < cfg.batch_size:
                    queue.extend(_epoch_pairs(train_pool, cfg, len(marks), rng))
                batch, queue = queue[:cfg.batch_size], queue[cfg.batch_size:]
                c = np.stack([covers[i] for i, _ in batch])
                w = np.stack([marks[j] for _, j in batch])
                model.zero_grad()
                parts, _ = apply_objective_gradients(model, w, c, cfg.weights)
                step += 1
                if not parts.is_finite():
                    raise TrainingError(f"non-finite loss at step {step}: {parts}")
                adam_step(model.params, adam)
                row = _row(step, parts, "train")
                rows.append(row)
                writer.writerow(row)
            if val_pairs:
                vb = validate(model, covers, marks, val_pairs, cfg.weights, cfg.batch_size)
                row = _row(step, vb, "val")
                rows.append(row)
                writer.writerow(row)
                if best is None or vb.objective < best:
                    best = vb.objective
                    _save(cfg, model, step, adam, best_checkpoint_path(cfg))
            log.info("epoch %d/%d step %d objective %.6f", epoch + 1, cfg.epochs, step,
                     float(rows[-1][6]) if rows else float("nan"))
            fh.flush()
    model.zero_grad()
    _save(cfg, model, step, adam)
    return TrainResult(model=model, adam=adam, steps=step, rows=rows, best_validation=best)


def best_checkpoint_path(cfg: TrainConfig) -> Path:
    """Where the best-validation checkpoint goes: ``model.dmrk`` -> ``model.best.dmrk``."""
    p = Path(cfg.checkpoint_path)
    return p.with_name(f"{p.stem}.best{p.suffix}")


def _save(cfg: TrainConfig, model: WatermarkingModel, step: int, adam: AdamState, path=None) -> None:
    save_checkpoint(path or cfg.checkpoint_path, Checkpoint(model=model, step=step,
                                                   adam=adam if cfg.save_optimizer else None))
