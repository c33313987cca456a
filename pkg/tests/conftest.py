"""Shared fixtures: the acceptance corpus and cached overfit training runs.

Training runs are expensive (minutes each on one core), so each variant is
trained once per session and reused by every test that needs it.
"""
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from deepmark.data import load_covers, load_watermarks, write_corpus
from deepmark.ecc import PAYLOAD_BYTES, watermark_pack
from deepmark.imageio import write_pbm
from deepmark.trainer import TrainConfig, TrainResult, train

OVERFIT_PAIRS = 8
OVERFIT_SEED = 7
OVERFIT_STEPS = 500

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains full models; deselect with -m 'not slow'")


def payloads(seed: int = OVERFIT_SEED) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, (OVERFIT_PAIRS, PAYLOAD_BYTES), dtype=np.uint8)


def write_acceptance_corpus(root) -> tuple[Path, Path]:
    """Synthetic covers paired with RS-packed random payloads as watermarks."""
    cdir, wdir = write_corpus(root, OVERFIT_PAIRS, seed=OVERFIT_SEED)
    for i, p in enumerate(payloads()):
        write_pbm(wdir / f"{i:03d}.pbm", watermark_pack(p.tobytes()))
    return cdir, wdir


@dataclass
class OverfitRun:
    root: Path
    config: TrainConfig
    result: TrainResult
    seconds: float
    covers: np.ndarray
    watermarks: np.ndarray

    @property
    def model(self):
        return self.result.model


def overfit(root: Path, use_invariance: bool = True, seed: int = OVERFIT_SEED) -> OverfitRun:
    cdir, wdir = write_acceptance_corpus(root / "data")
    cfg = TrainConfig(cover_dir=str(cdir), watermark_dir=str(wdir), epochs=OVERFIT_STEPS // 2, seed=seed,
                      pairing="fixed", use_invariance=use_invariance,
                      checkpoint_path=str(root / "model.dmrk"), log_path=str(root / "log.csv"))
    start = time.perf_counter()
    result = train(cfg)
    seconds = time.perf_counter() - start
    return OverfitRun(root, cfg, result, seconds, np.stack(load_covers(cdir)), np.stack(load_watermarks(wdir)))


_RUNS: dict[tuple, OverfitRun] = {}


@pytest.fixture(scope="session")
def overfit_runs(tmp_path_factory):
    """Lazily trains and caches runs keyed by (label, use_invariance, seed)."""
    def get(label: str = "a", use_invariance: bool = True, seed: int = OVERFIT_SEED) -> OverfitRun:
        key = (label, use_invariance, seed)
        if key not in _RUNS:
            root = tmp_path_factory.mktemp(f"overfit_{label}_{int(use_invariance)}_{seed}")
            _RUNS[key] = overfit(root, use_invariance, seed)
        return _RUNS[key]
    return get
