"""Pieces shared by both trainers: results, batching, loss logs, finiteness checks."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from src.autodiff.nn import Module
from src.autodiff.optim import OptimizerState
from src.errors import NumericalError

logger = logging.getLogger(__name__)

_SHUFFLE_STREAM = 1


@dataclass
class TrainingResult:
    model: Module
    optimizer: OptimizerState
    epochs_completed: int
    history: list[dict] = field(default_factory=list)


def epoch_batches(count: int, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Shuffled index batches; the order depends only on (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SHUFFLE_STREAM, epoch]))
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def ensure_finite(values: dict[str, float], epoch: int, batch: int) -> None:
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    if bad:
        raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {batch}: {bad}")


class LossLog:
    """Appends one CSV row per epoch; the header is written once."""

    def __init__(self, path: Optional[Path], columns: Sequence[str]):
        self.path = Path(path) if path is not None else None
        self.columns = list(columns)

    def write(self, row: dict) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns, lineterminator="\n")
            if fresh:
                writer.writeheader()
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_loss_log(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
