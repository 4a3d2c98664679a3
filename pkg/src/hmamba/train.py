"""Mini-batch training loop with deterministic batch order and negative sampling."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import TrainingExamples
from .errors import NonFiniteError, TrainingAborted
from .model import ModelState, training_loss
from .optim import OptimizerState, optimizer_step

LOG_FIELDS = ("epoch", "mean_loss", "grad_norm_mean", "wall_seconds", "seed")


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    mean_loss: float
    grad_norm_mean: float
    grad_norm_max: float
    wall_seconds: float
    seed: int

    def to_line(self, record_timing: bool = True) -> str:
        """One JSON object with the fixed field order; timing is zeroed when not recorded."""
        values = {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "grad_norm_mean": self.grad_norm_mean,
            "wall_seconds": round(self.wall_seconds, 6) if record_timing else 0.0,
            "seed": self.seed,
        }
        return json.dumps({k: values[k] for k in LOG_FIELDS})


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def sample_negatives(targets: np.ndarray, n_items: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform negative per position, never equal to that position's target (0 stays 0)."""
    if n_items < 2:
        raise ValueError("negative sampling needs at least two items")
    # drawing from n_items - 1 values and shifting past the target avoids rejection loops
    draw = rng.integers(1, n_items, size=targets.shape)
    neg = np.where(draw >= targets, draw + 1, draw)
    return np.where(targets > 0, neg, 0)


def train_epoch(state: ModelState, examples: TrainingExamples, opt: OptimizerState, seed: int,
                epoch: int = 1, batch_size: int = 128, backend: str | None = None) -> EpochReport:
    """One shuffled pass over ``examples``; parameters of ``state`` are updated in place."""
    start = time.perf_counter()
    rng = epoch_rng(seed, epoch)
    order = rng.permutation(len(examples))
    losses, norms = [], []
    for b, lo in enumerate(range(0, len(order), batch_size)):
        idx = order[lo:lo + batch_size]
        inputs, targets = examples.inputs[idx], examples.targets[idx]
        negatives = None
        if state.config.variant != "full":
            negatives = sample_negatives(targets, state.config.n_items, rng)
        vars_ = state.variables()
        loss = training_loss(state, vars_, inputs, targets, negatives, rng=rng, backend=backend)
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingAborted(b)
        grads = ad.backward(loss, vars_)
        grads["embedding"][0] = 0.0  # the padding row stays at the origin
        try:
            norms.append(optimizer_step(opt, state.params, grads))
        except NonFiniteError as exc:
            raise TrainingAborted(b, f"non-finite gradient ({exc})") from exc
        losses.append(value)
    return EpochReport(
        epoch=epoch,
        mean_loss=float(np.mean(losses)),
        grad_norm_mean=float(np.mean(norms)),
        grad_norm_max=float(np.max(norms)),
        wall_seconds=time.perf_counter() - start,
        seed=int(seed),
    )


def fit(state: ModelState, examples: TrainingExamples, opt: OptimizerState, epochs: int, seed: int,
        batch_size: int = 128, log_path=None, record_timing: bool = True,
        backend: str | None = None, on_epoch=None) -> list[EpochReport]:
    """Train for ``epochs`` epochs, appending one log line per epoch to ``log_path``."""
    reports = []
    fh = Path(log_path).open("a", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, epochs + 1):
            report = train_epoch(state, examples, opt, seed, epoch, batch_size, backend)
            reports.append(report)
            if fh is not None:
                fh.write(report.to_line(record_timing) + "\n")
                fh.flush()
            if on_epoch is not None:
                on_epoch(report)
    finally:
        if fh is not None:
            fh.close()
    return reports
