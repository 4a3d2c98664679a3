"""End-to-end gradient check of a tiny model against central differences."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelState, training_loss
from .train import sample_negatives

MAX_D = 8
MAX_L = 8
MAX_VOCAB = 32
REL_TOL = 1e-4


@dataclass(frozen=True)
class GroupResult:
    variant: str
    group: str
    max_rel_error: float
    max_abs_error: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= REL_TOL


def tiny_batch(vocab_size: int, L: int, seed: int, batch: int = 3):
    """Left-padded ids with one partially padded row, targets and sampled negatives."""
    rng = np.random.default_rng(seed)
    inputs = rng.integers(1, vocab_size, size=(batch, L))
    targets = rng.integers(1, vocab_size, size=(batch, L))
    inputs[0, : L // 3] = 0
    targets[0, : L // 3] = 0
    negatives = sample_negatives(targets, vocab_size - 1, rng)
    return inputs, targets, negatives


def check_variant(variant: str, d: int = 4, L: int = 6, vocab_size: int = 20, d_state: int = 3,
                  seed: int = 0, h: float = 1e-5, corrupt: str | None = None,
                  backend: str | None = None) -> list[GroupResult]:
    """Max relative error per parameter group (absolute gaps below 1e-7 count as exact)."""
    if d > MAX_D or L > MAX_L or vocab_size > MAX_VOCAB:
        raise ValueError(f"gradcheck is limited to d <= {MAX_D}, L <= {MAX_L}, |V| <= {MAX_VOCAB}")
    # a large init and step size keep every path (including the SSM decay) well away from zero
    cfg = ModelConfig(variant=variant, d=d, d_state=d_state, expand=2, vocab_size=vocab_size,
                      max_seq_len=L, dropout=0.0, init_std=0.5, delta_init=0.2)
    state = ModelState.initialize(cfg, seed)
    inputs, targets, negatives = tiny_batch(vocab_size, L, seed + 1)

    def loss_value(params):
        s = ModelState(cfg, params)
        with ad.no_grad():
            return float(training_loss(s, s.variables(False), inputs, targets, negatives,
                                       backend=backend).value)

    hook = ad.corrupt_rule(corrupt) if corrupt else contextlib.nullcontext()
    with hook:
        vars_ = state.variables()
        grads = ad.backward(training_loss(state, vars_, inputs, targets, negatives, backend=backend), vars_)
    numeric = ad.finite_difference_grad(loss_value, state.params, h)
    results = []
    for name in sorted(grads):
        rel = ad.relative_error(grads[name], numeric[name])
        results.append(GroupResult(variant, name, float(rel.max()),
                                   float(np.abs(grads[name] - numeric[name]).max())))
    return results


def format_results(results: list[GroupResult]) -> str:
    lines = []
    for r in results:
        status = "ok" if r.ok else "FAIL"
        lines.append(f"{r.variant:<10}{r.group:<22}{r.max_rel_error:>12.3e}{r.max_abs_error:>12.3e}  {status}")
    return "\n".join(lines) + "\n"
