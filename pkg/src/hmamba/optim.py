"""Optimizers: constant-rate SGD, SGD with the 1/t step schedule, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError

KINDS = ("sgd", "sgd_inv_t", "adam")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower().replace("-1/t", "_inv_t").replace("-", "_")
        if self.kind not in KINDS:
            raise ValueError(f"optimizer kind must be one of {KINDS}")

    @property
    def effective_lr(self) -> float:
        """Learning rate used by the most recent step (eta / t for the 1/t schedule)."""
        if self.kind == "sgd_inv_t":
            return self.lr / max(self.t, 1)
        return self.lr


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray]) -> float:
    """Update ``params`` in place; returns the pre-clipping global gradient norm."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteError(f"{bad} non-finite gradient entries in {name!r}; step aborted")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
    grads, norm = clip_by_global_norm(grads, state.clip_norm)
    state.t += 1
    if state.kind == "sgd":
        for name, g in grads.items():
            params[name] -= state.lr * g
    elif state.kind == "sgd_inv_t":
        rate = state.lr / state.t
        for name, g in grads.items():
            params[name] -= rate * g
    else:
        b1, b2 = state.beta1, state.beta2
        c1 = 1.0 - b1**state.t
        c2 = 1.0 - b2**state.t
        for name, g in grads.items():
            m = state.m.get(name)
            v = state.v.get(name)
            m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
            v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
            state.m[name], state.v[name] = m, v
            params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm
