"""Runtime scaling benchmarks.

Times the encoder forward pass of each variant against a reference causal
softmax self-attention layer (used only here, to show the quadratic contrast),
and compares the compiled scan kernel with the NumPy fallback.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _scan
from . import autodiff as ad
from .model import ModelConfig, ModelState, encode

ATTENTION = "attention"


@dataclass(frozen=True)
class Timing:
    variant: str
    L: int
    mean_ms: float
    std_ms: float
    reps: int


def time_call(fn, warmup: int = 3, reps: int = 10) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    return float(np.mean(samples)), float(np.std(samples))


class CausalAttention:
    """Single-head causal self-attention with pre-layer-norm and residual, forward only."""

    def __init__(self, d: int, seed: int = 0, chunk: int = 1024):
        rng = np.random.default_rng(seed)
        self.Wq, self.Wk, self.Wv, self.Wo = (rng.normal(0.0, d**-0.5, size=(d, d)) for _ in range(4))
        self.scale = d**-0.5
        self.chunk = chunk

    def __call__(self, X: np.ndarray) -> np.ndarray:
        mu = X.mean(-1, keepdims=True)
        Z = (X - mu) / np.sqrt(X.var(-1, keepdims=True) + 1e-5)
        Q, K, V = Z @ self.Wq, Z @ self.Wk, Z @ self.Wv
        L = X.shape[-2]
        out = np.empty_like(X)
        # query chunks bound the score matrix memory; the total work stays O(L^2 d)
        for lo in range(0, L, self.chunk):
            hi = min(lo + self.chunk, L)
            S = (Q[..., lo:hi, :] @ np.swapaxes(K, -1, -2)) * self.scale
            rows = np.arange(lo, hi)[:, None]
            S = np.where(np.arange(L)[None, :] <= rows, S, -np.inf)
            S = np.exp(S - S.max(-1, keepdims=True))
            S /= S.sum(-1, keepdims=True)
            out[..., lo:hi, :] = S @ V
        return X + out @ self.Wo


def benchmark_encoders(variants, lengths, d: int = 16, d_state: int = 16, vocab_size: int = 1001,
                       warmup: int = 3, reps: int = 10, seed: int = 0, attention: bool = True,
                       backend: str | None = None) -> list[Timing]:
    """Forward-pass timings, one row per (variant, L), batch size one."""
    rng = np.random.default_rng(seed)
    rows = []
    for variant in variants:
        cfg = ModelConfig(variant=variant, d=d, d_state=d_state, vocab_size=vocab_size,
                          max_seq_len=max(lengths), dropout=0.0)
        state = ModelState.initialize(cfg, seed)
        vars_ = state.variables(requires_grad=False)
        for L in lengths:
            ids = rng.integers(1, vocab_size, size=(1, L))

            def run():
                with ad.no_grad():
                    encode(state, ids, vars_, backend=backend)

            rows.append(Timing(variant, L, *time_call(run, warmup, reps), reps))
    if attention:
        attn = CausalAttention(d, seed)
        table = rng.normal(0.0, 0.1, size=(vocab_size, d))
        for L in lengths:
            X = table[rng.integers(1, vocab_size, size=(1, L))]
            rows.append(Timing(ATTENTION, L, *time_call(lambda: attn(X), warmup, reps), reps))
    return rows


def benchmark_kernels(lengths, channels: int = 32, d_state: int = 16, group: int = 16,
                      warmup: int = 1, reps: int = 5, seed: int = 0) -> list[Timing]:
    """Forward + backward scan with transport, for every available backend."""
    rng = np.random.default_rng(seed)
    rows = []
    for L in lengths:
        a = rng.uniform(0.5, 1.0, size=(1, L, d_state))
        bx = rng.normal(size=(1, L, channels, d_state))
        M = rng.normal(0.0, group**-0.5, size=(1, L, group, group))
        gh = rng.normal(size=bx.shape)
        for backend in _scan.BACKENDS:
            def run():
                h = _scan.scan_forward(a, bx, M, backend=backend)
                _scan.scan_backward(a, M, h, gh, backend=backend)

            rows.append(Timing(backend, L, *time_call(run, warmup, reps), reps))
    return rows


def loglog_slope(rows: list[Timing], variant: str) -> float:
    sel = [(r.L, r.mean_ms) for r in rows if r.variant == variant]
    if len(sel) < 2:
        return math.nan
    x = np.log([s[0] for s in sel])
    y = np.log([s[1] for s in sel])
    return float(np.polyfit(x, y, 1)[0])


def to_csv(rows: list[Timing]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "L", "mean_ms", "std_ms", "reps"])
    for r in rows:
        writer.writerow([r.variant, r.L, f"{r.mean_ms:.4f}", f"{r.std_ms:.4f}", r.reps])
    return buf.getvalue()
