"""Discretization and execution of diagonal linear state-space recurrences.

Shapes follow the convention ``(L, ...)`` with time on the first axis. The
recurrence kernel itself lives in :mod:`hmamba._scan` (compiled when available).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _scan
from .errors import DomainError, ShapeError, UnsupportedModeError
from .lorentz import check_curvature

SERIES_THRESHOLD = 1e-8


def zoh_discretize(a, b, delta):
    """Exact zero-order-hold discretization of ``h' = a h + b x``.

    Returns ``(exp(delta a), (exp(delta a) - 1) / a * b)``; the second term
    switches to its limit ``delta * b`` when ``|delta a| < 1e-8``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise DomainError("delta must be positive")
    da = delta * a
    a_bar = np.exp(da)
    small = np.abs(da) < SERIES_THRESHOLD
    safe_da = np.where(small, 1.0, da)
    # expm1(da)/da -> 1 + da/2 on the series branch
    factor = np.where(small, 1.0 + 0.5 * da, np.expm1(safe_da) / safe_da)
    b_bar = delta * factor * b
    if a_bar.ndim == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def curvature_scale(n_state: int, k: float) -> np.ndarray:
    """Diagonal of ``K(k) = diag(sqrt(k), 1, ..., 1)``."""
    scale = np.ones(n_state)
    scale[0] = np.sqrt(check_curvature(k))
    return scale


def curvature_discretize(a, delta, k: float) -> np.ndarray:
    """``exp(delta * a * K(k))``: ZOH transition with the first state channel scaled by sqrt(k)."""
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise DomainError("delta must be positive")
    return np.exp(delta * a * curvature_scale(a.shape[-1], k))


@dataclass
class SsmParams:
    """Time-invariant state-space matrices with a diagonal, strictly negative ``A``."""

    A: np.ndarray  # (d_state,)
    B: np.ndarray  # (d_state, d_in)
    C: np.ndarray  # (d_out, d_state)
    log_delta_bias: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        if np.any(self.A >= 0):
            raise DomainError("A must be strictly negative for a stable recurrence")
        n = self.A.shape[0]
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ShapeError(f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")

    @property
    def d_state(self) -> int:
        return self.A.shape[0]

    @classmethod
    def initial(cls, d_state: int, d_in: int, d_out: int, rng=None) -> "SsmParams":
        rng = np.random.default_rng(rng)
        a = -(np.arange(d_state) + 1.0)
        return cls(a, rng.normal(size=(d_state, d_in)), rng.normal(size=(d_out, d_state)) / np.sqrt(d_state))

    def discretize(self, delta: float, k: float | None = None):
        """Time-invariant ``(A_bar, B_bar)``; ``k`` switches on the curvature scaling of A."""
        a = self.A if k is None else self.A * curvature_scale(self.d_state, k)
        a_bar, b_fac = zoh_discretize(a, np.ones_like(a), delta)
        return a_bar, b_fac[:, None] * self.B


@dataclass
class SelectiveWeights:
    """Projections producing per-token ``(delta, B_t, C_t)`` from the token features."""

    w_delta: np.ndarray  # (d_in,)
    W_B: np.ndarray  # (d_state, d_in)
    W_C: np.ndarray  # (d_state, d_in)
    log_delta_bias: float = 0.0


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def selective_params(x_t, weights: SelectiveWeights):
    """Input-dependent SSM parameters for one token (or a ``(L, d_in)`` stack).

    ``delta = softplus(w_delta . x + bias)``, ``B_t = W_B x``, ``C_t = W_C x``.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    delta = softplus(x_t @ weights.w_delta + weights.log_delta_bias)
    return delta, x_t @ weights.W_B.T, x_t @ weights.W_C.T


@dataclass
class DiscretizedSteps:
    """Per-token discretized parameters for a length-L sequence."""

    a_bar: np.ndarray  # (L, d_state)
    b_bar_x: np.ndarray  # (L, d_state)
    delta: np.ndarray | None = None  # (L,)

    def __len__(self):
        return self.a_bar.shape[0]


def discretize_selective(a, delta, B_t, x_t, k: float | None = None) -> DiscretizedSteps:
    """Build per-token steps for a single-input SSM: ``b_bar_x[t] = B_bar[t] * x[t]``.

    ``a``: (d_state,), ``delta``: (L,), ``B_t``: (L, d_state), ``x_t``: (L,).
    """
    a = np.asarray(a, dtype=np.float64)
    if k is not None:
        a = a * curvature_scale(a.shape[-1], k)
    delta = np.asarray(delta, dtype=np.float64)
    a_bar, b_bar = zoh_discretize(a[None, :], np.asarray(B_t), delta[:, None])
    return DiscretizedSteps(a_bar, b_bar * np.asarray(x_t, dtype=np.float64)[:, None], delta)


def ssm_scan(steps: DiscretizedSteps, C, x=None) -> np.ndarray:
    """Left-to-right recurrence ``h_t = a_bar_t * h_{t-1} + b_bar_x_t``, ``y_t = C_t h_t``.

    ``C`` is ``(d_out, d_state)`` (time-invariant) or ``(L, d_out, d_state)``.
    ``h_0 = 0``; cost is O(L * d_state * d_out).
    """
    a_bar = np.asarray(steps.a_bar, dtype=np.float64)
    bx = np.asarray(steps.b_bar_x, dtype=np.float64)
    L = a_bar.shape[0]
    if L < 1:
        raise ShapeError("empty sequence")
    if bx.shape != a_bar.shape:
        raise ShapeError(f"a_bar {a_bar.shape} and b_bar_x {bx.shape} disagree")
    if x is not None and np.asarray(x).shape[0] != L:
        raise ShapeError(f"parameter sequence has length {L}, input has {np.asarray(x).shape[0]}")
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 3 and C.shape[0] != L:
        raise ShapeError(f"read-out sequence has length {C.shape[0]}, expected {L}")
    h = _scan.scan_forward(a_bar[None], bx[None, :, None, :])[0, :, 0, :]  # (L, d_state)
    if C.ndim == 2:
        return h @ C.T
    return np.einsum("lon,ln->lo", C, h)


def ssm_scan_mimo(a_bar, B_bar, C, x) -> np.ndarray:
    """Scan a time-invariant multi-input system given ``(A_bar, B_bar, C)`` directly."""
    a_bar = np.asarray(a_bar, dtype=np.float64)
    if a_bar.ndim != 1:
        raise UnsupportedModeError("ssm_scan_mimo expects time-invariant A_bar")
    x = np.asarray(x, dtype=np.float64)
    bx = x @ np.asarray(B_bar, dtype=np.float64).T
    steps = DiscretizedSteps(np.broadcast_to(a_bar, bx.shape).copy(), bx)
    return ssm_scan(steps, C, x)


def ssm_kernel(a_bar, B_bar, C, length: int) -> np.ndarray:
    """Convolution taps ``K[j] = C diag(A_bar^j) B_bar``, shape ``(length, d_out, d_in)``."""
    powers = a_bar[None, :] ** np.arange(length)[:, None]  # (length, d_state)
    return np.einsum("on,jn,ni->joi", C, powers, B_bar)


def ssm_conv(a_bar, B_bar, C, x) -> np.ndarray:
    """Compute the SSM output as a causal convolution with the unrolled kernel.

    Only valid for time-invariant parameters; per-token (selective) ``A_bar``
    raises :class:`UnsupportedModeError`.
    """
    a_bar = np.asarray(a_bar, dtype=np.float64)
    B_bar = np.asarray(B_bar, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if a_bar.ndim != 1 or B_bar.ndim != 2 or C.ndim != 2:
        raise UnsupportedModeError("convolution mode requires time-invariant parameters")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L = x.shape[0]
    K = ssm_kernel(a_bar, B_bar, C, L)
    y = np.zeros((L, C.shape[0]))
    for j in range(L):
        y[j:] += x[: L - j] @ K[j].T
    return y


def causal_conv1d(x, kernel) -> np.ndarray:
    """Depthwise causal convolution with left zero padding of ``w - 1``.

    ``x``: (..., L, d); ``kernel``: (w, d). Output position t reads
    ``x[t-w+1 .. t]`` with ``kernel[w-1]`` applied to ``x[t]``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    w = kernel.shape[0]
    if w < 1:
        raise ShapeError("kernel width must be >= 1")
    L = x.shape[-2]
    y = np.zeros_like(x)
    for j in range(w):
        shift = w - 1 - j
        if shift >= L:
            continue
        y[..., shift:, :] += kernel[j] * x[..., : L - shift, :]
    return y
