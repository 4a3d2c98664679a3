"""Linear-recurrence scan kernels with a compiled core and a NumPy fallback.

The recurrence, per batch element ``b`` and state slot ``n``::

    h[t, c, n] = a[t, n] * (M[t] @ h[t-1, :, n])[c] + bx[t, c, n]

``M[t]`` is an optional ``(G, G)`` matrix applied to each of the ``C // G``
contiguous channel groups (the identity when absent). Shapes:
``a (B, L, N)``, ``bx (B, L, C, N)``, ``M (B, L, G, G)``, ``h (B, L, C, N)``.

The compiled extension is used when importable; setting ``HMAMBA_BACKEND=python``
forces the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError

try:  # pragma: no cover - depends on the build
    from . import _scan_ext
except ImportError:  # pragma: no cover
    _scan_ext = None

BACKENDS = ("compiled", "python") if _scan_ext is not None else ("python",)


def default_backend() -> str:
    requested = os.environ.get("HMAMBA_BACKEND", "").strip().lower()
    if requested == "python" or _scan_ext is None:
        return "python"
    return "compiled"


BACKEND = default_backend()


def _prepare(a, bx, M):
    a = np.ascontiguousarray(a, dtype=np.float64)
    bx = np.ascontiguousarray(bx, dtype=np.float64)
    if a.ndim != 3 or bx.ndim != 4 or bx.shape[:2] != a.shape[:2] or bx.shape[3] != a.shape[2]:
        raise ShapeError(f"incompatible scan shapes a{a.shape} bx{bx.shape}")
    if M is not None:
        M = np.ascontiguousarray(M, dtype=np.float64)
        G = M.shape[-1]
        if M.shape != a.shape[:2] + (G, G) or bx.shape[2] % G:
            raise ShapeError(f"transport matrices {M.shape} do not fit channels {bx.shape[2]}")
    return a, bx, M


def _resolve(backend):
    backend = backend or BACKEND
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown scan backend {backend!r}")
    if backend == "compiled" and _scan_ext is None:
        raise RuntimeError("compiled scan backend is not built")
    return backend


def _apply_groups(M, h):
    """``M (B, G, G)`` applied groupwise to ``h (B, C, N)``."""
    B, C, N = h.shape
    G = M.shape[-1]
    hg = h.reshape(B, C // G, G, N)
    return np.einsum("bij,bejn->bein", M, hg).reshape(B, C, N)


def _apply_groups_t(M, g):
    B, C, N = g.shape
    G = M.shape[-1]
    gg = g.reshape(B, C // G, G, N)
    return np.einsum("bij,bein->bejn", M, gg).reshape(B, C, N)


def _forward_py(a, bx, M):
    B, L, C, N = bx.shape
    h = np.empty_like(bx)
    prev = np.zeros((B, C, N))
    for t in range(L):
        carry = prev if M is None else _apply_groups(M[:, t], prev)
        prev = a[:, t, None, :] * carry + bx[:, t]
        h[:, t] = prev
    return h


def _backward_py(a, M, h, gh):
    B, L, C, N = h.shape
    ga = np.zeros_like(a)
    gbx = np.empty_like(h)
    gM = None if M is None else np.zeros_like(M)
    g = np.zeros((B, C, N))
    for t in range(L - 1, -1, -1):
        g = g + gh[:, t]
        gbx[:, t] = g
        if t == 0:
            break
        prev = h[:, t - 1]
        carry = prev if M is None else _apply_groups(M[:, t], prev)
        ga[:, t] = np.sum(g * carry, axis=1)
        q = a[:, t, None, :] * g
        if M is None:
            g = q
        else:
            G = M.shape[-1]
            gM[:, t] = np.einsum(
                "bein,bejn->bij", q.reshape(B, C // G, G, N), prev.reshape(B, C // G, G, N)
            )
            g = _apply_groups_t(M[:, t], q)
    return ga, gbx, gM


def scan_forward(a, bx, M=None, backend: str | None = None) -> np.ndarray:
    """All hidden states of the recurrence, ``h_0 = 0``."""
    a, bx, M = _prepare(a, bx, M)
    if _resolve(backend) == "compiled":
        return _scan_ext.scan_forward(a, bx, M)
    return _forward_py(a, bx, M)


def scan_backward(a, M, h, gh, backend: str | None = None):
    """Vector-Jacobian product of :func:`scan_forward`.

    Given upstream gradients ``gh`` w.r.t. every hidden state, returns
    ``(grad_a, grad_bx, grad_M)`` (``grad_M`` is None without transport).
    """
    a, h, M = _prepare(a, h, M)
    gh = np.ascontiguousarray(gh, dtype=np.float64)
    if _resolve(backend) == "compiled":
        return _scan_ext.scan_backward(a, M, h, gh)
    return _backward_py(a, M, h, gh)
