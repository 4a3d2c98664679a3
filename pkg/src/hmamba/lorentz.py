"""Lorentz (hyperboloid) model primitives.

Points live on the upper sheet ``{x : <x, x>_L = -k, x_0 > 0}`` of R^{d+1},
time-like coordinate first. ``k > 0`` is the radius-squared parameter; the
sectional curvature is ``-1/k``. Every function accepts arrays with arbitrary
leading batch axes and treats the last axis as the ambient coordinate axis.

These are the validated NumPy reference versions. The differentiable
counterparts used inside the model live in :mod:`hmamba.nn`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DomainError, ShapeError

# Raw arcosh arguments below ``1 - ARCOSH_REJECT`` signal points off the manifold.
ARCOSH_REJECT = 1e-6
MANIFOLD_RTOL = 1e-6


@dataclass(frozen=True)
class Tolerance:
    """Numerical floors used by the stabilized operations."""

    eps_arcosh: float = 1e-12
    eps_norm: float = 1e-12

    def __post_init__(self):
        for name in ("eps_arcosh", "eps_norm"):
            value = getattr(self, name)
            if not 0.0 < value <= 1e-6:
                raise ValueError(f"{name} must lie in (0, 1e-6], got {value}")


DEFAULT_TOL = Tolerance()


def check_curvature(k: float) -> float:
    k = float(k)
    if not (k > 0.0 and np.isfinite(k)):
        raise DomainError(f"curvature parameter k must be positive and finite, got {k}")
    return k


def origin(dim: int, k: float = 1.0) -> np.ndarray:
    """Return ``o = (sqrt(k), 0, ..., 0)`` in R^{dim+1}."""
    k = check_curvature(k)
    o = np.zeros(dim + 1)
    o[0] = np.sqrt(k)
    return o


def lorentz_inner(u, v) -> np.ndarray:
    """``-u_0 v_0 + sum_j u_j v_j`` over the last axis."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[-1] != v.shape[-1]:
        raise ShapeError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    if u.shape[-1] < 2:
        raise ShapeError("Lorentz vectors need at least 2 coordinates")
    return -u[..., 0] * v[..., 0] + np.sum(u[..., 1:] * v[..., 1:], axis=-1)


def lorentz_norm(v) -> np.ndarray:
    """``sqrt(|<v, v>_L|)``."""
    return np.sqrt(np.abs(lorentz_inner(v, v)))


def manifold_residual(x, k: float) -> np.ndarray:
    """``|<x, x>_L + k| / k``, the relative violation of the hyperboloid constraint."""
    k = check_curvature(k)
    return np.abs(lorentz_inner(x, x) + k) / k


def check_on_manifold(x, k: float, rtol: float = MANIFOLD_RTOL) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    res = manifold_residual(x, k)
    if np.any(~np.isfinite(x)) or np.any(res > rtol) or np.any(x[..., 0] <= 0):
        worst = float(np.nanmax(np.atleast_1d(res)))
        raise DomainError(f"point(s) off the hyperboloid (worst relative residual {worst:.3e})")
    return x


def hyperbolic_distance(x, y, k: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Geodesic distance ``sqrt(k) * arcosh(-<x, y>_L / k)``.

    The arcosh argument is evaluated as ``1 + <y - x, y - x>_L / (2k)``, which is
    algebraically identical on the manifold but does not cancel catastrophically
    for nearby points, so ``d(x, x)`` is exactly zero.
    """
    k = check_curvature(k)
    x = check_on_manifold(x, k)
    y = check_on_manifold(y, k)
    raw = -lorentz_inner(x, y) / k
    if np.any(raw < 1.0 - ARCOSH_REJECT):
        raise DomainError(f"arcosh argument {float(np.min(raw)):.6g} < 1: points off the manifold")
    diff = y - x
    t = lorentz_inner(diff, diff) / (2.0 * k)
    # t in [-1e-6, 0) is floating-point drift around coincident points.
    t = np.maximum(t, 0.0)
    return np.sqrt(k) * acosh1p(t)


def acosh1p(t) -> np.ndarray:
    """``arcosh(1 + t)`` without rounding ``1 + t`` first."""
    t = np.asarray(t, dtype=np.float64)
    return np.log1p(t + np.sqrt(t * (t + 2.0)))


def lift(e) -> np.ndarray:
    """Prepend a zero time coordinate: R^d -> T_o H."""
    e = np.asarray(e, dtype=np.float64)
    return np.concatenate([np.zeros(e.shape[:-1] + (1,)), e], axis=-1)


def _check_origin_tangent(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise ShapeError("tangent vectors need at least 2 coordinates")
    if np.any(np.abs(v[..., 0]) > 1e-9):
        raise DomainError("vector is not tangent at the origin (time coordinate must be 0)")
    return v


def exp_map_origin(v, k: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Map an origin-tangent vector onto the hyperboloid.

    ``exp_o(v) = cosh(|v|/sqrt(k)) o + sqrt(k) sinh(|v|/sqrt(k)) v/|v|``.
    Vectors with ``|v| < eps_norm`` map to the origin exactly.
    """
    k = check_curvature(k)
    v = _check_origin_tangent(v)
    sk = np.sqrt(k)
    # For origin tangents the Lorentz norm is the Euclidean norm of the spatial part.
    n = np.linalg.norm(v[..., 1:], axis=-1, keepdims=True)
    small = n < tol.eps_norm
    n_safe = np.where(small, 1.0, n)
    out = np.empty_like(v)
    out[..., :1] = np.where(small, sk, sk * np.cosh(n / sk))
    out[..., 1:] = np.where(small, 0.0, sk * np.sinh(n_safe / sk) * v[..., 1:] / n_safe)
    return out


def log_map_origin(x, k: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Inverse of :func:`exp_map_origin`.

    The geodesic length ``sqrt(k) arcosh(-<o, x>_L / k)`` is computed through the
    equivalent ``sqrt(k) asinh(|x_{1:}| / sqrt(k))`` to keep precision near o.
    """
    k = check_curvature(k)
    x = check_on_manifold(x, k)
    sk = np.sqrt(k)
    r = np.linalg.norm(x[..., 1:], axis=-1, keepdims=True)
    at_origin = r < tol.eps_norm
    if np.any(at_origin & (np.abs(x[..., :1] - sk) > 1e-9 * sk)):
        raise DomainError("degenerate log map: vanishing spatial part away from the origin")
    r_safe = np.where(at_origin, 1.0, r)
    scale = np.where(at_origin, 0.0, sk * np.arcsinh(r_safe / sk) / r_safe)
    out = np.zeros_like(x)
    out[..., 1:] = scale * x[..., 1:]
    return out


def parallel_transport(x, y, v, k: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Transport ``v`` in T_x H to T_y H along the geodesic.

    ``v - 2 <y - x, v>_L / <x + y, x + y>_L * (x + y)``. The factor 2 is what
    makes the result tangent at ``y`` and the map an isometry; without it the
    map only goes half way.
    """
    k = check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = x + y
    denom = lorentz_inner(s, s)
    if np.any(np.abs(denom) < tol.eps_norm):
        raise DegenerateError("parallel transport between antipodal/degenerate pair")
    coef = 2.0 * lorentz_inner(y - x, v) / denom
    return v - coef[..., None] * s


def mobius_product(x, y, k: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Gyrovector product evaluated literally over ambient coordinates.

    ``[(1 + 2<x,y>/k + |y|^2/k) x + (1 - |x|^2/k) y] / [1 + 2<x,y>/k + |x|^2 |y|^2 / k^2]``
    with ``<.,.>`` and ``|.|^2 = |<., .>|`` the Lorentz forms. The result is not
    constrained to the hyperboloid; for two on-manifold points the ``y``
    coefficient vanishes and the product returns ``x``.
    """
    k = check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xy = lorentz_inner(x, y)
    xx = np.abs(lorentz_inner(x, x))
    yy = np.abs(lorentz_inner(y, y))
    denom = 1.0 + 2.0 * xy / k + xx * yy / k**2
    if np.any(np.abs(denom) < tol.eps_norm):
        raise DegenerateError("Mobius product denominator vanishes")
    num = (1.0 + 2.0 * xy / k + yy / k)[..., None] * x + (1.0 - xx / k)[..., None] * y
    return num / denom[..., None]


def project_to_poincare(x, k: float = 1.0) -> np.ndarray:
    """Stereographic map onto the Poincare ball of radius ``sqrt(k)``."""
    k = check_curvature(k)
    x = np.asarray(x, dtype=np.float64)
    sk = np.sqrt(k)
    return sk * x[..., 1:] / (x[..., :1] + sk)


def poincare_to_lorentz(p, k: float = 1.0) -> np.ndarray:
    """Inverse stereographic map; the time coordinate is recomputed from the spatial part."""
    k = check_curvature(k)
    p = np.asarray(p, dtype=np.float64)
    sq = np.sum(p * p, axis=-1, keepdims=True)
    if np.any(sq >= k):
        raise DomainError("point outside the Poincare ball")
    spatial = 2.0 * k * p / (k - sq)
    return reproject(lift(spatial), k)


def reproject(x, k: float = 1.0) -> np.ndarray:
    """Keep the spatial coordinates and reset ``x_0`` so that ``<x, x>_L = -k``."""
    k = check_curvature(k)
    x = np.array(x, dtype=np.float64)
    x[..., 0] = np.sqrt(k + np.sum(x[..., 1:] ** 2, axis=-1))
    return x
