"""Differentiable building blocks: Lorentz maps, transport, gyro-mixing, SSM layers.

These mirror :mod:`hmamba.lorentz` and :mod:`hmamba.ssm` but are expressed
through :mod:`hmamba.autodiff` primitives so gradients reach every parameter.
Hyperbolic tensors are ``(..., d + 1)`` with the time coordinate first;
origin-tangent vectors are passed by their spatial part ``(..., d)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import DegenerateError, DomainError
from .lorentz import ARCOSH_REJECT, DEFAULT_TOL, Tolerance, check_on_manifold
from .ssm import curvature_scale

# x0 stays below ~1e4 sqrt(k) at this radius, where float64 still resolves <x,x>_L to 1e-7 k
BALL_MAX_NORM = 1.0 - 1e-4


def minkowski_sign(dim: int) -> np.ndarray:
    s = np.ones(dim)
    s[0] = -1.0
    return s


def lorentz_inner(u, v) -> Var:
    u, v = ad.as_var(u), ad.as_var(v)
    return ad.sum_(u * v * minkowski_sign(u.shape[-1]), axis=-1, keepdims=True)


def _safe_norm(v: Var, eps: float) -> Var:
    # clamp below eps**2 keeps the sqrt differentiable at v = 0 (zero gradient there)
    return ad.sqrt(ad.clamp(ad.sum_(v * v, axis=-1, keepdims=True), lo=eps * eps))


def exp_map_origin(v: Var, k: float, tol: Tolerance = DEFAULT_TOL) -> Var:
    """Spatial tangent ``(..., d)`` -> hyperboloid point ``(..., d + 1)``."""
    sk = np.sqrt(k)
    n = _safe_norm(v, tol.eps_norm)
    time = ad.cosh(n / sk) * sk
    spatial = v * (ad.sinh(n / sk) * sk / n)
    return ad.concat([time, spatial], axis=-1)


def log_map_origin(x: Var, k: float, tol: Tolerance = DEFAULT_TOL) -> Var:
    """Hyperboloid point -> spatial part of its origin-tangent preimage.

    Uses ``sqrt(k) asinh(r / sqrt(k))`` for the geodesic length, equal on the
    manifold to ``sqrt(k) arcosh(x_0 / sqrt(k))`` and stable near the origin.
    """
    sk = np.sqrt(k)
    xs = x[..., 1:]
    r = _safe_norm(xs, tol.eps_norm)
    return xs * (ad.asinh(r / sk) * sk / r)


def reproject(spatial: Var, k: float) -> Var:
    """Attach the time coordinate ``sqrt(k + |s|^2)`` to a spatial vector."""
    time = ad.sqrt(ad.sum_(spatial * spatial, axis=-1, keepdims=True) + k)
    return ad.concat([time, spatial], axis=-1)


def to_ball(x: Var, k: float) -> Var:
    sk = np.sqrt(k)
    return x[..., 1:] * sk / (x[..., :1] + sk)


def from_ball(p: Var, k: float) -> Var:
    """Poincare ball (radius sqrt(k)) -> hyperboloid, clipping the radius just inside the ball."""
    sk = np.sqrt(k)
    norm = _safe_norm(p, DEFAULT_TOL.eps_norm)
    p = p * ad.clamp(BALL_MAX_NORM * sk / norm, hi=1.0)
    sq = ad.sum_(p * p, axis=-1, keepdims=True)
    return reproject(p * (2.0 * k) / (k - sq), k)


def mobius_product(x: Var, y: Var, k: float) -> Var:
    """Literal gyro-product over ambient coordinates (see :func:`hmamba.lorentz.mobius_product`)."""
    xy = lorentz_inner(x, y)
    xx = _abs_inner(x)
    yy = _abs_inner(y)
    denom = 1.0 + xy * (2.0 / k) + xx * yy * (1.0 / k**2)
    if np.any(np.abs(denom.value) < DEFAULT_TOL.eps_norm):
        raise DegenerateError("Mobius product denominator vanishes")
    num = x * (1.0 + xy * (2.0 / k) + yy * (1.0 / k)) + y * (1.0 - xx * (1.0 / k))
    return num / denom


def _abs_inner(x: Var) -> Var:
    ip = lorentz_inner(x, x)
    sign = np.where(ip.value < 0, -1.0, 1.0)
    return ip * sign


def lift(e: Var) -> Var:
    e = ad.as_var(e)
    return ad.concat([np.zeros(e.shape[:-1] + (1,)), e], axis=-1)


def gyro_residual(h: Var, m: Var, k: float) -> Var:
    """Combine residual ``h`` with update ``m`` (both on the hyperboloid).

    Both points go to the Poincare ball, are lifted to time-zero ambient
    vectors, combined with the gyro-product, and mapped back onto the
    hyperboloid. ``m = o`` returns ``h``.
    """
    ph = lift(to_ball(h, k))
    pm = lift(to_ball(m, k))
    return from_ball(mobius_product(ph, pm, k)[..., 1:], k)


def parallel_transport(x: Var, y: Var, v: Var) -> Var:
    """``v - 2 <y - x, v>_L / <x + y, x + y>_L (x + y)`` with points and vectors on the last axis."""
    s = x + y
    return v - s * (2.0 * lorentz_inner(y - x, v) / lorentz_inner(s, s))


def transport_matrices(H: Var, k: float) -> Var:
    """Per-step carry maps ``T_o -> T_o`` for consecutive points of a sequence.

    For step t the origin-frame carry is transported o -> H[t-1] -> H[t] -> o,
    i.e. the recurrent term is moved along the sequence's geodesic segment.
    ``H``: (B, L, d + 1); returns (B, L, d, d) acting on spatial tangent
    coordinates (identity at t = 0 and wherever consecutive points coincide).
    """
    Bsz, L, D1 = H.shape
    d = D1 - 1
    o = np.zeros(D1)
    o[0] = np.sqrt(k)
    prev = ad.concat([np.broadcast_to(o, (Bsz, 1, D1)), H[:, :-1, :]], axis=1)
    basis = np.concatenate([np.zeros((1, d)), np.eye(d)], axis=0)  # columns: lifted e_j

    def pt_cols(a, b, V):
        # a, b: (B, L, D1) points; V: (B, L, D1, d) column vectors
        s = a + b
        sign = minkowski_sign(D1)
        coef = ad.sum_((b - a).reshape(Bsz, L, D1, 1) * sign[:, None] * V, axis=2, keepdims=True)
        denom = ad.sum_(s * s * sign, axis=-1, keepdims=True).reshape(Bsz, L, 1, 1)
        return V - s.reshape(Bsz, L, D1, 1) * (2.0 * coef / denom)

    origin = Var(np.broadcast_to(o, (Bsz, L, D1)).copy())
    V = pt_cols(origin, prev, Var(np.broadcast_to(basis, (Bsz, L, D1, d)).copy()))
    V = pt_cols(prev, H, V)
    V = pt_cols(H, origin, V)
    return V[:, :, 1:, :]


def hyperbolic_distance(x: Var, y: Var, k: float, tol: Tolerance = DEFAULT_TOL) -> Var:
    """Broadcasting geodesic distance between hyperboloid points (last axis = coordinates).

    The arcosh argument ``1 + t`` uses ``t = (|dx_s|^2 - dx_0^2) / 2k`` where the
    time gap is rewritten as ``(|x_s|^2 - |y_s|^2) / (x_0 + y_0)``; ``t`` is clamped
    at ``eps_arcosh`` so the gradient stays finite at coincident points.
    """
    xs, ys = x[..., 1:], y[..., 1:]
    x0, y0 = x[..., :1], y[..., :1]
    xsq = ad.sum_(xs * xs, axis=-1, keepdims=True)
    ysq = ad.sum_(ys * ys, axis=-1, keepdims=True)
    dsq = _pairwise_sqdist(xs, ys)
    dt = (xsq - ysq) / (x0 + y0)
    t = (dsq - dt * dt) / (2.0 * k)
    if np.any(t.value < -ARCOSH_REJECT):
        raise DomainError("arcosh argument below 1: points off the manifold")
    return ad.acosh1p(ad.clamp(t, lo=tol.eps_arcosh)) * np.sqrt(k)


def _pairwise_sqdist(xs: Var, ys: Var) -> Var:
    diff = xs - ys
    return ad.sum_(diff * diff, axis=-1, keepdims=True)


def distance_to_table(x: Var, table: Var, k: float, tol: Tolerance = DEFAULT_TOL) -> Var:
    """Distances from points ``x (..., d + 1)`` to every row of ``table (V, d + 1)`` -> ``(..., V)``.

    Same stabilized argument as :func:`hyperbolic_distance`, with the spatial
    squared gap expanded so memory stays O(batch * V).
    """
    xs, ts = x[..., 1:], table[:, 1:]
    xsq = ad.sum_(xs * xs, axis=-1, keepdims=True)  # (..., 1)
    tsq = ad.sum_(ts * ts, axis=-1)  # (V,)
    cross = xs @ ad.transpose(ts)
    dsq = xsq + tsq - cross * 2.0
    dt = (xsq - tsq) / (x[..., :1] + table[:, 0])
    t = (dsq - dt * dt) / (2.0 * k)
    if np.any(t.value < -ARCOSH_REJECT):
        raise DomainError("arcosh argument below 1: points off the manifold")
    return ad.acosh1p(ad.clamp(t, lo=tol.eps_arcosh)) * np.sqrt(k)


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.mean(xc * xc, axis=-1, keepdims=True)
    return xc / ad.sqrt(var + eps) * gamma + beta


def causal_conv1d(x: Var, weight: Var, bias: Var | None = None) -> Var:
    """Depthwise causal convolution over axis -2; ``weight``: (w, C), last tap hits x[t]."""
    w = weight.shape[0]
    L = x.shape[-2]
    out = None
    for j in range(w):
        shift = w - 1 - j
        if shift >= L:
            continue
        if shift:
            pad = np.zeros(x.shape[:-2] + (shift, x.shape[-1]))
            xs = ad.concat([pad, x[..., : L - shift, :]], axis=-2)
        else:
            xs = x
        term = xs * weight[j]
        out = term if out is None else out + term
    return out if bias is None else out + bias


def dropout(x: Var, rate: float, rng: np.random.Generator | None) -> Var:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def selective_ssm(xs: Var, p: dict, k: float | None, mask: np.ndarray, M: Var | None = None,
                  backend: str | None = None) -> Var:
    """Selective scan over features ``xs (B, L, C)``.

    Per token: ``delta = softplus(xs . w_delta + b)``, ``B_t = xs W_B``,
    ``C_t = xs W_C``; ``A = -exp(A_log)`` scaled by ``K(k)`` when ``k`` is given;
    exact ZOH gives ``a_bar = exp(delta A)``, ``b_bar = expm1(delta A) / A * B_t``.
    Returns ``y_t = C_t h_t + D * xs_t``.
    """
    delta = ad.softplus(ad.sum_(xs * p["w_delta"], axis=-1) + p["delta_bias"])  # (B, L)
    Bt = xs @ p["W_B"]  # (B, L, N)
    Ct = xs @ p["W_C"]
    n_state = p["A_log"].shape[0]
    A = -ad.exp(p["A_log"])
    if k is not None:
        A = A * curvature_scale(n_state, k)
    dA = delta.reshape(delta.shape + (1,)) * A  # (B, L, N)
    a_bar = ad.exp(dA)
    b_bar = ad.expm1(dA) / A * Bt
    Bsz, L, C = xs.shape
    bx = b_bar.reshape(Bsz, L, 1, n_state) * (xs * mask[..., None]).reshape(Bsz, L, C, 1)
    h = ad.linear_scan(a_bar, bx, M, backend)
    y = ad.einsum("blcn,bln->blc", h, Ct)
    return y + xs * p["D"]


def mamba_mixer(u: Var, p: dict, k: float | None, mask: np.ndarray, M: Var | None,
                dropout_rate: float, rng, backend: str | None = None) -> Var:
    """Tangent-space Mamba block: norm -> in-proj -> conv -> SiLU -> selective scan -> gate -> out-proj."""
    C = p["conv_w"].shape[1]
    x = layer_norm(u, p["ln_gamma"], p["ln_beta"])
    xz = x @ p["W_in"]
    xs = xz[..., :C] * mask[..., None]
    z = xz[..., C:]
    xs = ad.silu(causal_conv1d(xs, p["conv_w"], p["conv_b"])) * mask[..., None]
    y = selective_ssm(xs, p, k, mask, M, backend)
    gated = dropout(y * ad.silu(z), dropout_rate, rng)
    return (gated @ p["W_out"]) * mask[..., None]


def hyperbolic_layer(H: Var, p: dict, k: float, mask: np.ndarray, dropout_rate: float = 0.0,
                     rng=None, backend: str | None = None) -> Var:
    """One hyperbolic encoder layer; input and output live on the hyperboloid."""
    # non-finite states are divergence, reported by the training loop through the loss
    if np.all(np.isfinite(H.value)):
        check_on_manifold(H.value, k)
    u = log_map_origin(H, k)
    M = transport_matrices(H, k)
    w = mamba_mixer(u, p, k, mask, M, dropout_rate, rng, backend)
    return gyro_residual(H, exp_map_origin(w, k), k)


def euclidean_layer(X: Var, p: dict, mask: np.ndarray, dropout_rate: float = 0.0, rng=None,
                    backend: str | None = None) -> Var:
    return X + mamba_mixer(X, p, None, mask, None, dropout_rate, rng, backend)
