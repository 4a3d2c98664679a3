"""A small reverse-mode differentiation engine over NumPy arrays.

Every :class:`Var` holds a float64 array and, when it depends on a variable
that requires gradients, the vector-Jacobian products linking it to its
parents. :func:`backward` walks the graph in reverse topological order.

Example:
    >>> x = Var(3.0, requires_grad=True)
    >>> backward(x * x)
    >>> float(x.grad)
    6.0
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from . import _scan
from .errors import DomainError, NonDifferentiableError, ShapeError

_GRAD_ENABLED = True
# Multiplicative corruption of elementwise derivative rules (fault-injection hook).
_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation and benchmarking)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def corrupt_rule(name: str, factor: float = 1.5):
    """Scale the derivative rule of elementwise primitive ``name`` (test hook)."""
    if name not in UNARY:
        raise KeyError(f"unknown primitive {name!r}")
    _FAULTS[name] = factor
    try:
        yield
    finally:
        _FAULTS.pop(name, None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Var:
    """Graph node: a value, its adjoint, and backward links to its inputs."""

    __array_priority__ = 1000
    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple = ()
        self.name = name

    # -- construction -----------------------------------------------------
    @staticmethod
    def _result(value, op: str, links: Iterable[tuple["Var", Callable]]) -> "Var":
        out = Var(value)
        out.op = op
        if _GRAD_ENABLED:
            links = tuple((p, fn) for p, fn in links if p.requires_grad)
            if links:
                out.requires_grad = True
                out._parents = links
        return out

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.value

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- reductions / shape ----------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# -- binary primitives ------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var._result(
        a.value + b.value,
        "add",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def neg(a) -> Var:
    a = as_var(a)
    return Var._result(-a.value, "neg", [(a, lambda g: -g)])


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var._result(
        a.value * b.value,
        "mul",
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return Var._result(
        out,
        "div",
        [
            (a, lambda g: _unbroadcast(g / b.value, a.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.value, b.shape)),
        ],
    )


def power(a, p: float) -> Var:
    a = as_var(a)
    p = float(p)
    return Var._result(a.value**p, "pow", [(a, lambda g: g * p * a.value ** (p - 1.0))])


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions; reshape vectors first")

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)

    return Var._result(a.value @ b.value, "matmul", [(a, ga), (b, gb)])


def einsum(subscripts: str, a, b) -> Var:
    """Two-operand einsum without repeated indices inside an operand."""
    a, b = as_var(a), as_var(b)
    inputs, out = subscripts.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb):
        raise ShapeError("repeated indices within an operand are not supported")
    sizes = dict(zip(sa, a.shape)) | dict(zip(sb, b.shape))

    def grad_for(target: str, other: str, other_val: np.ndarray):
        kept = "".join(ch for ch in target if ch in out or ch in other)

        def fn(g):
            r = np.einsum(f"{out},{other}->{kept}", g, other_val)
            if kept != target:
                r = np.expand_dims(r, [i for i, ch in enumerate(target) if ch not in kept])
                r = np.broadcast_to(r, tuple(sizes[ch] for ch in target)).copy()
            return r

        return fn

    return Var._result(
        np.einsum(subscripts, a.value, b.value),
        "einsum",
        [(a, grad_for(sa, sb, b.value)), (b, grad_for(sb, sa, a.value))],
    )


# -- elementwise unary primitives ---------------------------------------------


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _d_arcosh(x, y):
    if np.any(x <= 1.0):
        raise NonDifferentiableError("arcosh is not differentiable at or below 1")
    return 1.0 / np.sqrt((x - 1.0) * (x + 1.0))


def _d_acosh1p(t, y):
    if np.any(t <= 0.0):
        raise NonDifferentiableError("arcosh(1 + t) is not differentiable at t <= 0")
    return 1.0 / np.sqrt(t * (t + 2.0))


def _d_sqrt(x, y):
    if np.any(y <= 0.0):
        raise NonDifferentiableError("sqrt is not differentiable at 0")
    return 0.5 / y


def _fwd_arcosh(x):
    if np.any(x < 1.0):
        raise DomainError("arcosh argument below 1")
    return np.arccosh(x)


def _fwd_acosh1p(t):
    if np.any(t < 0.0):
        raise DomainError("arcosh(1 + t) needs t >= 0")
    return np.log1p(t + np.sqrt(t * (t + 2.0)))


def _silu(x):
    return x * _sigmoid(x)


def _d_silu(x, y):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


# name -> (forward, derivative(x, y))
UNARY: dict[str, tuple[Callable, Callable]] = {
    "exp": (np.exp, lambda x, y: y),
    "expm1": (np.expm1, lambda x, y: y + 1.0),
    "log": (np.log, lambda x, y: 1.0 / x),
    "sqrt": (np.sqrt, _d_sqrt),
    "cosh": (np.cosh, lambda x, y: np.sinh(x)),
    "sinh": (np.sinh, lambda x, y: np.cosh(x)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "arcosh": (_fwd_arcosh, _d_arcosh),
    "acosh1p": (_fwd_acosh1p, _d_acosh1p),
    "asinh": (np.arcsinh, lambda x, y: 1.0 / np.sqrt(x * x + 1.0)),
    "softplus": (lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x)),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "silu": (_silu, _d_silu),
    "log_sigmoid": (lambda x: -np.logaddexp(0.0, -x), lambda x, y: _sigmoid(-x)),
}


def unary(name: str, a) -> Var:
    a = as_var(a)
    fwd, deriv = UNARY[name]
    y = fwd(a.value)

    def vjp(g):
        d = deriv(a.value, y)
        factor = _FAULTS.get(name)
        if factor is not None:
            d = d * factor
        return g * d

    return Var._result(y, name, [(a, vjp)])


def exp(a):
    return unary("exp", a)


def expm1(a):
    return unary("expm1", a)


def log(a):
    return unary("log", a)


def sqrt(a):
    return unary("sqrt", a)


def cosh(a):
    return unary("cosh", a)


def sinh(a):
    return unary("sinh", a)


def tanh(a):
    return unary("tanh", a)


def arcosh(a):
    return unary("arcosh", a)


def acosh1p(a):
    """``arcosh(1 + a)`` evaluated without forming ``1 + a``."""
    return unary("acosh1p", a)


def asinh(a):
    return unary("asinh", a)


def softplus(a):
    return unary("softplus", a)


def sigmoid(a):
    return unary("sigmoid", a)


def silu(a):
    return unary("silu", a)


def log_sigmoid(a):
    return unary("log_sigmoid", a)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Var:
    """Clip to ``[lo, hi]``; the gradient passes through inside the window and is zero outside."""
    a = as_var(a)
    x = a.value
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return Var._result(np.clip(x, lo, hi), "clamp", [(a, lambda g: np.where(inside, g, 0.0))])


# -- reductions and structural ops ------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return Var._result(np.sum(a.value, axis=axis, keepdims=keepdims), "sum", [(a, vjp)])


def mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var._result(a.value.reshape(shape), "reshape", [(a, lambda g: g.reshape(a.shape))])


def transpose(a, axes=None) -> Var:
    a = as_var(a)
    inv = None if axes is None else np.argsort(axes)
    return Var._result(np.transpose(a.value, axes), "transpose", [(a, lambda g: np.transpose(g, inv))])


def getitem(a, idx) -> Var:
    """Indexing / gather; the backward scatters with accumulation over repeated indices."""
    a = as_var(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return Var._result(a.value[idx], "gather", [(a, vjp)])


def take_rows(table, ids) -> Var:
    """``table[ids]`` for an integer id array of any shape (embedding lookup)."""
    return getitem(table, np.asarray(ids))


def concat(items, axis: int = -1) -> Var:
    items = [as_var(x) for x in items]
    sizes = [x.shape[axis] for x in items]
    bounds = np.cumsum([0] + sizes)

    def make(i):
        sl = [slice(None)] * items[i].ndim
        sl[axis] = slice(bounds[i], bounds[i + 1])
        return lambda g: g[tuple(sl)]

    value = np.concatenate([x.value for x in items], axis=axis)
    return Var._result(value, "concat", [(x, make(i)) for i, x in enumerate(items)])


def where(cond, a, b) -> Var:
    a, b = as_var(a), as_var(b)
    cond = np.asarray(cond, dtype=bool)
    return Var._result(
        np.where(cond, a.value, b.value),
        "where",
        [
            (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.shape)),
            (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.shape)),
        ],
    )


def logsumexp(a, axis=-1, keepdims=False) -> Var:
    a = as_var(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    s = np.log(np.sum(np.exp(a.value - m), axis=axis, keepdims=True)) + m
    soft = np.exp(a.value - s)
    out = s if keepdims else np.squeeze(s, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * soft

    return Var._result(out, "logsumexp", [(a, vjp)])


def linear_scan(a, bx, M=None, backend: str | None = None) -> Var:
    """Differentiable wrapper over :func:`hmamba._scan.scan_forward`."""
    a, bx = as_var(a), as_var(bx)
    Mv = None if M is None else as_var(M)
    h = _scan.scan_forward(a.value, bx.value, None if Mv is None else Mv.value, backend)
    cache = {}

    def grads(g):
        if "r" not in cache:
            cache["r"] = _scan.scan_backward(a.value, None if Mv is None else Mv.value, h, g, backend)
        return cache["r"]

    links = [(a, lambda g: grads(g)[0]), (bx, lambda g: grads(g)[1])]
    if Mv is not None:
        links.append((Mv, lambda g: grads(g)[2]))
    return Var._result(h, "scan", links)


# -- backward pass ----------------------------------------------------------


def _topological(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Var, params: dict[str, Var] | None = None) -> dict[str, np.ndarray] | None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Returns a name -> gradient map when ``params`` is given (zeros for
    parameters the loss does not depend on).
    """
    if loss.value.size != 1:
        raise ShapeError("backward needs a scalar loss")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node._parents:
            contrib = vjp(g)
            key = id(parent)
            grads[key] = contrib if key not in grads else grads[key] + contrib
    if params is None:
        return None
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.value)) for name, p in params.items()
    }


def finite_difference_grad(
    f: Callable[[dict[str, np.ndarray]], float], theta: dict[str, np.ndarray], h: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central differences ``(f(theta + h e) - f(theta - h e)) / 2h`` per coordinate."""
    work = {name: np.array(v, dtype=np.float64) for name, v in theta.items()}
    out = {}
    for name, arr in work.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(work)
            flat[i] = orig - h
            fm = f(work)
            flat[i] = orig
            grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        out[name] = grad
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``.

    With the default floor, a relative bound of 1e-4 becomes an absolute bound of
    1e-7 for entries whose magnitude is below 1e-3.
    """
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric))
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return diff / scale
