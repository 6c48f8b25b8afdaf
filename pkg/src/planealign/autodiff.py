"""Small reverse-mode autodiff over float64 numpy arrays.

Only the operations the training losses need. Graphs are built per forward
pass; ``backward`` recomputes gradients from scratch each call, so leaf
variables (parameters) can be reused across steps without manual zeroing.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """Array node in the computation graph."""

    __slots__ = ("value", "grad", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    # Arithmetic sugar; every overload routes through the module ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return powc(self, k)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        parents=(
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / b.value**2, b.value.shape)),
        ),
    )


def powc(a, k: float) -> Var:
    a = as_var(a)
    return Var(a.value**k, parents=((a, lambda g: g * k * a.value ** (k - 1)),))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value @ b.value,
        parents=(
            (a, lambda g: g @ b.value.T),
            (b, lambda g: a.value.T @ g),
        ),
    )


def transpose(a) -> Var:
    a = as_var(a)
    return Var(a.value.T, parents=((a, lambda g: g.T),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape), parents=((a, lambda g: g.reshape(a.value.shape)),))


def vsum(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return Var(a.value.sum(axis=axis, keepdims=keepdims), parents=((a, vjp),))


def vmean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def rowmax(a) -> Var:
    """Max over axis 1 of a 2D array; gradient flows to the first argmax."""
    a = as_var(a)
    idx = np.argmax(a.value, axis=1)

    def vjp(g):
        z = np.zeros_like(a.value)
        z[np.arange(a.value.shape[0]), idx] = g
        return z

    return Var(a.value[np.arange(a.value.shape[0]), idx], parents=((a, vjp),))


def exp(a) -> Var:
    a = as_var(a)
    out_val = np.exp(a.value)
    return Var(out_val, parents=((a, lambda g: g * out_val),))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), parents=((a, lambda g: g / a.value),))


def tanh(a) -> Var:
    a = as_var(a)
    out_val = np.tanh(a.value)
    return Var(out_val, parents=((a, lambda g: g * (1.0 - out_val**2)),))


def sqrt(a) -> Var:
    a = as_var(a)
    out_val = np.sqrt(a.value)
    return Var(out_val, parents=((a, lambda g: g * 0.5 / out_val),))


def vabs(a) -> Var:
    a = as_var(a)
    return Var(np.abs(a.value), parents=((a, lambda g: g * np.sign(a.value)),))


def where(cond: np.ndarray, a, b) -> Var:
    """Elementwise select with a constant (non-differentiated) condition."""
    a, b = as_var(a), as_var(b)
    cond = np.asarray(cond, dtype=bool)
    return Var(
        np.where(cond, a.value, b.value),
        parents=(
            (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.value.shape)),
            (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.value.shape)),
        ),
    )


def maximum_c(a, floor: float) -> Var:
    """Clamp from below by a constant; gradient passes where a >= floor."""
    a = as_var(a)
    mask = a.value >= floor
    return Var(np.maximum(a.value, floor), parents=((a, lambda g: g * mask),))


def gather_rows(a, idx) -> Var:
    """Select rows (axis 0) by integer index, with scatter-add as the vjp."""
    a = as_var(a)
    idx = np.asarray(idx)

    def vjp(g):
        z = np.zeros_like(a.value)
        np.add.at(z, idx, g)
        return z

    return Var(a.value[idx], parents=((a, vjp),))


def concat(vars_, axis=0) -> Var:
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.value.shape[axis] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * vars_[i].value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return Var(
        np.concatenate([v.value for v in vars_], axis=axis),
        parents=tuple((v, make_vjp(i)) for i, v in enumerate(vars_)),
    )


def detach(a) -> Var:
    """Treat the current value as a constant (stop-gradient)."""
    a = as_var(a)
    return Var(a.value.copy())


def softmax_rows(z, tau: float = 1.0) -> Var:
    """Row softmax of z/tau; the max-shift constant keeps it exact and stable."""
    z = as_var(z)
    scaled = z * (1.0 / tau)
    shift = Var(scaled.value.max(axis=1, keepdims=True))
    e = exp(scaled - shift)
    return e / vsum(e, axis=1, keepdims=True)


def log_softmax_rows(z, tau: float = 1.0) -> Var:
    z = as_var(z)
    scaled = z * (1.0 / tau)
    shift = Var(scaled.value.max(axis=1, keepdims=True))
    lse = log(vsum(exp(scaled - shift), axis=1, keepdims=True)) + shift
    return scaled - lse


def l2norm_rows(x, floor: float = 0.0) -> Var:
    """Rows scaled to unit length; optional norm floor guards zero rows."""
    x = as_var(x)
    n = sqrt(vsum(x * x, axis=1, keepdims=True))
    if floor > 0.0:
        n = maximum_c(n, floor)
    return x / n


def backward(out: Var) -> None:
    """Populate .grad for every node reachable from ``out``.

    Existing grads in the touched subgraph are discarded first, so leaves
    shared across steps need no manual zeroing.
    """
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in topo:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            g = vjp(node.grad)
            parent.grad = g if parent.grad is None else parent.grad + g
