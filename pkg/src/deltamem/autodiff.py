"""Reverse-mode autodiff over numpy arrays.

A `Var` wraps an ndarray and records the op that produced it; `backward`
replays the graph once in reverse topological order.  The op set is exactly
what the training harness needs: matmul, elementwise arithmetic, softmax,
masked fills, unit-lower triangular solves, embedding gathers, rotary pairs,
reductions, and a cross-entropy head.  Gradients of the triangular solve use
the transposed solve (implicit-function rule), not differentiation of any
iterative inverse.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

__all__ = ["Var", "backward", "grad_check"]


class Var:
    """Node in the autodiff graph: an array value plus gradient plumbing."""

    __slots__ = ("value", "grad", "parents", "_pull", "track")

    def __init__(self, value, parents=(), pull=None, track=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(p for p in parents if p.track)
        self._pull = pull
        self.track = any(p.track for p in parents) if track is None else track

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64), track=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(var: Var, g: np.ndarray):
    g = _unbroadcast(np.asarray(g), var.value.shape)
    var.grad = g if var.grad is None else var.grad + g


def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    out = Var(a.value + b.value, (a, b))

    def pull(g):
        if a.track:
            _accumulate(a, g)
        if b.track:
            _accumulate(b, g)

    out._pull = pull
    return out


def mul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    out = Var(a.value * b.value, (a, b))

    def pull(g):
        if a.track:
            _accumulate(a, g * b.value)
        if b.track:
            _accumulate(b, g * a.value)

    out._pull = pull
    return out


def div(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    out = Var(a.value / b.value, (a, b))

    def pull(g):
        if a.track:
            _accumulate(a, g / b.value)
        if b.track:
            _accumulate(b, -g * a.value / (b.value * b.value))

    out._pull = pull
    return out


def scale(a, c: float) -> Var:
    a = _wrap(a)
    out = Var(a.value * c, (a,))
    out._pull = lambda g: _accumulate(a, g * c)
    return out


def matmul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    out = Var(a.value @ b.value, (a, b))

    def pull(g):
        if a.track:
            _accumulate(a, g @ np.swapaxes(b.value, -1, -2))
        if b.track:
            _accumulate(b, np.swapaxes(a.value, -1, -2) @ g)

    out._pull = pull
    return out


def exp(a) -> Var:
    a = _wrap(a)
    out = Var(np.exp(a.value), (a,))
    out._pull = lambda g: _accumulate(a, g * out.value)
    return out


def log(a) -> Var:
    a = _wrap(a)
    out = Var(np.log(a.value), (a,))
    out._pull = lambda g: _accumulate(a, g / a.value)
    return out


def sqrt(a) -> Var:
    a = _wrap(a)
    out = Var(np.sqrt(a.value), (a,))
    out._pull = lambda g: _accumulate(a, g * 0.5 / out.value)
    return out


def relu(a) -> Var:
    a = _wrap(a)
    out = Var(np.maximum(a.value, 0.0), (a,))
    out._pull = lambda g: _accumulate(a, g * (a.value > 0.0))
    return out


def round_ste(a, decimals: int = 0) -> Var:
    """Round in the forward pass, identity in the backward pass."""
    a = _wrap(a)
    out = Var(np.round(a.value, decimals), (a,))
    out._pull = lambda g: _accumulate(a, g)
    return out


def masked_fill(a, mask: np.ndarray, value: float) -> Var:
    """Replace entries where mask is True by a constant."""
    a = _wrap(a)
    mask = np.asarray(mask, dtype=bool)
    out = Var(np.where(mask, value, a.value), (a,))
    out._pull = lambda g: _accumulate(a, np.where(mask, 0.0, g))
    return out


def masked_softmax(a, mask: np.ndarray) -> Var:
    """Softmax over the last axis restricted to mask; empty rows give zeros."""
    a = _wrap(a)
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, a.value, -np.inf)
    mx = np.max(neg, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(neg - mx), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    y = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
    out = Var(y, (a,))

    def pull(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    out._pull = pull
    return out


def transpose(a, axes) -> Var:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Var(np.transpose(a.value, axes), (a,))
    out._pull = lambda g: _accumulate(a, np.transpose(g, inv))
    return out


def reshape(a, shape) -> Var:
    a = _wrap(a)
    out = Var(a.value.reshape(shape), (a,))
    out._pull = lambda g: _accumulate(a, g.reshape(a.value.shape))
    return out


def repeat(a, reps: int, axis: int) -> Var:
    """Tile along an axis (used to expand kv heads to query heads)."""
    a = _wrap(a)
    out = Var(np.repeat(a.value, reps, axis=axis), (a,))

    def pull(g):
        shape = list(a.value.shape)
        shape[axis:axis + 1] = [shape[axis], reps]
        _accumulate(a, g.reshape(shape).sum(axis=axis + 1))

    out._pull = pull
    return out


def mean_axis(a, axis: int, keepdims: bool = False) -> Var:
    a = _wrap(a)
    out = Var(a.value.mean(axis=axis, keepdims=keepdims), (a,))
    n = a.value.shape[axis]

    def pull(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / n, a.value.shape))

    out._pull = pull
    return out


def sum_all(a) -> Var:
    a = _wrap(a)
    out = Var(np.asarray(a.value.sum()), (a,))
    out._pull = lambda g: _accumulate(a, np.broadcast_to(g, a.value.shape))
    return out


def gather_rows(table, ids: np.ndarray) -> Var:
    """Embedding lookup: rows of `table` selected by integer ids."""
    table = _wrap(table)
    ids = np.asarray(ids)
    out = Var(table.value[ids], (table,))

    def pull(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    out._pull = pull
    return out


def tri_solve(a, rhs) -> Var:
    """Batched solve of (I + A) X = R with A strictly lower triangular.

    a: (..., C, C) with zero diagonal and upper triangle; rhs: (..., C, D).
    Backward uses the transposed unit-upper solve on the incoming gradient.
    """
    a, rhs = _wrap(a), _wrap(rhs)
    av, rv = a.value, rhs.value
    c = av.shape[-1]
    x = np.empty_like(rv)
    lead = av.shape[:-2]
    for idx in np.ndindex(*lead):
        x[idx] = solve_triangular(av[idx], rv[idx], lower=True, unit_diagonal=True)
    out = Var(x, (a, rhs))
    strict_lower = np.tril(np.ones((c, c), dtype=bool), k=-1)

    def pull(g):
        rbar = np.empty_like(g)
        for idx in np.ndindex(*lead):
            rbar[idx] = solve_triangular(
                np.swapaxes(av[idx], -1, -2), g[idx], lower=False, unit_diagonal=True
            )
        if rhs.track:
            _accumulate(rhs, rbar)
        if a.track:
            abar = -(rbar @ np.swapaxes(x, -1, -2)) * strict_lower
            _accumulate(a, abar)

    out._pull = pull
    return out


def rope_rotate(a, cos: np.ndarray, sin: np.ndarray) -> Var:
    """Rotary position rotation on channel pairs of the last axis.

    a: (..., T, D); cos/sin: (T, D//2).  Backward rotates gradients by the
    inverse angle.  An odd trailing channel (D odd) is left unrotated.
    """
    a = _wrap(a)
    d = a.value.shape[-1]
    r = d // 2

    def rot(x, co, si):
        even, odd = x[..., : 2 * r : 2], x[..., 1 : 2 * r : 2]
        y = x.copy()
        y[..., : 2 * r : 2] = even * co - odd * si
        y[..., 1 : 2 * r : 2] = even * si + odd * co
        return y

    out = Var(rot(a.value, cos, sin), (a,))
    out._pull = lambda g: _accumulate(a, rot(g, cos, -sin))
    return out


def cross_entropy_logits(logits, labels: np.ndarray) -> Var:
    """Mean cross-entropy of (N, V) logits against integer labels (N,)."""
    logits = _wrap(logits)
    lv = logits.value
    labels = np.asarray(labels)
    n = lv.shape[0]
    mx = lv.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(lv - mx).sum(axis=1))
    picked = lv[np.arange(n), labels]
    out = Var(np.asarray((lse - picked).mean()), (logits,))

    def pull(g):
        p = np.exp(lv - mx)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, g * p / n)

    out._pull = pull
    return out


def backward(root: Var):
    """Accumulate gradients of a scalar root into every tracked parent."""
    if root.value.size != 1:
        raise ValueError(f"backward expects a scalar root, got shape {root.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._pull is not None and node.grad is not None:
            node._pull(node.grad)


def grad_check(f, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f maps a Var holding x to a scalar Var.  Returns
    max |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12) over all entries of x.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    x = np.asarray(x, dtype=np.float64)
    leaf = Var(x.copy(), track=True)
    out = f(leaf)
    if out.value.size != 1:
        raise ValueError("grad_check target must return a scalar")
    backward(out)
    g_ad = np.zeros_like(x) if leaf.grad is None else np.asarray(leaf.grad, dtype=np.float64)

    g_fd = np.zeros_like(x)
    flat = x.copy().ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f(Var(flat.reshape(x.shape).copy(), track=False)).value)
        flat[i] = orig - eps
        dn = float(f(Var(flat.reshape(x.shape).copy(), track=False)).value)
        flat[i] = orig
        g_fd.ravel()[i] = (up - dn) / (2.0 * eps)

    denom = np.abs(g_ad) + np.abs(g_fd) + 1e-12
    return float(np.max(np.abs(g_ad - g_fd) / denom))
