"""Dense-matrix reverse-mode autodiff, Adam, and finite-difference gradient checks.

Every quantity is a 2-D numpy array wrapped in a :class:`Value`. Each op
creates a new node holding its parents and a closure that maps the output
gradient to parent gradients. Node ids come from a global counter, so
sorting reachable nodes by descending id is a valid reverse-topological
order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

DEFAULT_DTYPE = np.float64
LEAKY_SLOPE = 0.01
# Additive mask for entries excluded from a softmax; exp() of it underflows to 0.
MASK_VALUE = -1e30

_ids = itertools.count()


class Value:
    """A node on the differentiation tape."""

    __slots__ = ("id", "value", "op", "parents", "grad", "requires_grad", "_backward", "name")

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), backward=None, name=None):
        arr = np.asarray(value)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"{op}: values must be 2-D matrices, got shape {arr.shape}")
        if op != "leaf" and not np.all(np.isfinite(arr)):
            raise NumericalError(f"{op}: produced non-finite entries")
        self.id = next(_ids)
        self.value = arr
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self._backward = backward
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value#{self.id}{label}(op={self.op}, shape={self.shape})"


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name=None) -> Value:
    return Value(np.array(data, copy=True), requires_grad=True, name=name)


def _node(op, data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Value(data, requires_grad=needs, op=op, parents=parents, backward=backward if needs else None)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_shape(op, a, b):
    out = []
    for x, y in zip(a.shape, b.shape):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return tuple(out)


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _node("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c: float) -> Value:
    a = as_value(a)
    return _node("scale", a.value * c, (a,), lambda g: (g * c,))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Value:
    a = as_value(a)
    d = np.where(a.value > 0, 1.0, slope).astype(a.value.dtype)
    return _node("leaky_relu", a.value * d, (a,), lambda g: (g * d,))


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Value:
    """Inverted dropout; the identity outside training mode."""
    a = as_value(a)
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.shape) >= rate).astype(a.value.dtype) / (1.0 - rate)
    return _node("dropout", a.value * mask, (a,), lambda g: (g * mask,))


# -- structural ------------------------------------------------------------


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _node("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def matvec(m, v) -> Value:
    m, v = as_value(m), as_value(v)
    if v.shape[1] != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: need (m, n) and (n, 1), got {m.shape} and {v.shape}")
    mv, vv = m.value, v.value
    return _node("matvec", mv @ vv, (m, v), lambda g: (g @ vv.T, mv.T @ g))


def transpose(a) -> Value:
    a = as_value(a)
    return _node("transpose", a.value.T, (a,), lambda g: (g.T,))


def hconcat(parts: Sequence) -> Value:
    parts = [as_value(p) for p in parts]
    if not parts:
        raise ContractError("hconcat: nothing to concatenate")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"hconcat: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _node("hconcat", np.hstack([p.value for p in parts]), tuple(parts),
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def row_sum(a) -> Value:
    a = as_value(a)
    cols = a.shape[1]
    return _node("row_sum", a.value.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.repeat(g, cols, axis=1),))


# -- normalizations --------------------------------------------------------


def row_softmax(a) -> Value:
    a = as_value(a)
    if a.shape[1] == 0:
        raise ContractError("row_softmax: empty axis")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _node("row_softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def col_softmax(a) -> Value:
    """Softmax down each column; for an n x 1 input this is a vector softmax."""
    a = as_value(a)
    if a.shape[0] == 0:
        raise ContractError("col_softmax: empty axis")
    z = a.value - a.value.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)
    return _node("col_softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=0, keepdims=True)),))


def l2_normalize_rows(a) -> Value:
    a = as_value(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    y = np.where(norms > 0, a.value / safe, 0.0)

    def back(g):
        gx = (g - y * (g * y).sum(axis=1, keepdims=True)) / safe
        return (np.where(norms > 0, gx, 0.0),)

    return _node("l2_normalize_rows", y, (a,), back)


def sym_norm_adj(a) -> Value:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.

    Differentiable in A, which matters once A itself comes out of pooling.
    """
    a = as_value(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"sym_norm_adj: adjacency must be square, got {a.shape}")
    if np.any(a.value < 0):
        raise ContractError("sym_norm_adj: adjacency has negative entries")
    at = a.value + np.eye(n, dtype=a.value.dtype)
    d = 1.0 / np.sqrt(at.sum(axis=1))
    y = d[:, None] * at * d[None, :]

    def back(g):
        gd = (g * at * d[None, :]).sum(axis=1) + (g * at * d[:, None]).sum(axis=0)
        gdeg = gd * (-0.5) * d ** 3
        return (g * d[:, None] * d[None, :] + gdeg[:, None],)

    return _node("sym_norm_adj", y, (a,), back)


# -- loss ------------------------------------------------------------------


def softmax_cross_entropy(logits, targets) -> Value:
    """Mean cross-entropy of row-wise softmax(logits) against integer targets."""
    logits = as_value(logits)
    targets = np.asarray(targets, dtype=int).reshape(-1)
    b, c = logits.shape
    if targets.shape[0] != b:
        raise DimensionError(f"softmax_cross_entropy: {b} rows but {targets.shape[0]} targets")
    if np.any(targets < 0) or np.any(targets >= c):
        raise ContractError(f"softmax_cross_entropy: targets outside [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(b), targets].mean()
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), targets] = 1.0
    return _node("softmax_cross_entropy", np.array([[loss]], dtype=logits.value.dtype), (logits,),
                 lambda g: (g[0, 0] * (probs - onehot) / b,))


# -- backward --------------------------------------------------------------


def backward(loss: Value) -> dict[Value, np.ndarray]:
    """Reverse sweep from a 1x1 loss; returns gradients of every leaf that requires one.

    Gradients are recomputed from scratch on each call, so running it twice on
    the same tape gives identical results.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward: loss must be 1x1, got {loss.shape}")
    seen = {loss.id: loss}
    stack = [loss]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda v: v.id, reverse=True)
    grads = {loss.id: np.ones((1, 1), dtype=loss.value.dtype)}
    for node in order:
        g = grads.get(node.id)
        if g is None or node._backward is None:
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if p.id in grads:
                grads[p.id] = grads[p.id] + pg
            else:
                grads[p.id] = pg
    leaves = {}
    for node in order:
        node.grad = grads.get(node.id, np.zeros_like(node.value))
        if node.op == "leaf":
            leaves[node] = node.grad
    return leaves


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Value], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, mutating ``params[name].value`` in place.

    Parameters without an entry in ``grads`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"adam_step: gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"adam_step: {name} has shape {params[name].shape}, gradient {g.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        elif m.shape != p.shape:
            raise DimensionError(f"adam_step: state for {name} has shape {m.shape}, parameter {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.value -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.value.dtype)
    return state


# -- gradient check --------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def grad_check(closure: Callable[[], Value], params: Mapping[str, Value], tolerance: float,
               h: float = 1e-5, atol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients with central differences, parameter by parameter.

    The entrywise error is ``|a - n| / max(|a|, |n|, atol)``; ``atol`` keeps
    entries whose true gradient is ~0 from dominating through roundoff.
    """
    loss = closure()
    again = closure()
    if not np.array_equal(loss.value, again.value):
        raise ContractError("grad_check: closure is not deterministic")
    grads = backward(loss)
    errors = {}
    for name, p in params.items():
        analytic = grads.get(p, np.zeros_like(p.value))
        numeric = np.zeros_like(p.value)
        for idx in np.ndindex(p.shape):
            old = p.value[idx]
            p.value[idx] = old + h
            up = closure().value[0, 0]
            p.value[idx] = old - h
            down = closure().value[0, 0]
            p.value[idx] = old
            numeric[idx] = (up - down) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
        errors[name] = float(np.max(np.abs(analytic - numeric) / denom)) if p.value.size else 0.0
    return GradCheckReport(errors, tolerance)


def total(values: Iterable[Value]) -> Value:
    """Sum of 1x1 values."""
    it = iter(values)
    acc = next(it)
    for v in it:
        acc = add(acc, v)
    return acc


def glorot(rng: np.random.Generator, rows: int, cols: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    s = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols)).astype(dtype)
