"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a ``Var`` that records its parents and a closure
propagating the output adjoint to them; ``backward`` replays the records in
reverse creation order, which is a valid topological order by construction.
Min/max reductions remember the first attaining index and route the full
gradient there, so ties break deterministically.  All arithmetic is float64.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_uid = itertools.count()


class Var:
    """A node in the differentiation graph."""

    __slots__ = ("value", "parents", "grad_fn", "uid", "grad")

    def __init__(self, value, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.grad_fn = grad_fn
        self.uid = next(_uid)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

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


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g, acc):
        acc(a, _unbroadcast(g, a.value.shape))
        acc(b, _unbroadcast(g, b.value.shape))

    return Var(a.value + b.value, (a, b), push)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g, acc):
        acc(a, _unbroadcast(g, a.value.shape))
        acc(b, _unbroadcast(-g, b.value.shape))

    return Var(a.value - b.value, (a, b), push)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g, acc):
        acc(a, _unbroadcast(g * b.value, a.value.shape))
        acc(b, _unbroadcast(g * a.value, b.value.shape))

    return Var(a.value * b.value, (a, b), push)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def push(g, acc):
        acc(a, _unbroadcast(g / b.value, a.value.shape))
        acc(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return Var(a.value / b.value, (a, b), push)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim == 1 and b.value.ndim == 1:
        raise ValueError("use dot for 1-d/1-d products")

    def push(g, acc):
        ga = g @ b.value.T if b.value.ndim > 1 else np.outer(g, b.value)
        gb = a.value.T @ g if a.value.ndim > 1 else np.outer(a.value, g)
        acc(a, ga.reshape(a.value.shape))
        acc(b, gb.reshape(b.value.shape))

    return Var(a.value @ b.value, (a, b), push)


def relu(a) -> Var:
    a = as_var(a)
    mask = (a.value > 0).astype(np.float64)
    return Var(a.value * mask, (a,), lambda g, acc: acc(a, g * mask))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = np.empty_like(a.value)
    pos = a.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ea = np.exp(a.value[~pos])
    out[~pos] = ea / (1.0 + ea)
    return Var(out, (a,), lambda g, acc: acc(a, g * out * (1.0 - out)))


def logsigmoid(a) -> Var:
    """log(sigmoid(a)), computed stably as -log1p(exp(-a))."""
    a = as_var(a)
    out = -np.logaddexp(0.0, -a.value)

    def push(g, acc):
        acc(a, g * _sigmoid_array(-a.value))

    return Var(out, (a,), push)


def _sigmoid_array(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log(a) -> Var:
    a = as_var(a)
    if np.any(a.value <= 0.0):
        raise ValueError("log of non-positive value")
    return Var(np.log(a.value), (a,), lambda g, acc: acc(a, g / a.value))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g, acc: acc(a, g * out))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g, acc: acc(a, g * 0.5 / out))


def clamp(a, lo=None, hi=None) -> Var:
    """Clip to [lo, hi]; the gradient passes through strictly inside the range."""
    a = as_var(a)
    out = np.clip(a.value, lo, hi)
    inside = np.ones_like(a.value)
    if lo is not None:
        inside = inside * (a.value >= lo)
    if hi is not None:
        inside = inside * (a.value <= hi)
    return Var(out, (a,), lambda g, acc: acc(a, g * inside))


def vsum(a, axis=None) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis)

    def push(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            acc(a, np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy())

    return Var(out, (a,), push)


def vmean(a, axis=None) -> Var:
    a = as_var(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / count)


def _reduce_extreme(a, axis, argfn, extrfn):
    a = as_var(a)
    out = extrfn(a.value, axis=axis)
    if axis is None:
        flat_index = argfn(a.value)
        hot = np.zeros(a.value.size)
        hot[flat_index] = 1.0
        hot = hot.reshape(a.value.shape)

        def push(g, acc):
            acc(a, g * hot)

    else:
        indices = argfn(a.value, axis=axis)
        hot = np.zeros_like(a.value)
        np.put_along_axis(hot, np.expand_dims(indices, axis), 1.0, axis=axis)

        def push(g, acc):
            acc(a, np.expand_dims(g, axis) * hot)

    return Var(out, (a,), push)


def vmax(a, axis=None) -> Var:
    """Max reduction; the gradient flows to the first attaining index."""
    return _reduce_extreme(a, axis, np.argmax, np.max)


def vmin(a, axis=None) -> Var:
    """Min reduction; the gradient flows to the first attaining index."""
    return _reduce_extreme(a, axis, np.argmin, np.min)


def stack(items: Sequence, axis=0) -> Var:
    items = [as_var(x) for x in items]
    out = np.stack([x.value for x in items], axis=axis)

    def push(g, acc):
        pieces = np.split(g, len(items), axis=axis)
        for x, piece in zip(items, pieces):
            acc(x, piece.reshape(x.value.shape))

    return Var(out, tuple(items), push)


def logsumexp(a, axis=None) -> Var:
    a = as_var(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (m + np.log(total)).squeeze() if axis is None else np.squeeze(m + np.log(total), axis=axis)
    soft = shifted / total

    def push(g, acc):
        if axis is None:
            acc(a, g * soft)
        else:
            acc(a, np.expand_dims(g, axis) * soft)

    return Var(out, (a,), push)


def backward(output: Var) -> None:
    """Populate ``.grad`` on every Var reachable from a scalar ``output``."""
    if output.value.shape != ():
        raise ValueError("backward requires a scalar output")
    nodes = {}
    stack_ = [output]
    while stack_:
        node = stack_.pop()
        if node.uid in nodes:
            continue
        nodes[node.uid] = node
        stack_.extend(node.parents)
    adjoint = {output.uid: np.ones(())}

    def accumulate(node, g):
        prev = adjoint.get(node.uid)
        adjoint[node.uid] = g if prev is None else prev + g

    for node in sorted(nodes.values(), key=lambda n: n.uid, reverse=True):
        g = adjoint.get(node.uid)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node.grad_fn is not None:
            node.grad_fn(g, accumulate)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "identity": lambda v: v}


class Mlp:
    """Dense network with per-layer activations, parameters held as arrays."""

    def __init__(self, sizes: Sequence[int], hidden="relu", head="sigmoid", rng=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if hidden not in _ACTIVATIONS or head not in _ACTIVATIONS:
            raise ValueError("activations must be relu, sigmoid, or identity")
        self.sizes = tuple(int(s) for s in sizes)
        self.activations = ["relu" if hidden == "relu" else hidden] * (len(sizes) - 2) + [head]
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def parameters(self) -> list:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        flat = list(params)
        if len(flat) != 2 * len(self.weights):
            raise ValueError("parameter count mismatch")
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(flat[2 * i], dtype=np.float64)
            self.biases[i] = np.asarray(flat[2 * i + 1], dtype=np.float64)

    def parameter_vars(self) -> list:
        return [Var(p) for p in self.parameters]

    def forward_var(self, x, param_vars: Sequence[Var]) -> Var:
        """Graph-building forward pass; ``x`` may be an array or a Var."""
        out = as_var(x)
        for i, act in enumerate(self.activations):
            out = add(matmul(out, param_vars[2 * i]), param_vars[2 * i + 1])
            out = _ACTIVATIONS[act](out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass for inference."""
        out = np.asarray(x, dtype=np.float64)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            out = out @ w + b
            if act == "relu":
                out = np.maximum(out, 0.0)
            elif act == "sigmoid":
                out = _sigmoid_array(out)
        return out


@dataclass
class AdamState:
    """First/second moment accumulators for a fixed parameter list."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected adaptive-moment update, applied in place."""
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p) if g is None else g
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(params, grads, lr: float = 1e-2) -> None:
    """Plain gradient-descent update, applied in place."""
    for p, g in zip(params, grads):
        if g is not None:
            p -= lr * g


def gradient_of(loss_fn: Callable[[Sequence[Var]], Var], params: Sequence[np.ndarray]):
    """Build the graph once and return (loss value, gradient arrays)."""
    param_vars = [Var(p) for p in params]
    loss = loss_fn(param_vars)
    backward(loss)
    return loss.item(), [pv.grad for pv in param_vars]
