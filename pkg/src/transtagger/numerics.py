"""Dense tensors with reverse-mode automatic differentiation, plus Adam.

Graphs are built define-by-run: every op returns a new :class:`Tensor` that
remembers its inputs and a closure computing the input gradients.  Calling
:func:`backward` on a scalar walks the recorded nodes in reverse topological
order.  All compute is float64.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

OP_KINDS = (
    "matmul",
    "add",
    "mul",
    "concat",
    "slice",
    "embed_lookup",
    "softmax",
    "layer_norm",
    "gelu",
    "dropout",
    "cross_entropy",
    "reshape",
    "transpose",
    "mean",
    "mask_fill",
)

_node_ids = itertools.count()


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array that can take part in a differentiable graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "parents", "_backward", "_id", "stochastic")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_node_ids)
        self.stochastic = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{label}{op})"

    # sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # shared weight matrix: fold leading axes into one GEMM
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make(out, "matmul", (a, b), backward)
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "matmul", (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, "mul", (a, b), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from exc
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return [
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        ]

    return _make(out, "concat", tensors, backward)


def slice_(x, idx) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with summation."""
    x = as_tensor(x)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out, copy=True), "slice", (x,), backward)


def embed_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embed_lookup: id out of range [0, {vocab}) for table {table.name or table.shape}")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(out, "embed_lookup", (table,), backward)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    p = _softmax(x.data, axis)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, "softmax", (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        return gx, ggamma, gbeta

    return _make(out, "layer_norm", (x, gamma, beta), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """tanh approximation of GELU."""
    x = as_tensor(x)
    x2 = x.data * x.data
    u = _GELU_C * x.data * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
        return (g * d,)

    return _make(out, "gelu", (x,), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    out = _make(x.data * keep, "dropout", (x,), backward)
    out.stochastic = True
    return out


def log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, target) -> Tensor:
    """Mean over rows of ``-sum_j target_j * log softmax(logits)_j``.

    ``target`` is either integer class labels (shape ``(B,)``) or a
    distribution tensor of the same shape as ``logits``.  A distribution
    target may itself be differentiable.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    rows, classes = logits.shape
    if isinstance(target, Tensor):
        tgt = target
    else:
        labels = np.asarray(target)
        if labels.ndim == 1 and np.issubdtype(labels.dtype, np.integer):
            if labels.shape[0] != rows:
                raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {rows} rows")
            if labels.size and (labels.min() < 0 or labels.max() >= classes):
                raise IndexError(f"cross_entropy: label out of range [0, {classes})")
            onehot = np.zeros((rows, classes))
            onehot[np.arange(rows), labels] = 1.0
            tgt = Tensor(onehot)
        else:
            tgt = Tensor(labels)
    if tgt.shape != logits.shape:
        raise ShapeError(f"cross_entropy: target {tgt.shape} vs logits {logits.shape}")
    logp = log_softmax_np(logits.data)
    t = tgt.data
    # 0 * -inf must count as 0
    terms = np.where(t != 0.0, t * logp, 0.0)
    out = np.asarray(-terms.sum() / rows)

    def backward(g):
        p = np.exp(logp)
        tsum = t.sum(axis=-1, keepdims=True)
        glogits = g * (p * tsum - t) / rows
        gtarget = g * np.where(np.isfinite(logp), -logp, 0.0) / rows
        return glogits, gtarget

    return _make(out, "cross_entropy", (logits, tgt), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, "reshape", (x,), backward)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _make(out, "transpose", (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out).size, 1)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _make(np.asarray(out), "mean", (x,), backward)


def mask_fill(x, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, value, x.data)

    def backward(g):
        return (np.where(mask, 0.0, g),)

    return _make(out, "mask_fill", (x,), backward)


# ---------------------------------------------------------------------------
# backward pass


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent._id not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate gradients into every ``requires_grad`` leaf reachable from ``loss``.

    Returns the gradients of named leaves keyed by name.  Existing ``.grad``
    values on leaves are overwritten, not accumulated across calls.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    named: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            if node.name is not None:
                named[node.name] = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = np.array(pg, dtype=np.float64, copy=True)
    return named


def graph_ops(root: Tensor) -> list[str]:
    return [n.op for n in topological_order(root) if n.op is not None]


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Iterable[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the graph from the current parameter values each
    call.  Error per entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    plist = list(params.values()) if isinstance(params, Mapping) else list(params)
    loss = loss_fn()
    for node in topological_order(loss):
        if node.stochastic:
            raise ValueError("grad_check: graph contains dropout in training mode; disable it first")
    for p in plist:
        p.grad = None
    backward(loss)
    worst = 0.0
    for p in plist:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place.

    Parameters without a gradient entry are left untouched but still share
    the step counter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
