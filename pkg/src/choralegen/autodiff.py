"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node holding its forward value and a closure that
routes the node's gradient to its parents.  Calling ``backward`` on a
scalar walks the graph in reverse topological order, accumulating (+=)
into each reachable tensor's ``grad`` buffer, so parameters used several
times collect every contribution.

All data are 64-bit floats.  Each op checks its result for NaN/Inf and
raises NonFiniteValue, which is why masked softmax takes an explicit
boolean mask instead of additive -inf logits: masked keys get probability
exactly zero without a non-finite intermediate.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DisconnectedGraphWarning,
    NonFiniteValue,
    NotScalar,
    ShapeMismatch,
)

CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (on by default)."""
    global CHECK_FINITE
    CHECK_FINITE = enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A leaf tensor sharing this value but cut from the graph."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the handful of cases where it reads better.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return tslice(self, key)


def _make(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{op} produced NaN or Inf")
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # Copy: g may be a view into (or alias of) another node's buffer.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that broadcasting introduced or stretched."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- arithmetic ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * factor)

    return _make(a.data * factor, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands: {a.shape} vs {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} vs {b.shape}") from None

    def backward(g: np.ndarray) -> None:
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward, "matmul")


# --- shaping ------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(
            f"concat axis {axis}: {[t.shape for t in tensors]}"
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(data, tuple(tensors), backward, "concat")


def tslice(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make(data, (a,), backward, "slice")


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.transpose(g, inverse))

    return _make(data, (a,), backward, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _make(data, (a,), backward, "reshape")


# --- reductions ---------------------------------------------------------------

def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            _accumulate(a, np.full_like(a.data, g))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(data, (a,), backward, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


# --- nonlinearities -----------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), backward, "relu")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward, "log")


def sigmoid(a: Tensor) -> Tensor:
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    data = np.logaddexp(0.0, a.data)

    def backward(g: np.ndarray) -> None:
        sig = np.empty_like(a.data)
        pos = a.data >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
        ex = np.exp(a.data[~pos])
        sig[~pos] = ex / (1.0 + ex)
        _accumulate(a, g * sig)

    return _make(data, (a,), backward, "softplus")


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along an axis; masked entries get probability exactly 0.

    ``mask`` is a boolean array broadcastable to ``a`` with True marking
    keys that participate.  Rows with no unmasked entry are rejected.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ShapeMismatch("softmax: a row is fully masked")
        shifted = np.where(mask, x, -np.inf)
        shifted -= shifted.max(axis=axis, keepdims=True)
        e = np.exp(shifted)  # exp(-inf) is exactly 0 for masked keys
    else:
        e = np.exp(x - x.max(axis=axis, keepdims=True))
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _make(data, (a,), backward, "softmax")


def layer_norm(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean and unit variance."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def backward(g: np.ndarray) -> None:
        g_mean = g.mean(axis=-1, keepdims=True)
        gx_mean = (g * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - g_mean - xhat * gx_mean))

    return _make(xhat, (a,), backward, "layer_norm")


# --- lookups and losses ---------------------------------------------------------

def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(
            f"embedding_lookup: ids outside 0..{table.shape[0] - 1}"
        )
    data = table.data[ids]

    def backward(g: np.ndarray) -> None:
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _make(data, (table,), backward, "embedding_lookup")


def dropout(
    a: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None
) -> Tensor:
    """Inverted dropout; the identity when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a generator")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * keep)

    return _make(a.data * keep, (a,), backward, "dropout")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log-likelihood (natural log) of the target ids.

    ``logits`` has shape (..., V) and ``targets`` the matching (...) shape;
    a bare (V,) row with a scalar target also works.
    """
    targets = np.asarray(targets, dtype=np.int64)
    x = logits.data
    if targets.shape != x.shape[:-1]:
        raise ShapeMismatch(
            f"cross_entropy: logits {x.shape} vs targets {targets.shape}"
        )
    m = x.max(axis=-1, keepdims=True)
    lse = m.squeeze(-1) + np.log(np.exp(x - m).sum(axis=-1))
    picked = np.take_along_axis(x, targets[..., None], axis=-1).squeeze(-1)
    data = lse - picked

    def backward(g: np.ndarray) -> None:
        soft = np.exp(x - m)
        soft /= soft.sum(axis=-1, keepdims=True)
        np.subtract.at(soft, (*np.indices(targets.shape), targets), 1.0)
        _accumulate(logits, soft * np.asarray(g)[..., None])

    return _make(data, (logits,), backward, "cross_entropy")


# --- backward pass ---------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor reachable from a scalar loss."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        warnings.warn(
            "loss is not connected to any tensor requiring gradients",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
        return

    # Iterative topological sort; graphs are deep enough to overflow the
    # recursion limit on long sequences.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
