"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient buffer. Operations
record their parents and a backward closure; ``backward`` walks the graph in
exact reverse topological order, so two runs over identical graphs accumulate
gradients in the same order and produce bit-identical results.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeMismatchError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def result(cls, data, parents, backward_fn):
        """Internal: op output, wired into the graph when grad mode is on."""
        if _grad_enabled and any(p.requires_grad for p in parents):
            out = cls(data, requires_grad=True)
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out = cls(data)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def clip(self, lo, hi):
        return clip(self, lo, hi)

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitive ops --------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return Tensor.result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor.result(a.data * b.data, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * out_data)

    return Tensor.result(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(f"matmul {a.data.shape} @ {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return Tensor.result(a.data @ b.data, (a, b), backward)


def tsum(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.data.shape))

    return Tensor.result(a.data.sum(), (a,), backward)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g / n, a.data.shape))

    return Tensor.result(a.data.mean(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(old))

    return Tensor.result(a.data.reshape(shape), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(g[tuple(index)])

    return Tensor.result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return Tensor.result(np.clip(a.data, lo, hi), (a,), backward)


def grad_scale(a: Tensor, factor: float) -> Tensor:
    """Identity forward; backward multiplies the gradient by ``factor``.

    Lets a loss term flow into upstream modules with a different weight than
    it carries for the modules behind this node.
    """

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * factor)

    return Tensor.result(a.data.copy(), (a,), backward)


# -- reverse-mode driver ---------------------------------------------------------


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-first topological order via iterative post-order DFS."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable parameter."""
    if loss.data.ndim != 0:
        raise ShapeMismatchError("backward expects a scalar loss")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
