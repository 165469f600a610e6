"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a NumPy array and, when it was produced by a
differentiable operation, a closure mapping the output gradient to the
gradients of its parents. :meth:`Tensor.backward` walks the recorded graph
in reverse topological order and accumulates gradients into leaf tensors
that have ``requires_grad`` set.

Compute runs in float32 by default. Operations preserve the dtype of their
inputs, so gradient checks can promote a graph to float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """N-dimensional array node of a differentiation graph.

    Parameters
    ----------
    data : array_like
        Values. Floating arrays keep their dtype; everything else is cast to
        float32.
    requires_grad : bool
        Whether gradients should be accumulated into :attr:`grad` for this
        tensor when it is a leaf.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None,
        op: str = "",
    ) -> None:
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd -------------------------------------------------------------

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate ``grad`` on every reachable leaf that requires it.

        Without an explicit seed gradient the tensor must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    check_finite(g, f"gradient of {node!r}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def back(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return make_result(self.data + other.data, (self, other), back, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return make_result(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return make_result(a * b, (self, other), back, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

        return make_result(a / b, (self, other), back, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) / self

    # -- reductions / shape ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

        out = self.data.sum(axis=axis, keepdims=keepdims)
        return make_result(np.asarray(out, dtype=self.dtype), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return make_result(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),), "reshape")


def as_tensor(value, dtype=DEFAULT_DTYPE) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap ``data`` as an op output, recording the graph only when needed."""
    if _grad_enabled and any(_needs_grad(p) for p in parents):
        return Tensor(data, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


def graph_ops(root: Tensor) -> list[str]:
    """Op names of every recorded node behind ``root``, in topological order."""
    return [node.op for node in _topological_order(root) if node._backward is not None]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and _needs_grad(parent):
                stack.append((parent, False))
    return order
