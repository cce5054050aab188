"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for the forecasting model: broadcasting elementwise
arithmetic, batched matmul, the activations used by the layers, axis
reductions, and shape plumbing. Everything is float64; gradients
accumulate into ``.grad`` on tensors created with requires_grad=True.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents, backward) -> "Tensor":
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                     _parents=tuple(p for p in parents if p.requires_grad))
        if out.requires_grad:
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return self._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return self._make(-self.data, (self,), backward)

    def __sub__(self, other):
        other = self._lift(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return self._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        other = self._lift(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / other.data ** 2, other.shape))

        return self._make(self.data / other.data, (self, other), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        assert self.data.ndim >= 2 and other.data.ndim >= 2

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return self._make(self.data @ other.data, (self, other), backward)

    __matmul__ = matmul

    # -- activations ----------------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return self._make(out_data, (self,), backward)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data ** 2))

        return self._make(out_data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return self._make(out_data, (self,), backward)

    def leaky_relu(self, slope: float) -> "Tensor":
        positive = self.data > 0

        def backward(g):
            self._accumulate(g * np.where(positive, 1.0, slope))

        return self._make(np.where(positive, self.data, slope * self.data), (self,), backward)

    def elu(self) -> "Tensor":
        positive = self.data > 0
        out_data = np.where(positive, self.data, np.expm1(self.data))

        def backward(g):
            self._accumulate(g * np.where(positive, 1.0, out_data + 1.0))

        return self._make(out_data, (self,), backward)

    # -- reductions and shape -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape

        def backward(g):
            self._accumulate(g.reshape(old))

        return self._make(self.data.reshape(*shape), (self,), backward)

    def transpose(self, axes) -> "Tensor":
        inverse = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return self._make(self.data.transpose(axes), (self,), backward)

    def select(self, index: int) -> "Tensor":
        """Slice along the leading axis."""

        def backward(g):
            if self.grad is None:
                self.grad = np.zeros(self.shape)
            self.grad[index] += g

        return self._make(self.data[index], (self,), backward)

    # -- autodiff entry point --------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar result."""
        assert self.data.size == 1, "backward() expects a scalar"
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
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
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def stack(tensors: list[Tensor]) -> Tensor:
    """Stack tensors of equal shape along a new leading axis."""
    data = np.stack([t.data for t in tensors])
    parents = tuple(t for t in tensors if t.requires_grad)
    out = Tensor(data, requires_grad=bool(parents), _parents=parents)
    if out.requires_grad:
        def backward(g):
            for k, t in enumerate(tensors):
                if t.requires_grad:
                    t._accumulate(g[k])
        out._backward = backward
    return out


def softmax(logits: Tensor, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; optional 0/1 mask confines support.

    The shift constant is detached, which leaves gradients exact. Rows
    whose mask is all zero are the caller's responsibility.
    """
    if mask is not None:
        logits = logits * mask + (1.0 - mask) * -1e30
    shifted = logits - logits.data.max(axis=axis, keepdims=True)
    e = shifted.exp()
    if mask is not None:
        e = e * mask
    return e / e.sum(axis=axis, keepdims=True)


def parameter(data, rng: np.random.Generator | None = None,
              fan_in: int | None = None, shape=None) -> Tensor:
    """Trainable tensor; with ``rng`` draws uniform +-1/sqrt(fan_in)."""
    if rng is not None:
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)
