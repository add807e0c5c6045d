"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records the operations applied to it;
``backward()`` on a scalar result propagates exact gradients to every leaf
with ``requires_grad``.  Only the primitives needed by the dense networks,
the spectral layers, and the regularised inversion objectives are provided;
differentiation with respect to spatial grid coordinates is out of scope.
"""

from __future__ import annotations

import math

import numpy as np

_SELU_LAMBDA = 1.0507009873554805
_SELU_ALPHA = 1.6732632423543772
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @classmethod
    def _node(cls, data, parents, backward):
        out = cls(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # free the tape as we go; leaves keep their grads
                node._parents = ()
                node._backward = None

    # ---- arithmetic ----

    def __add__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        return Tensor._node(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            if a.requires_grad:
                a._accumulate(-g)
        return Tensor._node(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        return Tensor._node(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / b.data**2, b.data.shape))
        return Tensor._node(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        def bwd(g, a=self, e=exponent):
            if a.requires_grad:
                a._accumulate(g * e * a.data ** (e - 1))
        return Tensor._node(self.data**exponent, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)
        return Tensor._node(self.data @ other.data, (self, other), bwd)

    # ---- shape ----

    def reshape(self, *shape):
        old = self.data.shape
        def bwd(g, a=self, old=old):
            if a.requires_grad:
                a._accumulate(g.reshape(old))
        return Tensor._node(self.data.reshape(*shape), (self,), bwd)

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.data.ndim)))
        inv = np.argsort(axes)
        def bwd(g, a=self, inv=tuple(inv)):
            if a.requires_grad:
                a._accumulate(g.transpose(inv))
        return Tensor._node(self.data.transpose(axes), (self,), bwd)

    @property
    def T(self):
        return self.transpose()

    # ---- reductions ----

    def sum(self, axis=None, keepdims=False):
        def bwd(g, a=self, axis=axis, keepdims=keepdims):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        return Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(x: Tensor, value: np.ndarray, dydx) -> Tensor:
    def bwd(g, a=x):
        if a.requires_grad:
            a._accumulate(g * dydx)
    return Tensor._node(value, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    v = np.exp(x.data)
    return _unary(x, v, v)


def log(x: Tensor) -> Tensor:
    return _unary(x, np.log(x.data), 1.0 / x.data)


def sqrt(x: Tensor) -> Tensor:
    v = np.sqrt(x.data)
    return _unary(x, v, 0.5 / v)


def tanh(x: Tensor) -> Tensor:
    v = np.tanh(x.data)
    return _unary(x, v, 1.0 - v * v)


def sine(x: Tensor) -> Tensor:
    return _unary(x, np.sin(x.data), np.cos(x.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _unary(x, np.where(mask, x.data, 0.0), mask.astype(np.float64))


def selu(x: Tensor) -> Tensor:
    """Scaled exponential linear unit with the standard constants."""
    e = np.exp(np.minimum(x.data, 0.0))
    pos = x.data > 0.0
    v = _SELU_LAMBDA * np.where(pos, x.data, _SELU_ALPHA * (e - 1.0))
    d = _SELU_LAMBDA * np.where(pos, 1.0, _SELU_ALPHA * e)
    return _unary(x, v, d)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form), self-consistent with its gradient."""
    z = x.data
    u = _GELU_C * (z + _GELU_A * z**3)
    t = np.tanh(u)
    v = 0.5 * z * (1.0 + t)
    d = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)
    return _unary(x, v, d)


def identity(x: Tensor) -> Tensor:
    return x


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def bwd(g, parts=tensors, splits=splits, axis=axis):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            if part.requires_grad:
                part._accumulate(piece)
    return Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scales kept activations by 1/(1-p)."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return _unary(x, x.data * keep, keep)


ACTIVATIONS = {
    "identity": identity,
    "relu": relu,
    "tanh": tanh,
    "selu": selu,
    "gelu": gelu,
    "sine": sine,
}
