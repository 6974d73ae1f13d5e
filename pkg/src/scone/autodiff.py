"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and records the operations applied to it on a
tape of closures. Calling :meth:`Tensor.backward` on a scalar result walks the
tape in reverse topological order and accumulates gradients into every tensor
created with ``requires_grad=True``.

Only the operations needed by the models in this package are implemented:
elementwise arithmetic with numpy broadcasting, matmul, tanh/exp/log/sqrt,
softplus, reductions, transpose, and concatenation.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcasted axes."""
    if grad.shape == shape:
        return grad
    # Leading axes added by broadcasting are summed away first.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # Size-1 axes that were stretched get summed with keepdims.
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        # Iterative post-order DFS; recursion depth would scale with tape length.
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph construction helper ------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    # -- elementwise binary ops ---------------------------------------
    # A non-Tensor operand is treated as a constant and kept out of the
    # graph; python scalars stay scalars so float32 data is not promoted.

    def __add__(self, other):
        if isinstance(other, Tensor):
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.data.shape))
            return Tensor._make(self.data + other.data, (self, other), bwd)

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
        return Tensor._make(self.data + other, (self,), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)
        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-g, other.data.shape))
            return Tensor._make(self.data - other.data, (self, other), bwd)

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
        return Tensor._make(self.data - other, (self,), bwd)

    def __rsub__(self, other):
        def bwd(g):
            self._accumulate(_unbroadcast(-g, self.data.shape))
        return Tensor._make(other - self.data, (self,), bwd)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.data.shape))
            return Tensor._make(self.data * other.data, (self, other), bwd)

        def bwd(g):
            self._accumulate(_unbroadcast(g * other, self.data.shape))
        return Tensor._make(self.data * other, (self,), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            def bwd(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(
                        -g * self.data / (other.data * other.data), other.data.shape))
            return Tensor._make(self.data / other.data, (self, other), bwd)

        def bwd(g):
            self._accumulate(_unbroadcast(g / other, self.data.shape))
        return Tensor._make(self.data / other, (self,), bwd)

    def __rtruediv__(self, other):
        # constant / x
        def bwd(g):
            self._accumulate(_unbroadcast(
                -g * other / (self.data * self.data), self.data.shape))
        return Tensor._make(other / self.data, (self,), bwd)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        def bwd(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))
        return Tensor._make(self.data ** exponent, (self,), bwd)

    # -- linear algebra -----------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)
        return Tensor._make(self.data @ other.data, (self, other), bwd)

    @property
    def T(self):
        def bwd(g):
            self._accumulate(g.T)
        return Tensor._make(self.data.T, (self,), bwd)

    # -- reductions ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())
        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        def bwd(g):
            self._accumulate(g.reshape(self.data.shape))
        return Tensor._make(self.data.reshape(*shape), (self,), bwd)


# -- elementwise functions --------------------------------------------


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    def bwd(g):
        x._accumulate(g * (1.0 - out_data * out_data))
    return Tensor._make(out_data, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    def bwd(g):
        x._accumulate(g * out_data)
    return Tensor._make(out_data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g):
        x._accumulate(g / x.data)
    return Tensor._make(np.log(x.data), (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    def bwd(g):
        x._accumulate(g * 0.5 / out_data)
    return Tensor._make(out_data, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow for large |x|."""
    d = x.data
    out_data = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    def bwd(g):
        # d/dx softplus = sigmoid(x); the stable form mirrors the forward.
        sig = np.empty_like(d)
        pos = d >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        sig[~pos] = ez / (1.0 + ez)
        x._accumulate(g * sig)
    return Tensor._make(out_data, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])
    return Tensor._make(data, tuple(tensors), bwd)


def logsumexp(x: Tensor, axis: int = 1) -> Tensor:
    """Row-wise log-sum-exp with the max subtracted as a constant (exact gradient)."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x - m  # m is a plain ndarray constant, no graph edge
    out = log(exp(shifted).sum(axis=axis)) + np.squeeze(m, axis=axis)
    return out
