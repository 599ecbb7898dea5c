"""Reverse-mode autodiff on numpy arrays.

Eager execution with a tape: every operation produces a new Tensor that
remembers its parents and a closure propagating the upstream gradient.
backward() walks the tape in reverse topological order (iteratively, so
long LSTM chains don't hit the recursion limit). Gradients accumulate
with += and are only cleared by zero_grad, so repeated backward calls
sum unless the caller zeroes first.

The op set is exactly what the two networks need; there is no intent to
grow this into a general framework.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum grad over the axes numpy broadcast, back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def _accum_at(self, idx, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[idx] += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Backpropagate from this node; implicit seed of ones for scalars."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad needs a scalar output")
            grad = np.ones_like(self.data)
        self._accum(np.asarray(grad, dtype=self.data.dtype))

        # iterative postorder over the tape
        topo = []
        visited = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for p in parents:
                if id(p) not in visited and p._backward is not None:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    pushed = True
                    break
            if not pushed:
                topo.append(node)
                stack.pop()

        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return make_node(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.data.shape))

        return make_node(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        a = self

        def bw(g):
            if a.requires_grad:
                a._accum(-g)

        return make_node(-a.data, (a,), bw)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return make_node(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return make_node(a.data / b.data, (a, b), bw)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
            )

        def bw(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

        return make_node(a.data @ b.data, (a, b), bw)

    # -- elementwise nonlinearities --------------------------------------

    def tanh(self):
        a = self
        y = np.tanh(a.data)

        def bw(g):
            if a.requires_grad:
                a._accum(g * (1.0 - y * y))

        return make_node(y, (a,), bw)

    def sigmoid(self):
        a = self
        y = expit(a.data)

        def bw(g):
            if a.requires_grad:
                a._accum(g * y * (1.0 - y))

        return make_node(y, (a,), bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            if a.requires_grad:
                a._accum(g * mask)

        return make_node(a.data * mask, (a,), bw)

    def exp(self):
        a = self
        y = np.exp(a.data)

        def bw(g):
            if a.requires_grad:
                a._accum(g * y)

        return make_node(y, (a,), bw)

    def log(self):
        a = self

        def bw(g):
            if a.requires_grad:
                a._accum(g / a.data)

        return make_node(np.log(a.data), (a,), bw)

    def sqrt(self):
        a = self
        y = np.sqrt(a.data)

        def bw(g):
            if a.requires_grad:
                a._accum(g * 0.5 / y)

        return make_node(y, (a,), bw)

    # -- reductions and shape ops ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        y = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())

        return make_node(y, (a,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bw(g):
            if a.requires_grad:
                a._accum(g.reshape(old))

        return make_node(a.data.reshape(shape), (a,), bw)

    @property
    def T(self):
        a = self

        def bw(g):
            if a.requires_grad:
                a._accum(g.T)

        return make_node(a.data.T, (a,), bw)

    def __getitem__(self, idx):
        a = self
        fancy = isinstance(idx, np.ndarray) or (
            isinstance(idx, tuple) and any(isinstance(i, np.ndarray) for i in idx)
        )

        def bw(g):
            if not a.requires_grad:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            if fancy:
                np.add.at(a.grad, idx, g)
            else:
                a.grad[idx] += g

        return make_node(a.data[idx], (a,), bw)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make_node(data, parents, backward) -> Tensor:
    """Create a tape node; drops the tape when grads are off or unneeded."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def stack(tensors, axis=0) -> Tensor:
    """Stack tensors along a new axis, differentiable."""
    parts = [as_tensor(t) for t in tensors]
    data = np.stack([p.data for p in parts], axis=axis)

    def bw(g):
        slices = np.moveaxis(g, axis, 0)
        for p, gs in zip(parts, slices):
            if p.requires_grad:
                p._accum(gs)

    return make_node(data, tuple(parts), bw)


def concat(tensors, axis=0) -> Tensor:
    """Concatenate tensors along an existing axis, differentiable."""
    parts = [as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bw(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offset, offset + size)
                p._accum(g[tuple(sl)])
            offset += size

    return make_node(data, tuple(parts), bw)
