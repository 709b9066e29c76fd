"""Minimal reverse-mode autodiff on float64 numpy arrays.

Everything the recurrent models need is built from the primitives below;
analytic gradients are validated against central finite differences by the
gradient checker, which is the module family's primary acceptance. Graphs
are built eagerly; backward() runs the tape in reverse topological order
with a fixed traversal, so gradient accumulation order (and therefore
training) is deterministic.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (evaluation rollouts, data plumbing)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


_seq_counter = 0


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_seq")

    def __init__(self, data, requires_grad=False):
        global _seq_counter
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self._parents = ()
        self._backward = None
        _seq_counter += 1
        self._seq = _seq_counter

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        # hot path: bypass __init__ (no asarray, no kwargs)
        global _seq_counter
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        _seq_counter += 1
        out._seq = _seq_counter
        if _grad_enabled:
            for p in parents:
                if p.requires_grad:
                    out.requires_grad = True
                    out._parents = parents
                    out._backward = backward
                    break
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, grad):
        # first contribution copies (grad buffers may be shared by siblings)
        if self.grad is None:
            self.grad = np.array(grad, dtype=float, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(
                    self.grad, self.data.shape).copy()
        else:
            self.grad += grad

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _wrap(other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = Tensor._wrap(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        return Tensor._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accum(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        return Tensor._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(
                    -g * self.data / (other.data * other.data), other.shape))

        return Tensor._result(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            if self.requires_grad:
                self._accum(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward)

    def __matmul__(self, other):
        other = Tensor._wrap(other)
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accum(g @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ g)

        return Tensor._result(out_data, (self, other), backward)

    # -- reductions and shaping -------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.shape).copy())

        return Tensor._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def backward(g):
            if self.requires_grad:
                self._accum(g.reshape(self.shape))

        return Tensor._result(out_data, (self,), backward)

    def __getitem__(self, idx):
        out_data = self.data[idx]
        basic = isinstance(idx, (int, slice)) or (
            isinstance(idx, tuple)
            and all(isinstance(k, (int, slice)) for k in idx))

        def backward(g):
            if self.requires_grad:
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                if basic:
                    self.grad[idx] += g
                else:
                    np.add.at(self.grad, idx, g)

        return Tensor._result(out_data, (self,), backward)

    # -- nonlinearities -----------------------------------------------------

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g * (1.0 - out_data * out_data))

        return Tensor._result(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            if self.requires_grad:
                self._accum(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g * out_data)

        return Tensor._result(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g / self.data)

        return Tensor._result(out_data, (self,), backward)

    def clip(self, lo, hi):
        """Clamp values; gradient passes through the interior only."""
        out_data = np.clip(self.data, lo, hi)
        inside = (self.data >= lo) & (self.data <= hi)

        def backward(g):
            if self.requires_grad:
                self._accum(g * inside)

        return Tensor._result(out_data, (self,), backward)

    def relu_floor(self, floor=0.0):
        """max(x, floor); gradient is masked where the floor binds."""
        out_data = np.maximum(self.data, floor)
        active = self.data > floor

        def backward(g):
            if self.requires_grad:
                self._accum(g * active)

        return Tensor._result(out_data, (self,), backward)

    # -- autodiff driver ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise NumericError("backward() requires a scalar loss")
        # creation order is a topological order (ops consume existing
        # tensors), so a reverse sort on sequence ids replaces post-order DFS
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._backward is not None:
                nodes.append(node)
            for parent in node._parents:
                pid = id(parent)
                if pid not in seen:
                    seen.add(pid)
                    stack.append(parent)
        nodes.sort(key=lambda n: n._seq, reverse=True)
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along an axis."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x._accum(out_data * (g - dot))

    return Tensor._result(out_data, (x,), backward)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Parametric ReLU with a single shared learnable slope."""
    pos = x.data > 0
    out_data = np.where(pos, x.data, float(alpha.data) * x.data)

    def backward(g):
        if x.requires_grad:
            x._accum(g * np.where(pos, 1.0, float(alpha.data)))
        if alpha.requires_grad:
            alpha._accum(np.sum(g * np.where(pos, 0.0, x.data)).reshape(
                alpha.shape))

    return Tensor._result(out_data, (x, alpha), backward)


def concat(tensors, axis=-1) -> Tensor:
    """Concatenate tensors along an axis."""
    tensors = [Tensor._wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor._result(out_data, tuple(tensors), backward)


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors as rows of a 2-D tensor."""
    tensors = [Tensor._wrap(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=0)

    def backward(g):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(g[k])

    return Tensor._result(out_data, tuple(tensors), backward)
