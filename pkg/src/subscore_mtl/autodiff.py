"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for a patch-embedding transformer with task heads and a
weighted squared-error objective: broadcasting arithmetic, (batched) matmul,
shape ops, reductions, and the fused kernels (gelu / softmax / layernorm)
which dispatch through `subscore_mtl.backend`.

Dtype follows the operands (float32 for training, float64 for gradient
checking); scalar factors are plain Python floats so they never promote.
"""

import numpy as np

from . import backend as K


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def backward(self):
        """Accumulate gradients of this (scalar) tensor w.r.t. the graph leaves."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
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


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _result(a.data * b.data, (a, b), backward)


def scale(a, c):
    """Multiply by a Python float (kept weakly typed so float32 stays float32)."""
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result(a.data * c, (a,), backward)


def matmul(a, b):
    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def reshape(a, shape):
    src = a.data.shape

    def backward(g):
        return (g.reshape(src),)

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _result(a.data.transpose(axes), (a,), backward)


def broadcast_to(a, shape):
    src = a.data.shape

    def backward(g):
        return (_unbroadcast(g, src),)

    return _result(np.broadcast_to(a.data, shape), (a,), backward)


def getitem(a, idx):
    src_shape = a.data.shape
    src_dtype = a.data.dtype

    def backward(g):
        out = np.zeros(src_shape, dtype=src_dtype)
        out[idx] = g
        return (out,)

    return _result(a.data[idx], (a,), backward)


def concat(tensors, axis):
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                pieces.append(g[tuple(sl)])
            else:
                pieces.append(None)
        return tuple(pieces)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum_(a, axis=None, keepdims=False):
    src = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).astype(a.data.dtype, copy=False),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, src),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean_(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def gelu(a):
    def backward(g):
        return (K.gelu_grad(a.data, g),)

    return _result(K.gelu(a.data), (a,), backward)


def softmax_lastdim(a):
    y = K.softmax_lastdim(a.data)

    def backward(g):
        return (K.softmax_grad_lastdim(y, g),)

    return _result(y, (a,), backward)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last axis with learnable scale/offset."""
    y, mean, rstd = K.layernorm(a.data, gamma.data, beta.data, eps)

    def backward(g):
        gx, dgamma, dbeta = K.layernorm_grad(a.data, gamma.data, mean, rstd, g)
        return (
            gx if a.requires_grad else None,
            dgamma if gamma.requires_grad else None,
            dbeta if beta.requires_grad else None,
        )

    return _result(y, (a, gamma, beta), backward)
