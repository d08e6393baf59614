"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` on a 1x1 loss walks the recorded graph in reverse
topological order, visiting each node once, and *adds* into ``.grad`` of
every tensor that requires a gradient.  Grads are never cleared
implicitly; use :func:`zero_grad`.

Operands may broadcast numpy-style along axes of length 1 (row vectors
against matrices, 1x1 scalars against anything); gradients are summed back
onto the broadcast axes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ContractError", "Tensor", "tensor", "as_tensor", "backward", "zero_grad",
    "add", "sub", "mul", "div", "matmul", "scale", "sum", "mean", "neg",
    "square", "sqrt", "exp", "log", "tanh", "elu", "elu_deriv", "relu",
    "leaky_relu", "sin", "cos", "min_scalar", "pow_scalar", "norm_l2",
    "broadcast_row", "concat_cols", "concat_rows", "slice_rows", "transpose",
]


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ContractError(f"Tensor data must be at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    """Create an op output; parents that need no gradient are pruned."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, name):
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1):
        return
    raise ContractError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _node(out, (a, b), bw, "div")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def concat_cols(*xs):
    xs = [as_tensor(x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ContractError(f"concat_cols: row counts differ: {[x.shape for x in xs]}")
    edges = np.cumsum([0] + [x.shape[1] for x in xs])
    return _node(np.concatenate([x.data for x in xs], axis=1), tuple(xs),
                 lambda g: tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(xs))),
                 "concat_cols")


def concat_rows(*xs):
    xs = [as_tensor(x) for x in xs]
    cols = {x.shape[1] for x in xs}
    if len(cols) != 1:
        raise ContractError(f"concat_rows: column counts differ: {[x.shape for x in xs]}")
    edges = np.cumsum([0] + [x.shape[0] for x in xs])
    return _node(np.concatenate([x.data for x in xs], axis=0), tuple(xs),
                 lambda g: tuple(g[edges[i]:edges[i + 1]] for i in range(len(xs))),
                 "concat_rows")


# ----------------------------------------------------------------- unary ops

def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        out = a.data.sum().reshape(1, 1)
    else:
        out = a.data.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]
    if axis is None:
        out = a.data.mean().reshape(1, 1)
    else:
        out = a.data.mean(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (np.broadcast_to(g / count, shape),), "mean")


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _node(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def pow_scalar(a, p):
    a = as_tensor(a)
    ad = a.data
    p = float(p)
    return _node(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1.0),), "pow")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _node(out, (a,), bw, "sqrt")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def elu(a):
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    ex = np.exp(np.minimum(ad, 0.0))
    out = np.where(pos, ad, ex - 1.0)
    return _node(out, (a,), lambda g: (g * np.where(pos, 1.0, ex),), "elu")


def elu_deriv(a):
    """Pointwise derivative of :func:`elu`, itself differentiable."""
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    ex = np.exp(np.minimum(ad, 0.0))
    out = np.where(pos, 1.0, ex)
    return _node(out, (a,), lambda g: (g * np.where(pos, 0.0, ex),), "elu_deriv")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    k = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * k, (a,), lambda g: (g * k,), "leaky_relu")


def sin(a):
    a = as_tensor(a)
    ad = a.data
    return _node(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a):
    a = as_tensor(a)
    ad = a.data
    return _node(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def min_scalar(a, c):
    """Elementwise ``min(a, c)``; the gradient at ``a == c`` is 0."""
    a = as_tensor(a)
    mask = a.data < c
    return _node(np.where(mask, a.data, c), (a,), lambda g: (g * mask,), "min_scalar")


def norm_l2(a, axis=1):
    """Euclidean norm along ``axis`` (rows by default); zero norm has zero grad."""
    a = as_tensor(a)
    ad = a.data
    out = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / safe, 0.0) * ad,)

    return _node(out, (a,), bw, "norm_l2")


def broadcast_row(a, n):
    a = as_tensor(a)
    if a.shape[0] != 1:
        raise ContractError(f"broadcast_row: expected a 1xC row, got {a.shape}")
    return _node(np.repeat(a.data, n, axis=0), (a,),
                 lambda g: (g.sum(axis=0, keepdims=True),), "broadcast_row")


def slice_rows(a, start, stop):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop], (a,), bw, "slice_rows")


def transpose(a):
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------------ backward

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable tensor
    with ``requires_grad``."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        g = np.asarray(g)
        if g.shape != node.shape:
            g = np.broadcast_to(g, node.shape)
        node.grad = np.array(g) if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params):
    for p in params:
        p.grad = None
