"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When at least one input
requires a gradient, the result remembers its parents and a backward rule;
:func:`backward` walks that graph once in reverse topological order.
"""
from __future__ import annotations

import numpy as np

from .. import kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class GraphStateError(RuntimeError):
    """Backward requested on a graph that has no forward record."""


_RELEASED = object()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self.op == "leaf"

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), backward, "matmul")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _result(A * B, (a, b), backward, "mul")


def sum_(x):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(x.data.sum()), (x,), backward, "sum")


# ------------------------------------------------------------ restructuring

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def slice_(x, index):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        if _fancy(index):
            np.add.at(out, index, g)
        else:
            out[index] += g
        return (out,)

    return _result(x.data[index], (x,), backward, "slice")


def _fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(old),)

    return _result(data, (x,), backward, "reshape")


def embedding(table, ids):
    """Rows of ``table`` selected by integer ``ids`` (1-D)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return _result(table.data[ids], (table,), backward, "embedding")


# --------------------------------------------------------------- activations

def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward, "sigmoid")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), backward, "tanh")


def lrelu(x, slope=0.01):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)

    def backward(g):
        return (g * scale,)

    return _result(x.data * scale, (x,), backward, "lrelu")


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def log_softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward, "log_softmax")


# ------------------------------------------------------------------- losses

def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under row logits."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows but targets of shape {targets.shape}")
    if n and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"cross_entropy: target id outside [0, {v})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / n),)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of 0/1 ``targets`` against logits."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {y.shape}")
    z = logits.data
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    p = 0.5 * (1.0 + np.tanh(0.5 * z))

    def backward(g):
        return ((p - y) * (g / z.size),)

    return _result(np.asarray(loss), (logits,), backward, "bce")


def squared_error(pred, target):
    """Sum of squared differences; ``target`` is a constant."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ShapeError(f"squared_error: shapes {pred.shape} and {t.shape} differ")
    diff = pred.data - t

    def backward(g):
        return (2.0 * g * diff,)

    return _result(np.asarray((diff * diff).sum()), (pred,), backward, "squared_error")


# ------------------------------------------------------------ fused LSTM ops

def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One LSTM step.  Returns ``[h', c']`` concatenated along the last axis."""
    x, h, c, w_ih, w_hh, b = map(as_tensor, (x, h, c, w_ih, w_hh, b))
    H = c.shape[-1]
    if w_ih.shape != (x.shape[-1], 4 * H) or w_hh.shape != (H, 4 * H) or b.shape[-1] != 4 * H:
        raise ShapeError(
            f"lstm_cell: input {x.shape}, state {h.shape}, weights {w_ih.shape} and {w_hh.shape}"
        )
    X, Hp, C = x.data, h.data, c.data
    z = X @ w_ih.data + Hp @ w_hh.data + b.data
    h_new, c_new, acts = kernels.lstm_cell_forward(z, C)
    Wi, Wh = w_ih.data, w_hh.data

    def backward(g):
        dz, dc = kernels.lstm_cell_backward(g[:, :H], g[:, H:], C, c_new, acts)
        return dz @ Wi.T, dz @ Wh.T, dc, X.T @ dz, Hp.T @ dz, _unbroadcast(dz, b.shape)

    return _result(np.concatenate([h_new, c_new], axis=-1), (x, h, c, w_ih, w_hh, b), backward, "lstm_cell")


def lstm_sequence(x, w_ih, w_hh, b, reverse=False):
    """Run an LSTM over the rows of ``x`` (T, D) from zero state; returns (T, H)."""
    x, w_ih, w_hh, b = map(as_tensor, (x, w_ih, w_hh, b))
    H = w_hh.shape[0]
    if x.data.ndim != 2 or w_ih.shape != (x.shape[1], 4 * H) or w_hh.shape != (H, 4 * H):
        raise ShapeError(f"lstm_sequence: input {x.shape}, weights {w_ih.shape} and {w_hh.shape}")
    X, Wi, Wh = x.data, w_ih.data, w_hh.data
    pre = X @ Wi + b.data
    hs, cs, acts = kernels.lstm_seq_forward(pre, Wh, reverse)

    def backward(g):
        dpre, dwh = kernels.lstm_seq_backward(g, Wh, hs, cs, acts, reverse)
        return dpre @ Wi.T, X.T @ dpre, dwh, _unbroadcast(dpre, b.shape)

    return _result(hs, (x, w_ih, w_hh, b), backward, "lstm_sequence")


# ----------------------------------------------------------------- backward

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(output, seed=None, retain_graph=False):
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a dict mapping each gradient-requiring leaf to its gradient.
    """
    if output._backward is _RELEASED:
        raise GraphStateError("graph was already released by a previous backward; rerun forward")
    if not output.requires_grad:
        raise GraphStateError("output does not depend on any tensor that requires grad")
    if seed is None:
        if output.data.size != 1:
            raise ShapeError(f"backward: seed required for non-scalar output of shape {output.shape}")
        seed = np.ones(output.shape)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} does not match output {output.shape}")

    order = _topological(output)
    grads = {id(output): seed}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        if node._backward is _RELEASED:
            raise GraphStateError(f"node {node.op} was released by a previous backward")
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            node._parents = ()
            node._backward = _RELEASED
    return leaves
