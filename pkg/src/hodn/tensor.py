"""A small reverse-mode autodiff engine over float64 numpy arrays.

Tensors are immutable: their ``data`` array is flagged read-only and no op
writes into an input.  A graph is recorded implicitly as ops are applied and
:func:`backward` walks it in reverse topological order, returning a
:class:`GradientMap` rather than storing gradients on the tensors.

Only the operations the model needs are provided.  Elementwise ops follow
numpy broadcasting; gradients are summed back to the operand shapes.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import expit

from .errors import DimensionError, ParameterError, ShapeError

_node_ids = itertools.count()


def _frozen(array):
    array = np.asarray(array, dtype=np.float64)
    array.flags.writeable = False
    return array


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        if op == "leaf":
            # copy: a leaf must not alias caller-owned mutable memory
            data = np.array(data, dtype=np.float64)
        self.data = _frozen(data)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return np.array(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self.data.item()

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{grad})"

    # operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value):
    return Tensor(value, requires_grad=False)


def parameter(value):
    return Tensor(value, requires_grad=True)


def _result(data, parents, backward, op):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, False, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        gb = g / b.data
        return _unbroadcast(gb, a.shape), _unbroadcast(-gb * out, b.shape)

    return _result(out, (a, b), backward, "div")


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


def minimum(a, b):
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def backward(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


def abs_(a):
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a):
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),), "relu")


def sigmoid(a):
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    """log(1 + exp(a)), stable for large |a|."""
    grad_scale = expit(a.data)
    return _result(np.logaddexp(0.0, a.data), (a,), lambda g: (g * grad_scale,), "softplus")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# ----------------------------------------------------------------------
# linear algebra and shape manipulation
# ----------------------------------------------------------------------
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a, index):
    """``a[index]`` for basic slices or integer arrays (repeats accumulate)."""
    out = a.data[index]
    fancy = isinstance(index, (list, np.ndarray)) or (
        isinstance(index, tuple) and any(isinstance(i, (list, np.ndarray)) for i in index))

    def backward(g):
        full = np.zeros(a.shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(out, (a,), backward, "take")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


# ----------------------------------------------------------------------
# normalisation
# ----------------------------------------------------------------------
def softmax_lastdim(a):
    if a.size == 0 or a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError(f"softmax over an empty last dimension (shape {a.shape})")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def log_softmax_lastdim(a):
    if a.size == 0 or a.ndim == 0:
        raise DimensionError(f"log-softmax over an empty tensor (shape {a.shape})")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalise each last-dimension slice to zero mean / unit variance, then
    apply ``gain * x + bias``."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    gain, bias = as_tensor(gain), as_tensor(bias)
    width = a.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match last dim {width}")
    centred = a.data - a.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    reduce_axes = tuple(range(a.ndim - 1))

    def backward(g):
        gx = g * gain.data
        ga = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return ga, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _result(xhat * gain.data + bias.data, (a, gain, bias), backward, "layer_norm")


# ----------------------------------------------------------------------
# gradient routing
# ----------------------------------------------------------------------
def stop_gradient(a):
    """Identity in the forward pass; a fresh leaf that never propagates."""
    return Tensor(a.data, False, op="stop_gradient")


class GradientMap:
    """Gradients of one scalar keyed by ``node_id``.

    Leaves the loss does not depend on (including any reached only through
    :func:`stop_gradient`) are absent; :meth:`get` reports them as zeros.
    """

    def __init__(self, entries=None):
        self._entries = dict(entries or {})

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return self._key(key) in self._entries

    def __getitem__(self, key):
        return self._entries[self._key(key)]

    def get(self, tensor):
        grad = self._entries.get(tensor.node_id)
        return np.zeros(tensor.shape) if grad is None else grad

    def items(self):
        return self._entries.items()

    @staticmethod
    def _key(key):
        return key.node_id if isinstance(key, Tensor) else key


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients for every ``requires_grad`` leaf reachable through live
    edges.  Accumulation order is fixed by the graph, so repeated calls on the
    same graph are bit-identical.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return GradientMap()
    grads = {loss.node_id: np.ones(loss.shape)}
    leaves = {}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            leaves[node.node_id] = np.array(g, dtype=np.float64)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return GradientMap(leaves)
