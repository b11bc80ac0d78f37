"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its parents and a closure mapping the output
gradient to one gradient per parent. ``Tensor.backward`` walks the graph in
reverse topological order, visiting each node exactly once.

Binary operations follow numpy broadcasting; gradients are summed back to
the operand shapes. All layers of the completion network (per-point linear
layers, normalisation, attention, pooling, tanh heads) are built from the
functions in this module.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _grad_fn: Optional[GradFn] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._grad_fn = _grad_fn

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _not_scalar(self)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    # ---------------------------------------------------------------- backward
    def backward(self, grad=None) -> None:
        """Populate ``.grad`` on every ``requires_grad`` node upstream of self.

        Leaves accumulate across calls; interior nodes are overwritten.
        """
        if grad is None:
            if self.data.size != 1:
                _not_scalar(self)
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != self.shape:
                raise ValueError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _not_scalar(t: Tensor):
    raise ValueError(f"backward/item requires a scalar tensor, got shape {t.shape}")


def _topological_order(root: Tensor) -> list:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, grad_fn: GradFn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  _parents=parents if needs else (),
                  _grad_fn=grad_fn if needs else None)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape),
                            unbroadcast(g * a.data, b.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------- reductions
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def max_over_points(x: Tensor, axis: int = -2) -> Tensor:
    """Column-wise maximum over the point axis.

    The gradient goes to the arg-max row of each column; ties resolve to the
    lowest index.
    """
    if x.shape[axis] == 0:
        raise ValueError("max_over_points needs at least one point")
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
    out = np.squeeze(out, axis=axis)

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (x,), grad_fn)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; gradient is 0 where the norm is 0."""
    out = np.sqrt((x.data * x.data).sum(axis=axis))

    def grad_fn(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axis),)

    return _make(out, (x,), grad_fn)


# ------------------------------------------------------------------- shapes
def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = np.broadcast_to(a.data, shape)
    return _make(out, (a,), lambda g: (unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), grad_fn)


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate."""
    out = a.data[index]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), grad_fn)


# ------------------------------------------------------------------- linear
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting.

    dA = dC @ B^T and dB = A^T @ dC, summed over broadcast batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), grad_fn)


def pointwise_mlp(x: Tensor, weights: Sequence[Tensor], biases: Sequence[Tensor],
                  activation: Optional[str] = "relu", final_activation: Optional[str] = None) -> Tensor:
    """Apply the same stack of linear layers to every point row of ``x``.

    ``activation`` is applied between layers, ``final_activation`` after the
    last one (``None``, ``"relu"`` or ``"tanh"``).
    """
    acts = {None: lambda t: t, "relu": relu, "tanh": tanh}
    width = x.shape[-1]
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape[-2] != width:
            raise ValueError(f"layer {i} expects width {w.shape[-2]}, got {width}")
        x = matmul(x, w) + b
        width = w.shape[-1]
        x = acts[activation if i < len(weights) - 1 else final_activation](x)
    return x


# ------------------------------------------------------------ normalisation
def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    out = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dx = g - (g * out).sum(axis=-1, keepdims=True)
        dx *= out
        return (dx,)

    return _make(out, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), grad_fn)


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, axes: tuple,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalise over ``axes`` with batch statistics (train) or running ones (eval).

    In training mode the running buffers are updated in place using the
    unbiased batch variance.
    """
    if not training:
        inv = 1.0 / np.sqrt(running_var + eps)
        scale = gain.data * inv
        xhat = (x.data - running_mean) * inv
        out = xhat * gain.data + bias.data
        return _make(out, (x, gain, bias),
                     lambda g: (g * scale, unbroadcast(g * xhat, gain.shape),
                                unbroadcast(g, bias.shape)))

    count = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    unbiased = var * (count / max(count - 1, 1))
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu.reshape(running_mean.shape)
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased.reshape(running_var.shape)

    def grad_fn(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=axes, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=axes, keepdims=True))
        return dx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), grad_fn)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); eval is the identity."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))
