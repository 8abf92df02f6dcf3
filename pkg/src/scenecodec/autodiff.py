"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays; every kernel records its parents and a backward
closure, and backward() runs the resulting tape in reverse topological
order. Reductions are sequential numpy reductions, so identical inputs give
bit-identical results. Training runs in float32; the gradient-check harness
rebuilds graphs in float64.
"""

from __future__ import annotations

import numpy as np

LAYER_NORM_EPS = 1e-5


class Tensor:
    """An n-d array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward_fn if self.requires_grad else None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or not g.flags.owndata else g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):  # scalar fast path
        scalar = float(b)
        return Tensor(
            a.data * scalar, parents=(a,), backward_fn=lambda g: (g * scalar,)
        )
    out_data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        return (g * out_data,)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def square(x: Tensor) -> Tensor:
    out_data = x.data * x.data

    def backward(g):
        return (g * (2.0 * x.data),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def layer_norm(x: Tensor, axis: int = -1, eps: float = LAYER_NORM_EPS) -> Tensor:
    mean = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = centered * inv

    def backward(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gy_mean = (g * out_data).mean(axis=axis, keepdims=True)
        return (inv * (g - g_mean - out_data * gy_mean),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.shape[0]:
        raise IndexError(f"embedding ids out of range [0, {table.shape[0]})")
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(out_data, parents=(table,), backward_fn=backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return Tensor(out_data, parents=tuple(tensors), backward_fn=backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Fill positions where ``mask`` is true with ``value`` (constant)."""
    out_data = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)

    def backward(g):
        return (np.where(mask, 0.0, g),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def tmin(x: Tensor, axis: int) -> Tensor:
    """Minimum along one axis; the subgradient flows to the first argmin."""
    idx = np.expand_dims(x.data.argmin(axis=axis), axis)
    out_data = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def maximum(x: Tensor, value: float) -> Tensor:
    """Elementwise clamp from below; gradient passes where x > value."""
    out_data = np.maximum(x.data, value)

    def backward(g):
        return (g * (x.data > value),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def transpose(x: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    out_data = x.data.transpose(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out_data = np.broadcast_to(x.data, shape)

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn once from ``rng`` at call time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = 1.0 / (1.0 - rate)
    out_data = x.data * keep * scale

    def backward(g):
        return (g * keep * scale,)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def backward(loss: Tensor) -> None:
    """Populate .grad of every reachable requires_grad tensor.

    The tape is single-use: a second backward through the same graph raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("tape already consumed by a previous backward")

    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    loss._consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node is not loss and node._parents and node._consumed:
            raise RuntimeError("tape already consumed by a previous backward")
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if p.requires_grad and g is not None:
                p._accumulate(g)
        node._backward = None
        node._consumed = True
        if node._parents:
            node.grad = None  # free interior gradients as we go


def finite_difference(fn, tensor: Tensor, index, rel_step: float = 1e-5) -> float:
    """Central finite difference of scalar fn() w.r.t. one tensor entry."""
    w = tensor.data
    orig = w[index]
    h = rel_step * max(1.0, abs(float(orig)))
    w[index] = orig + h
    f_plus = fn().item()
    w[index] = orig - h
    f_minus = fn().item()
    w[index] = orig
    return (f_plus - f_minus) / (2.0 * h)


def gradcheck(
    fn,
    tensors: list[Tensor],
    max_entries_per_tensor: int = 8,
    rel_step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and finite-difference gradients.

    fn() must rebuild the graph from the given tensors and return the scalar
    loss. Relative error uses max(1, |analytic|, |numeric|) as denominator so
    exact-zero gradients are checked in absolute terms.
    """
    loss = fn()
    backward(loss)
    analytic = []
    for t in tensors:
        if t.grad is None:
            raise AssertionError("parameter received no gradient")
        analytic.append(t.grad.copy())
        t.zero_grad()

    rng = np.random.Generator(np.random.Philox(key=seed))
    worst = 0.0
    for t, grad in zip(tensors, analytic):
        total = t.data.size
        if total <= max_entries_per_tensor:
            flat_indices = np.arange(total)
        else:
            flat_indices = rng.choice(total, size=max_entries_per_tensor, replace=False)
        for flat in flat_indices:
            index = np.unravel_index(int(flat), t.shape)
            numeric = finite_difference(fn, t, index, rel_step)
            a = float(grad[index])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
