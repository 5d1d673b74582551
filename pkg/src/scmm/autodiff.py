"""Dense float64 tensors with reverse-mode automatic differentiation.

A small dynamic-tape engine: every operation stores its parent tensors and
a backward closure on its output, and ``backward`` replays the recorded
graph in reverse topological order. Tensors are immutable once produced by
an operation; a graph belongs to a single thread. All data is float64,
row-major, CPU-only.
"""
from __future__ import annotations

import numpy as np

from .backend import conv1d_op
from .errors import ContractError, DimensionError, DomainError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (forward values only)."""

    __slots__ = ("_prev",)

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _make(data, parents, backward):
    """Build an op output; skips all bookkeeping when grads are off."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and (parents[0].requires_grad or any(p.requires_grad for p in parents[1:])):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b):
    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    def bw(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(a.data / b.data, (a, b), bw)


def exp(a):
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return _make(out_data, (a,), bw)


def log(a):
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive value")

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw)


def _sigmoid_values(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out_data = _sigmoid_values(a.data)

    def bw(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), bw)


def relu(a):
    def bw(g):
        return (g * (a.data > 0.0),)

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def bias_relu(a, bias):
    """relu(a + bias[None, :, None]) for [B, Ch, L] activations, fused.

    One pass instead of reshape + broadcast add + relu; the hot path of
    every convolution stage.
    """
    out_data = np.maximum(a.data + bias.data[None, :, None], 0.0)

    def bw(g):
        ga = g * (out_data > 0.0)
        return ga, ga.sum(axis=(0, 2))

    return _make(out_data, (a, bias), bw)


def square(a):
    def bw(g):
        return (g * 2.0 * a.data,)

    return _make(a.data * a.data, (a,), bw)


def sqrt(a):
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative value")
    out_data = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bw)


def scale(a, factor):
    factor = float(factor)

    def bw(g):
        return (g * factor,)

    return _make(a.data * factor, (a,), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tensor_sum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(np.asarray(out_data), (a,), bw)


def tensor_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    old_shape = a.data.shape

    def bw(g):
        return (g.reshape(old_shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    inverse = np.argsort(axes)

    def bw(g):
        return (g.transpose(inverse),)

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def concat_rows(tensors):
    """Stack 2-D tensors along axis 0."""
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bw)


def slice_rows(a, start, stop):
    """Contiguous row range of a tensor along axis 0."""
    full_shape = a.data.shape

    def bw(g):
        out = np.zeros(full_shape)
        out[start:stop] = g
        return (out,)

    return _make(a.data[start:stop].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}"
        )

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw)


def conv1d(x, kernels, stride=1, padding=0):
    """Batched 1-D cross-correlation.

    x is [B, Cin, L], kernels is [Cout, Cin, K]; output is [B, Cout, L'] with
    L' = floor((L + 2*padding - K) / stride) + 1. No kernel flip.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 3:
        raise DimensionError(
            f"conv1d expects 3-D input and kernels, got {x.data.shape} and {kernels.data.shape}"
        )
    if x.data.shape[1] != kernels.data.shape[1]:
        raise DimensionError(
            f"conv1d channel mismatch: input {x.data.shape} vs kernels {kernels.data.shape}"
        )
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ContractError(f"conv1d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"conv1d padding must be >= 0, got {padding}")
    k = kernels.data.shape[2]
    length = x.data.shape[2]
    if k > length + 2 * padding:
        raise DimensionError(
            f"kernel size {k} exceeds padded input length {length + 2 * padding}"
        )

    if padding:
        b, cin, _ = x.data.shape
        x_pad = np.zeros((b, cin, length + 2 * padding))
        x_pad[:, :, padding:-padding] = x.data
    else:
        x_pad = np.ascontiguousarray(x.data)
    kern = np.ascontiguousarray(kernels.data)
    out_data, grad_fn = conv1d_op(x_pad, kern, stride)

    def bw(g):
        gx_pad, gk = grad_fn(g, x.requires_grad, kernels.requires_grad)
        if gx_pad is not None and padding:
            gx_pad = gx_pad[:, :, padding:-padding]
        return gx_pad, gk

    return _make(out_data, (x, kernels), bw)


# ---------------------------------------------------------------------------
# row-wise softmax family
# ---------------------------------------------------------------------------

def softmax_rows(logits):
    """Row-stochastic softmax of a 2-D tensor, max-subtracted for stability."""
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {logits.data.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise DomainError("softmax_rows requires finite inputs")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - inner),)

    return _make(probs, (logits,), bw)


def log_softmax_rows(logits):
    if logits.data.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a 2-D tensor, got {logits.data.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def bw(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _make(out_data, (logits,), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Repeated calls without zeroing accumulate. The loss must be scalar.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf tensor: fold into its persistent gradient buffer
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            existing = grads.get(pid)
            if existing is None:
                grads[pid] = pg.copy() if pg.base is not None or pg is g else pg
            else:
                existing += pg
