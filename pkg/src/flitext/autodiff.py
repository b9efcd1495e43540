"""Dense-tensor engine with tape-based reverse-mode automatic differentiation.

Tensors are numpy arrays (float32 by default; a process-wide float64 mode is
available for tight gradient verification). Every differentiable op appends a
node to the active per-thread graph; ``backward`` replays the tape in exact
reverse insertion order and accumulates gradients additively across fan-out,
then consumes the graph. All reductions run in numpy's fixed row-major order,
so identical inputs give bitwise-identical results on one platform.
"""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError, UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}


class Node:
    """One recorded operation: kind, inputs, output, and its backward rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Insertion-ordered tape of Nodes; acyclic because ids only grow."""

    def __init__(self):
        self.nodes = []


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.graph = Graph()
        self.flop_counter = None


_state = _State()
_ids = itertools.count()


def default_dtype():
    return _state.dtype


def set_default_dtype(dtype):
    """Set the dtype for newly created tensors: 'float32' or 'float64'."""
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ConfigError(f"unknown dtype {dtype!r}; use 'float32' or 'float64'")
        dtype = _DTYPES[dtype]
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def dtype_mode(dtype):
    """Temporarily switch the default dtype (e.g. float64 verification mode)."""
    prev = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def current_graph():
    return _state.graph


def grad_enabled():
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class FlopCounter:
    """Counts multiply-adds as 2 flops for matmul/conv ops while active."""

    def __init__(self):
        self.total = 0


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    prev = _state.flop_counter
    _state.flop_counter = counter
    try:
        yield counter
    finally:
        _state.flop_counter = prev


def _add_flops(n):
    if _state.flop_counter is not None:
        _state.flop_counter.total += int(n)


class Tensor:
    """Dense float tensor participating in the reverse-mode graph."""

    __slots__ = ("data", "requires_grad", "grad", "id")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _state.dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Same values, cut from the graph (no gradient flows through)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.id = next(_ids)
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_state.dtype))


def _record(op, inputs, out_data, backward_fn):
    req = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, dtype=out_data.dtype)
    if req:
        _state.graph.nodes.append(Node(op, inputs, out, backward_fn))
    return out


def backward(loss):
    """Populate grads of every reachable requires_grad tensor; consume the graph.

    Visits nodes in exact reverse insertion order, accumulating additively
    across fan-out, which makes gradient accumulation deterministic.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward root must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward root does not require grad; nothing was recorded")
    nodes = _state.graph.nodes
    loss.grad = np.ones_like(loss.data)
    for node in reversed(nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += gi
    nodes.clear()


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", (a, b), out, bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", (a, b), out, bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record("mul", (a, b), out, bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        return (-g,)

    return _record("neg", (a,), -a.data, bwd)


def square(a):
    return mul(a, a)


def matmul(a, b):
    """Matrix product; `a` may be a vector [k] or matrix [m,k], `b` is [k,n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    m = 1 if a.ndim == 1 else a.data.shape[0]
    _add_flops(2 * m * b.data.shape[0] * b.data.shape[1])
    out = a.data @ b.data

    def bwd(g):
        if a.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _record("matmul", (a, b), out, bwd)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.data.shape}")

    def bwd(g):
        return (g.T,)

    return _record("transpose", (a,), a.data.T.copy(), bwd)


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _record("relu", (a,), out, bwd)


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1 - out * out),)

    return _record("tanh", (a,), out, bwd)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _record("exp", (a,), out, bwd)


def log(a):
    a = _as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _record("log", (a,), out, bwd)


def clip_min(a, floor):
    """max(a, floor) elementwise; gradient is zero where the floor binds."""
    a = _as_tensor(a)
    out = np.maximum(a.data, floor)

    def bwd(g):
        return (g * (a.data > floor),)

    return _record("clip_min", (a,), out, bwd)


def tsum(a, axis=None):
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _record("sum", (a,), out, bwd)


def tmean(a, axis=None):
    a = _as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis))
    n = a.data.size if axis is None else a.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy(),)

    return _record("mean", (a,), out, bwd)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(a, axis=-1):
    """Numerically stabilized softmax along `axis`; rows sum to 1."""
    a = _as_tensor(a)
    if not np.isfinite(a.data).all():
        raise NumericError("softmax input is not finite")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", (a,), out, bwd)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    if not np.isfinite(a.data).all():
        raise NumericError("log_softmax input is not finite")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (a,), out, bwd)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def stack(tensors):
    """Stack same-shape tensors along a new leading axis."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of zero tensors")
    out = np.stack([t.data for t in ts])

    def bwd(g):
        return tuple(g[i] for i in range(len(ts)))

    return _record("stack", tuple(ts), out, bwd)


def concat(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(ts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record("concat", tuple(ts), out, bwd)


def row(a, i):
    """Select row i of a matrix (e.g. the classification-token position)."""
    a = _as_tensor(a)

    def bwd(g):
        da = np.zeros_like(a.data)
        da[i] = g
        return (da,)

    return _record("row", (a,), a.data[i].copy(), bwd)


def slice_cols(a, start, stop):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got shape {a.data.shape}")

    def bwd(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return (da,)

    return _record("slice_cols", (a,), a.data[:, start:stop].copy(), bwd)


# ---------------------------------------------------------------------------
# nn primitives
# ---------------------------------------------------------------------------

def embedding_lookup(table, ids):
    """Gather rows of `table` [V, d] by integer ids -> [n, d]."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError(f"embedding ids must be 1-D, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DataError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out = table.data[ids]

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _record("embedding_lookup", (table,), out, bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes) if axes else g * xhat
        dbias = g.sum(axis=axes) if axes else g
        return dx, dgain, dbias

    return _record("layer_norm", (x, gain, bias), out, bwd)


def dropout(x, rate, rng):
    """Inverted dropout: seeded Bernoulli mask scaled by 1/(1-rate). Train only."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = x.data * keep

    def bwd(g):
        return (g * keep,)

    return _record("dropout", (x,), out, bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """Per-parameter first/second moment buffers plus the shared step count."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction, in-place on `params` values.

    `params` is a name->Tensor mapping; parameters whose grad is None are
    skipped (their moments stay zero, so skipping is an exact no-op).
    Deterministic: iterates in mapping order.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def zero_grads(params):
    for p in params.values():
        p.grad = None
