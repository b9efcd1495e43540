"""Network building blocks on top of the autodiff primitives.

conv1d/maxpool dispatch to the selected kernel backend (compiled or numpy);
the attention block is composed from engine primitives so its backward comes
from the tape.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from .autodiff import (
    Tensor,
    _add_flops,
    _as_tensor,
    _record,
    add,
    concat,
    dropout,
    layer_norm,
    matmul,
    relu,
    slice_cols,
    softmax,
    transpose,
)
from .errors import ConfigError, DimensionError, PreconditionError


def conv1d(x, w, b):
    """Valid (no padding) 1-D convolution over a token-embedding matrix.

    x: [n, d], w: [k, d, ch], b: [ch] -> feature map [(n-k+1), ch] where
    map[i, c] = b[c] + sum over the k-window of w * x. Padding is the data
    module's job; sequences shorter than k are a caller error.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise DimensionError(f"conv1d: incompatible shapes x={x.data.shape}, w={w.data.shape}")
    n, d = x.data.shape
    k, _, ch = w.data.shape
    if n < k:
        raise PreconditionError(
            f"sequence length {n} is shorter than filter size {k}; pad inputs upstream"
        )
    _add_flops(2 * k * d * ch * (n - k + 1))
    out = kernels.conv1d_forward(x.data, w.data, b.data)

    def bwd(g):
        dx, dw, db = kernels.conv1d_backward(x.data, w.data, np.ascontiguousarray(g))
        return dx, dw, db

    return _record("conv1d", (x, w, b), out, bwd)


def conv1d_bank(x, filters):
    """Apply one conv1d per filter size; filters maps size k -> (w, b).

    Returns {k: feature map [(n-k+1), ch]}. The sequence must be at least as
    long as the largest filter.
    """
    sizes = sorted(filters)
    n = _as_tensor(x).data.shape[0]
    if sizes and n < max(sizes):
        raise PreconditionError(
            f"sequence length {n} is shorter than the largest filter size "
            f"{max(sizes)}; pad inputs upstream"
        )
    return {k: conv1d(x, filters[k][0], filters[k][1]) for k in sizes}


def maxpool_over_time(x):
    """Per-channel max over the time axis: [t, ch] -> [ch].

    Gradient is routed to the first-occurring argmax position (ties break to
    the lowest time index).
    """
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"maxpool_over_time expects [t, ch], got shape {x.data.shape}")
    t = x.data.shape[0]
    if t < 1:
        raise PreconditionError("maxpool_over_time on an empty time axis")
    out, idx = kernels.maxpool_forward(np.ascontiguousarray(x.data))

    def bwd(g):
        return (kernels.maxpool_backward(idx, np.ascontiguousarray(g), t),)

    return _record("maxpool_over_time", (x,), out, bwd)


def linear(x, w, b):
    """x @ w + b."""
    return add(matmul(x, w), b)


def multi_head_attention(x, p, heads):
    """Scaled dot-product self-attention sublayer output (before residual).

    x: [n, d]; p is a mapping with wq/bq, wk/bk, wv/bv, wo/bo. With zero
    query/key projections the softmax weights are uniform, so each output row
    is the mean of the value rows.
    """
    x = _as_tensor(x)
    n, d = x.data.shape
    if d % heads != 0:
        raise ConfigError(f"hidden size {d} not divisible by {heads} heads")
    dh = d // heads
    q = linear(x, p["wq"], p["bq"])
    k = linear(x, p["wk"], p["bk"])
    v = linear(x, p["wv"], p["bv"])
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        qh = slice_cols(q, h * dh, (h + 1) * dh)
        kh = slice_cols(k, h * dh, (h + 1) * dh)
        vh = slice_cols(v, h * dh, (h + 1) * dh)
        scores = matmul(qh, transpose(kh)) * scale
        weights = softmax(scores, axis=-1)
        outs.append(matmul(weights, vh))
    merged = outs[0] if heads == 1 else concat(outs, axis=1)
    return linear(merged, p["wo"], p["bo"])


def attention_block(x, p, heads, dropout_rate=0.0, train=False, rng=None):
    """One post-norm transformer encoder layer.

    Multi-head self-attention + residual + layer norm, then a position-wise
    feed-forward (relu) + residual + layer norm. Dropout (train mode only)
    hits the two sublayer outputs, not the attention probabilities.
    """
    attn = multi_head_attention(x, p, heads)
    if train and dropout_rate > 0.0:
        attn = dropout(attn, dropout_rate, rng)
    x1 = layer_norm(add(x, attn), p["ln1_g"], p["ln1_b"])
    ff = linear(relu(linear(x1, p["w1"], p["b1"])), p["w2"], p["b2"])
    if train and dropout_rate > 0.0:
        ff = dropout(ff, dropout_rate, rng)
    return layer_norm(add(x1, ff), p["ln2_g"], p["ln2_b"])
