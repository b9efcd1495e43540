"""Numpy fallback kernels for the conv/pool hot path.

Same contracts as the compiled core in ``_ckernels.pyx``: valid (no padding)
1-D convolution over a token-embedding matrix, and max-over-time pooling with
first-occurrence argmax.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def conv1d_forward(x, w, b):
    """x: [n, d], w: [k, d, ch], b: [ch] -> [n-k+1, ch]."""
    k, d, ch = w.shape
    t = x.shape[0] - k + 1
    # windows: [t, d, k] -> [t, k, d] -> [t, k*d]
    win = sliding_window_view(x, k, axis=0).transpose(0, 2, 1).reshape(t, k * d)
    return win @ w.reshape(k * d, ch) + b


def conv1d_backward(x, w, g):
    """Gradients of conv1d_forward; g: [t, ch] -> (dx, dw, db)."""
    k, d, ch = w.shape
    t = g.shape[0]
    win = sliding_window_view(x, k, axis=0).transpose(0, 2, 1).reshape(t, k * d)
    dw = (win.T @ g).reshape(k, d, ch)
    db = g.sum(axis=0)
    dwin = (g @ w.reshape(k * d, ch).T).reshape(t, k, d)
    dx = np.zeros_like(x)
    for j in range(k):
        dx[j : j + t] += dwin[:, j, :]
    return dx, dw, db


def maxpool_forward(x):
    """x: [t, ch] -> (pooled [ch], argmax indices [ch], first occurrence wins)."""
    idx = np.argmax(x, axis=0)
    return x[idx, np.arange(x.shape[1])], idx


def maxpool_backward(idx, g, t):
    """Route g [ch] back to the argmax positions of a [t, ch] map."""
    dx = np.zeros((t, g.shape[0]), dtype=g.dtype)
    dx[idx, np.arange(g.shape[0])] = g
    return dx
