"""Central finite-difference gradient verification.

Relative error is max_i |a_i - n_i| / max(1, max|a|, max|n|) over all checked
tensors, where a is the tape gradient and n the central-difference estimate.
Expected bounds: <= 1e-3 in float32 mode, <= 1e-6 in float64 mode.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def numeric_gradient(fn, t, h_base=None):
    """Central differences of scalar fn() w.r.t. tensor t, perturbing t.data."""
    if h_base is None:
        h_base = float(np.cbrt(np.finfo(t.data.dtype).eps))
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with ad.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            h = h_base * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric):
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradcheck(fn, tensors, zero_first=True):
    """Return the worst relative error of tape grads vs central differences.

    fn rebuilds its computation from `tensors` on every call and returns a
    scalar Tensor; it must be deterministic across calls (seeded internally).
    """
    if zero_first:
        for t in tensors:
            t.grad = None
    loss = fn()
    ad.backward(loss)
    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_gradient(fn, t)
        worst = max(worst, max_rel_error(analytic.astype(np.float64), numeric))
    for t in tensors:
        t.grad = None
    return worst
