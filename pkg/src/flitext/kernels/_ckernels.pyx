# Compiled kernels for the conv/pool hot path. Accumulation runs in C double
# and is cast back to the input dtype, so float32 results stay accurate while
# remaining deterministic (fixed loop order).
import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused floating:
    float
    double

BACKEND = "compiled"


def conv1d_forward(floating[:, ::1] x, floating[:, :, ::1] w, floating[::1] b):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t k = w.shape[0], ch = w.shape[2]
    cdef Py_ssize_t t = n - k + 1
    cdef Py_ssize_t i, j, e, c
    cdef double xv
    out_np = np.zeros((t, ch), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    for i in range(t):
        for c in range(ch):
            out[i, c] = b[c]
    for i in range(t):
        for j in range(k):
            for e in range(d):
                xv = x[i + j, e]
                for c in range(ch):
                    out[i, c] += w[j, e, c] * xv
    if floating is float:
        return out_np.astype(np.float32)
    return out_np


def conv1d_backward(floating[:, ::1] x, floating[:, :, ::1] w, floating[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t k = w.shape[0], ch = w.shape[2]
    cdef Py_ssize_t t = g.shape[0]
    cdef Py_ssize_t i, j, e, c
    cdef double gv, xv, acc
    dx_np = np.zeros((n, d), dtype=np.float64)
    dw_np = np.zeros((k, d, ch), dtype=np.float64)
    db_np = np.zeros(ch, dtype=np.float64)
    cdef double[:, ::1] dx = dx_np
    cdef double[:, :, ::1] dw = dw_np
    cdef double[::1] db = db_np
    for i in range(t):
        for c in range(ch):
            db[c] += g[i, c]
    for i in range(t):
        for j in range(k):
            for e in range(d):
                xv = x[i + j, e]
                acc = 0.0
                for c in range(ch):
                    gv = g[i, c]
                    dw[j, e, c] += gv * xv
                    acc += gv * w[j, e, c]
                dx[i + j, e] += acc
    if floating is float:
        return (
            dx_np.astype(np.float32),
            dw_np.astype(np.float32),
            db_np.astype(np.float32),
        )
    return dx_np, dw_np, db_np


def maxpool_forward(floating[:, ::1] x):
    cdef Py_ssize_t t = x.shape[0], ch = x.shape[1]
    cdef Py_ssize_t i, c
    cdef floating best
    idx_np = np.zeros(ch, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = idx_np
    if floating is float:
        out_np = np.empty(ch, dtype=np.float32)
    else:
        out_np = np.empty(ch, dtype=np.float64)
    cdef floating[::1] out = out_np
    for c in range(ch):
        best = x[0, c]
        idx[c] = 0
        for i in range(1, t):
            if x[i, c] > best:
                best = x[i, c]
                idx[c] = i
        out[c] = best
    return out_np, idx_np


def maxpool_backward(cnp.int64_t[::1] idx, floating[::1] g, Py_ssize_t t):
    cdef Py_ssize_t ch = g.shape[0]
    cdef Py_ssize_t c
    if floating is float:
        dx_np = np.zeros((t, ch), dtype=np.float32)
    else:
        dx_np = np.zeros((t, ch), dtype=np.float64)
    cdef floating[:, ::1] dx = dx_np
    for c in range(ch):
        dx[idx[c], c] = g[c]
    return dx_np
