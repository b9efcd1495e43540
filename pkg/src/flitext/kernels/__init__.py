"""Kernel backend selection.

Prefers the compiled Cython core; falls back to the numpy implementation when
the extension is missing or when FLITEXT_KERNELS=numpy is set. Both expose the
same four functions (conv1d_forward/backward, maxpool_forward/backward).
"""
import os

from . import _numpy

if os.environ.get("FLITEXT_KERNELS", "") == "numpy":
    _impl = _numpy
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _numpy

BACKEND = _impl.BACKEND
conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
