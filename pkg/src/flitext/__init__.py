"""Two-stage semi-supervised distillation for lightweight text classifiers.

A consistency-regularized transformer (the inspirer) is trained on scarce
labels plus unlabeled text, then frozen and distilled into a TextCNN target
through output matching, aligned feature matching, and consistency
regularization. Built on an in-package reverse-mode autodiff engine.
"""
from .autodiff import (AdamState, Graph, Tensor, adam_step, backward, count_flops,
                       default_dtype, dtype_mode, no_grad, set_default_dtype)
from .errors import (ConfigError, DataError, DimensionError, FlitextError,
                     NumericError, PreconditionError, UsageError)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Graph", "Tensor", "adam_step", "backward", "count_flops",
    "default_dtype", "dtype_mode", "no_grad", "set_default_dtype",
    "ConfigError", "DataError", "DimensionError", "FlitextError",
    "NumericError", "PreconditionError", "UsageError", "__version__",
]
