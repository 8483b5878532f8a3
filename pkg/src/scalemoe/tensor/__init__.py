"""Minimal dense tensor core with reverse-mode differentiation."""

from . import mmt, ops
from .core import DTYPE, Function, Graph, Tensor, as_tensor, backward, is_grad_enabled, no_grad
from .ops import (
    batch_norm2d,
    bilinear_resize,
    concat,
    conv2d,
    cosine_similarity_matrix,
    cross_entropy,
    gather_rows,
    l2_normalize,
    log_softmax,
    matmul,
    mean,
    relu,
    reshape,
    softmax,
    take,
    transpose,
)

__all__ = [
    "DTYPE",
    "Function",
    "Graph",
    "Tensor",
    "as_tensor",
    "backward",
    "batch_norm2d",
    "bilinear_resize",
    "concat",
    "conv2d",
    "cosine_similarity_matrix",
    "cross_entropy",
    "gather_rows",
    "is_grad_enabled",
    "l2_normalize",
    "log_softmax",
    "matmul",
    "mean",
    "mmt",
    "no_grad",
    "ops",
    "relu",
    "reshape",
    "softmax",
    "take",
    "transpose",
]
