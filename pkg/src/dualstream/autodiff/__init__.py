"""Minimal reverse-mode autodiff: exactly the operators the embedder and heads use."""

from .ops import (
    BatchNormState,
    abs_diff,
    batch_norm,
    batch_norm_max_pool,
    bce_with_logits,
    concat,
    conv1d,
    conv_spatial,
    dropout,
    flatten,
    linear,
    max_pool1d,
    permute,
    relu,
    reshape,
    take_rows,
)
from .optim import OptimizerState, adam_step
from .tensor import ShapeError, Tensor
