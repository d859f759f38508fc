"""Minimal dense-tensor substrate: reverse-mode autodiff, conv ops, AdamW."""

from .conv import (
    conv2d,
    conv_transpose2d,
    resize_bilinear,
    resize_bilinear_np,
    resize_nearest_np,
    resize_weights,
)
from .optim import OptimizerConfig, Parameter, adamw_update, clip_grad_norm, lr_at
from .tensor import (
    ContractError,
    NumericError,
    Tensor,
    add,
    as_tensor,
    concat,
    exp,
    gelu,
    index,
    l2_normalize,
    layernorm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    power,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    set_nan_checks,
    softmax,
    stop_gradient,
    take,
    take_along_last,
    tanh,
    transpose,
)

__all__ = [
    "ContractError",
    "NumericError",
    "OptimizerConfig",
    "Parameter",
    "Tensor",
    "adamw_update",
    "add",
    "as_tensor",
    "clip_grad_norm",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "exp",
    "gelu",
    "index",
    "l2_normalize",
    "layernorm",
    "log",
    "log_softmax",
    "lr_at",
    "matmul",
    "mul",
    "no_grad",
    "power",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "resize_bilinear",
    "resize_bilinear_np",
    "resize_nearest_np",
    "resize_weights",
    "set_nan_checks",
    "softmax",
    "stop_gradient",
    "take",
    "take_along_last",
    "tanh",
    "transpose",
]
