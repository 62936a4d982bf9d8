"""Minimal reverse-mode autodiff over numpy arrays."""
from .autograd import (Parameter, Tensor, as_tensor, backward, default_dtype, get_default_dtype,
                       grad_enabled, no_grad, set_default_dtype)
from .ops import (RunningStats, batch_norm, broadcast_to, concat, conv2d, conv3d, conv_transpose2d,
                  l1, leaky_relu, linear, max_pool, mean, mse, reduce_topk_max, relu, reshape, sigmoid,
                  straight_through, take, transpose)
from .optim import Adam, adam_step

__all__ = [
    "Tensor", "Parameter", "as_tensor", "backward", "default_dtype", "get_default_dtype",
    "set_default_dtype", "grad_enabled", "no_grad", "RunningStats", "batch_norm", "broadcast_to",
    "concat", "conv2d", "conv3d", "conv_transpose2d", "l1", "leaky_relu", "linear", "max_pool",
    "mean", "mse", "reduce_topk_max", "relu", "reshape", "sigmoid", "straight_through", "take",
    "transpose", "Adam", "adam_step",
]
