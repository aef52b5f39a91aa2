"""
Autodiff Package
Dense numpy tensors with reverse-mode differentiation, layers and optimizers
"""

from .functional import channel_shuffle, conv2d, layer_norm, linear, log_softmax, reduce_mean_pool, softmax
from .gradcheck import check_gradients, finite_diff_grad, relative_error
from .nn import Conv2d, LayerNorm, Linear, Module, Parameter
from .optim import Adam, ReduceLROnPlateau, clip_grad_norm
from .tensor import (
    Tensor,
    clip,
    concatenate,
    debug_checks_enabled,
    flip,
    maximum,
    minimum,
    no_grad,
    set_debug_checks,
    split,
)

__all__ = [
    "Tensor",
    "no_grad",
    "set_debug_checks",
    "debug_checks_enabled",
    "concatenate",
    "split",
    "flip",
    "clip",
    "maximum",
    "minimum",
    "conv2d",
    "channel_shuffle",
    "reduce_mean_pool",
    "softmax",
    "log_softmax",
    "layer_norm",
    "linear",
    "finite_diff_grad",
    "check_gradients",
    "relative_error",
    "Module",
    "Parameter",
    "Conv2d",
    "Linear",
    "LayerNorm",
    "Adam",
    "ReduceLROnPlateau",
    "clip_grad_norm",
]
