from .tensor import Function, Tensor, as_tensor, debug_mode, is_debug, no_grad, set_debug
from . import ops
from .ops import (
    abs,
    add,
    avg_pool2x,
    batchnorm2d,
    clamp_min,
    conv2d,
    depthwise_conv2d,
    dft2d,
    div,
    fully_connected,
    global_avg_pool,
    mean,
    mul,
    pointwise_conv2d,
    pow_scalar,
    relu,
    reshape,
    scalar_mul,
    separable_filter_valid,
    sigmoid,
    square,
    sub,
    sum,
    upsample_nearest2x,
)
from .serialize import load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes

__all__ = [
    "Function",
    "Tensor",
    "as_tensor",
    "debug_mode",
    "is_debug",
    "no_grad",
    "set_debug",
    "ops",
    "abs",
    "add",
    "avg_pool2x",
    "batchnorm2d",
    "clamp_min",
    "conv2d",
    "depthwise_conv2d",
    "dft2d",
    "div",
    "fully_connected",
    "global_avg_pool",
    "mean",
    "mul",
    "pointwise_conv2d",
    "pow_scalar",
    "relu",
    "reshape",
    "scalar_mul",
    "separable_filter_valid",
    "sigmoid",
    "square",
    "sub",
    "sum",
    "upsample_nearest2x",
    "load_tensor",
    "save_tensor",
    "tensor_from_bytes",
    "tensor_to_bytes",
]
