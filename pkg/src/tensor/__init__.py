from src.tensor.conv import ConvSpec, axial_depthwise, conv2d, pointwise
from src.tensor.core import Gradients, Node, Tensor, backward, grad_enabled, no_grad
from src.tensor.gradcheck import grad_check
from src.tensor.ops import (
    activation,
    add,
    add_scalar,
    clamp,
    concat_channels,
    div,
    downsample_max2,
    global_avg_pool,
    interpolation_matrix,
    mean,
    mul,
    reshape,
    scale,
    slice_channels,
    sqrt,
    square,
    sub,
    sum_all,
    unary,
    upsample_bilinear2,
    wrap_angle,
)
from src.tensor.parallel import get_num_threads, set_num_threads

__all__ = [
    "ConvSpec",
    "Gradients",
    "Node",
    "Tensor",
    "activation",
    "add",
    "add_scalar",
    "axial_depthwise",
    "backward",
    "clamp",
    "concat_channels",
    "conv2d",
    "div",
    "downsample_max2",
    "get_num_threads",
    "global_avg_pool",
    "grad_check",
    "grad_enabled",
    "interpolation_matrix",
    "mean",
    "mul",
    "no_grad",
    "pointwise",
    "reshape",
    "scale",
    "set_num_threads",
    "slice_channels",
    "sqrt",
    "square",
    "sub",
    "sum_all",
    "unary",
    "upsample_bilinear2",
    "wrap_angle",
]
