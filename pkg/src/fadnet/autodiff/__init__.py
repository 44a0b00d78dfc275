"""Minimal float64 tensor engine with reverse-mode differentiation."""

from .functional import (
    bilinear_matrix,
    concat_channels,
    conv2d,
    conv_transpose2d,
    conv_transpose2d_or_upsample,
    group_norm,
    slice_channels,
    upsample,
    upsample_bilinear,
)
from .gradcheck import GradcheckReport, gradcheck
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    atan2,
    backward,
    broadcast_to,
    clip,
    concat,
    cos,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    mean,
    mul,
    neg,
    no_grad,
    parameter,
    pointwise,
    power,
    relu,
    reshape,
    sigmoid,
    sin,
    sqrt,
    stack,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
)
