from .tensor import (
    LAYERNORM_EPS,
    NonFiniteError,
    Tensor,
    add,
    avg_pool2d,
    backward,
    concat,
    conv1x1,
    div,
    dynamic_filter,
    gelu,
    grad_enabled,
    grid_resample,
    layernorm,
    matmul,
    mul,
    no_grad,
    pad,
    reduce_mean,
    reduce_sum,
    reshape,
    scalar_mul,
    set_check_finite,
    sigmoid,
    slice_,
    softmax,
    softplus,
    sqrt,
    sub,
    transpose,
    upsample_bilinear2d,
    upsample_nearest2d,
)
from .params import ParamStore
from .gradcheck import GradReport, check_function, check_params
