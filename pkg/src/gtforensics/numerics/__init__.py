from .autodiff import (
    LOG_CLAMP,
    NumericError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clamp_min,
    concat,
    cross_entropy_rows,
    exact_mode,
    exact_reductions,
    exp,
    gelu,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    relu,
    reshape,
    soft_cross_entropy,
    softmax,
    softmax_rows,
    sqrt,
    transpose,
    tsum,
)
from .gradcheck import GradCheckReport, GradientContext, finite_diff_check, numeric_grad, value_and_grad

__all__ = [
    "LOG_CLAMP", "NumericError", "ShapeError", "Tensor", "add", "as_tensor", "broadcast_to",
    "clamp_min", "concat", "cross_entropy_rows", "exact_mode", "exact_reductions", "exp", "gelu",
    "layer_norm", "log", "log_softmax", "matmul", "mean", "relu", "reshape", "soft_cross_entropy",
    "softmax", "softmax_rows", "sqrt", "transpose", "tsum", "GradCheckReport", "GradientContext",
    "finite_diff_check", "numeric_grad", "value_and_grad",
]
