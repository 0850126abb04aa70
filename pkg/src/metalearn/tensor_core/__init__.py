"""Reverse-mode autodiff with second-order support, plus the primitives the learners need."""
from .tensor import (
    ContractError,
    GradMap,
    NumericError,
    Tensor,
    as_tensor,
    enable_grad,
    grad,
    is_grad_enabled,
    no_grad,
)
from .ops import (
    PRIMITIVES,
    accuracy,
    add,
    exp,
    l2_normalize,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    softmax,
    softmax_cross_entropy,
    sq_euclidean,
    sub,
    tanh,
)
from .gradcheck import finite_difference_grad, max_relative_error, relative_error, run_gradcheck_suite

__all__ = [
    "ContractError", "GradMap", "NumericError", "Tensor", "as_tensor", "enable_grad", "grad",
    "is_grad_enabled", "no_grad", "PRIMITIVES", "accuracy", "add", "exp", "l2_normalize",
    "layer_norm", "log", "matmul", "mean", "mul", "softmax", "softmax_cross_entropy",
    "sq_euclidean", "sub", "tanh", "finite_difference_grad", "max_relative_error",
    "relative_error", "run_gradcheck_suite",
]
