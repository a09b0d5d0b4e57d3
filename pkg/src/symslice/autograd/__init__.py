from .gradcheck import gradcheck
from .kernels import backend_name
from .ops import (
    add,
    add_scalar,
    concat,
    conv2d,
    gram,
    group_norm,
    l1_mean,
    mean_all,
    mul,
    narrow,
    permute,
    relu,
    reshape,
    scalar_mul,
    select,
    sigmoid,
    smallest_eigenvector,
    sub,
    sum_all,
    tanh,
)
from .tensor import Tensor, as_tensor

__all__ = [
    "Tensor",
    "as_tensor",
    "gradcheck",
    "backend_name",
    "add",
    "add_scalar",
    "concat",
    "conv2d",
    "gram",
    "group_norm",
    "l1_mean",
    "mean_all",
    "mul",
    "narrow",
    "permute",
    "relu",
    "reshape",
    "scalar_mul",
    "select",
    "sigmoid",
    "smallest_eigenvector",
    "sub",
    "sum_all",
    "tanh",
]
