from .optim import OptimizerState, adamw_step, cosine_lr
from .params import ParamStore
from .value import (
    Value,
    add,
    as_value,
    clamp,
    concat,
    cosine_matrix,
    cosine_rows,
    div,
    einsum,
    exp,
    gelu,
    grad_enabled,
    index,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    logsumexp,
    matmul,
    mean,
    mean_rows,
    mul,
    no_grad,
    reshape,
    row_softmax,
    sigmoid,
    softmax,
    sqrt,
    sub,
    take_rows,
    tanh,
    transpose,
    vsum,
)

__all__ = [
    "OptimizerState", "ParamStore", "Value", "adamw_step", "add", "as_value", "clamp", "concat",
    "cosine_lr", "cosine_matrix", "cosine_rows", "div", "einsum", "exp", "gelu", "grad_enabled",
    "index", "l2_normalize", "layer_norm", "log", "log_softmax", "logsumexp", "matmul", "mean",
    "mean_rows", "mul", "no_grad", "reshape", "row_softmax", "sigmoid", "softmax", "sqrt", "sub",
    "take_rows", "tanh", "transpose", "vsum",
]
