from .tensor import (
    Tensor,
    tensor,
    add,
    sub,
    mul,
    div,
    concat,
    conv2d,
    matmul,
    relu,
    tanh,
    sin,
    cos,
    exp,
    log,
    abs_,
    square,
    softplus,
    sigmoid,
    mean,
    sum_,
    reshape,
    upsample_nearest2,
)
from .optim import AdamW, cosine_lr

__all__ = [
    "add",
    "sub",
    "mul",
    "div",
    "Tensor",
    "tensor",
    "concat",
    "conv2d",
    "matmul",
    "relu",
    "tanh",
    "sin",
    "cos",
    "exp",
    "log",
    "abs_",
    "square",
    "softplus",
    "sigmoid",
    "mean",
    "sum_",
    "reshape",
    "upsample_nearest2",
    "AdamW",
    "cosine_lr",
]
