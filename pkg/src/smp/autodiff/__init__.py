from .nn import MLP, copy_values, soft_update
from .optim import Adam, AdamState, adam_step
from .tensor import (Tape, Tensor, add, affine, backward, concat, gather_rows, matmul, mean, mul,
                     normalize_rows, relu, reshape, scalar_mul, slice_, square, sum_, tanh)

__all__ = [
    "MLP", "Adam", "AdamState", "Tape", "Tensor", "adam_step", "add", "affine", "backward", "concat",
    "copy_values", "gather_rows", "matmul", "mean", "mul", "normalize_rows", "relu", "reshape",
    "scalar_mul", "slice_", "soft_update", "square", "sum_", "tanh",
]
