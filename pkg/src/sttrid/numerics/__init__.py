"""Double-precision reverse-mode differentiation core."""
from .gradcheck import finite_difference_check, relative_error
from .module import BatchNorm, Linear, Module, kaiming_uniform, param_rng
from .ops import (
    add, batch_norm, concat, cross_entropy, div, dropout, einsum, l2_normalize, linear,
    log_softmax_rows, matmul, mean, mul, relu, reshape, scaled_dot_attention, softmax_rows, sub, sum,
    temporal_conv, transpose,
)
from .optim import (
    OptimizerState, adam, adam_step, lr_schedule, optimizer_step, sgd_momentum,
    sgd_momentum_step,
)
from .tensor import ContractError, Parameter, ShapeError, Tape, Tensor, as_tensor, backward, record

__all__ = [
    "BatchNorm", "ContractError", "Linear", "Module", "OptimizerState", "Parameter",
    "ShapeError", "Tape", "Tensor", "adam", "adam_step", "add", "as_tensor", "backward",
    "batch_norm", "concat", "cross_entropy", "div", "dropout", "einsum",
    "finite_difference_check", "kaiming_uniform", "l2_normalize", "linear",
    "log_softmax_rows", "lr_schedule", "matmul", "mean", "mul", "optimizer_step",
    "param_rng", "record", "relative_error", "relu", "reshape", "sgd_momentum",
    "scaled_dot_attention", "sgd_momentum_step", "softmax_rows", "sub", "sum", "temporal_conv", "transpose",
]
