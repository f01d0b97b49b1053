from graphcnn.nn.checkpoint import load_checkpoint, save_checkpoint
from graphcnn.nn.functional import (
    cross_entropy,
    linear,
    max_pool_groups,
    relu,
    softmax_cross_entropy,
)
from graphcnn.nn.gradcheck import GradCheckResult, gradient_check
from graphcnn.nn.module import Module, uniform_init
from graphcnn.nn.optim import AdamState, NumericalError, adam_step
from graphcnn.nn.tensor import Parameter, Tensor

fully_connected = linear

__all__ = [
    "AdamState", "GradCheckResult", "Module", "NumericalError", "Parameter", "Tensor",
    "adam_step", "cross_entropy", "fully_connected", "gradient_check", "linear",
    "load_checkpoint", "max_pool_groups", "relu", "save_checkpoint",
    "softmax_cross_entropy", "uniform_init",
]
