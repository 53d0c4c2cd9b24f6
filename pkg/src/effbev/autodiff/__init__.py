from . import functional
from .checkpoint import read_checkpoint, save_checkpoint, load_into
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Parameter, count_parameters
from .optim import AdamW, PolynomialLR
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    matmul,
    no_grad,
    stack,
    tape,
    where,
)

__all__ = [
    "AdamW", "BatchNorm2d", "Conv2d", "LayerNorm", "Linear", "Module", "Parameter",
    "PolynomialLR", "Tensor", "as_tensor", "concat", "count_parameters", "default_dtype",
    "functional", "get_default_dtype", "is_grad_enabled", "load_into", "matmul", "no_grad",
    "read_checkpoint", "save_checkpoint", "stack", "tape", "where",
]
