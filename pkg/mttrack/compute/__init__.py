from mttrack.compute.tensor import Tensor, no_grad, is_grad_enabled
from mttrack.compute.nn import Parameter, Module, Linear, LayerNorm, Conv2d
from mttrack.compute.gradcheck import grad_check

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "Parameter",
    "Module",
    "Linear",
    "LayerNorm",
    "Conv2d",
    "grad_check",
]
