"""
Parameters and layer containers built on the compute ops
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from mttrack.compute import ops
from mttrack.compute.tensor import Tensor
from mttrack.core.exceptions import DimensionError


class Parameter(Tensor):
    """Learnable tensor; the only kind of tensor an optimizer updates"""

    def __init__(self, data, name: Optional[str] = None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    """uniform(-k, k) with k = 1/sqrt(fan_in)"""
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape).astype(dtype)


class Module:
    """Container that discovers Parameters and sub-Modules from its attributes"""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for name, param in self._walk(prefix):
            if id(param) in seen:
                continue
            seen.add(id(param))
            yield name, param

    def _walk(self, prefix: str) -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{attr}", value
            elif isinstance(value, Module):
                yield from value._walk(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{prefix}{attr}.{i}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self) -> None:
        for name, param in self.named_parameters():
            param.name = name

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DimensionError(
                user_message="Parameter names do not match the model.",
                details={"missing": missing, "unexpected": unexpected},
            )
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise DimensionError(
                    user_message=f"Parameter '{name}' has shape {value.shape}, model expects {param.shape}.",
                    details={"name": name},
                )
            param.data = np.ascontiguousarray(value.astype(param.dtype))
            param.grad = None


class Linear(Module):
    """y = x @ W + b with W stored as [in, out]; bias starts at zero"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                user_message=f"Linear expects last dim {self.in_features}, got shape {x.shape}.",
                details={"in_features": self.in_features, "shape": list(x.shape)},
            )
        vector = x.ndim == 1
        if vector:
            x = x.reshape(1, self.in_features)
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(self.out_features) if vector else y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dtype=np.float32,
    ):
        fan_in = kernel_size * kernel_size * in_channels
        self.weight = Parameter(uniform_init(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
