"""
Parameters, modules and the layers the detector and policy are assembled from
"""

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import ContractError, DimensionError

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor"""

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(np.array(data, copy=True), requires_grad=requires_grad)


def uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype=np.float64) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class: parameters and submodules are discovered from attributes in definition order"""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        seen = set()
        result: List[Tuple[str, Parameter]] = []
        self._collect(prefix, seen, result)
        return result

    def _collect(self, prefix: str, seen: set, result: List[Tuple[str, Parameter]]) -> None:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    result.append((full, value))
            else:
                value._collect(f"{full}.", seen, result)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if strict and (missing or unexpected):
            raise ContractError(f"state dict mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, array in state.items():
            if name not in own:
                continue
            param = own[name]
            if tuple(array.shape) != param.shape:
                raise DimensionError(f"parameter {name}: expected shape {param.shape}, got {tuple(array.shape)}")
            param.data = np.array(array, dtype=array.dtype, copy=True)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size,
        rng: np.random.Generator,
        stride: int = 1,
        padding=0,
        groups: int = 1,
        bias: bool = True,
    ):
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = (kh, kw)
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kh * kw
        self.weight = Parameter(uniform_fan_in(rng, (out_channels, in_channels // groups, kh, kw), fan_in))
        self.bias = Parameter(uniform_fan_in(rng, (out_channels,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_fan_in(rng, (out_features, in_features), in_features))
        self.bias = Parameter(uniform_fan_in(rng, (out_features,), in_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, axis: int = 1, eps: float = 1e-5):
        self.axis = axis
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, axis=self.axis, eps=self.eps)


def set_parameter(module: Module, name: str, value: np.ndarray) -> None:
    """Overwrite one named parameter in place (tests and checkpoint surgery)"""
    params = dict(module.named_parameters())
    if name not in params:
        raise ContractError(f"unknown parameter {name}")
    target: Optional[Parameter] = params[name]
    if tuple(np.shape(value)) != target.shape:
        raise DimensionError(f"parameter {name}: expected shape {target.shape}, got {np.shape(value)}")
    target.data = np.array(value, dtype=target.dtype, copy=True)
