"""Parameters, a minimal module tree and the layers the architectures use."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter:
    """A trainable tensor plus its optimizer state.

    The SGD velocity and both Adam moments are allocated up front, zero
    filled and shaped like the value; the optimizers update them in place.
    """

    def __init__(self, data: np.ndarray, name: str = "") -> None:
        self.value = Tensor(np.ascontiguousarray(data, dtype=DEFAULT_DTYPE), requires_grad=True)
        self.velocity = np.zeros_like(self.value.data)
        self.moment1 = np.zeros_like(self.value.data)
        self.moment2 = np.zeros_like(self.value.data)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @data.setter
    def data(self, array: np.ndarray) -> None:
        array = np.asarray(array)
        if array.shape != self.value.shape:
            raise ValueError(f"parameter {self.name!r}: shape {array.shape} != {self.value.shape}")
        self.value.data = np.ascontiguousarray(array, dtype=self.value.dtype)

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    @grad.setter
    def grad(self, g: Optional[np.ndarray]) -> None:
        self.value.grad = g

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.data.size

    def astype(self, dtype) -> None:
        self.value.data = self.value.data.astype(dtype)
        self.value.grad = None
        for attr in ("velocity", "moment1", "moment2"):
            setattr(self, attr, getattr(self, attr).astype(dtype))

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Module:
    """Base class: submodules and parameters are discovered from attributes.

    Attribute insertion order defines the parameter naming order, which keeps
    initialization and checkpoint layout deterministic.
    """

    training: bool = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(prefix + name + ".")

    def parameters(self) -> dict[str, Parameter]:
        params = {}
        for name, p in self.named_parameters():
            p.name = name
            params[name] = p
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = np.zeros_like(p.data)

    def astype(self, dtype) -> "Module":
        """Convert parameters and buffers in place (used for float64 gradient checks)."""
        for _, p in self.named_parameters():
            p.astype(dtype)
        for m in self.modules():
            for name in getattr(m, "_buffers", ()):
                setattr(m, name, getattr(m, name).astype(dtype))
        return self


def kaiming_uniform(shape: tuple, fan_in: float, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DEFAULT_DTYPE)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (c_out, c_in, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(shape, c_in * kernel_size**2, rng))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        bias = self.bias.value if self.bias is not None else None
        return F.conv2d(x, self.weight.value, bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel_size: int = 2,
        stride: int = 2,
        padding: int = 0,
        bias: bool = True,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (c_in, c_out, kernel_size, kernel_size)
        # each output pixel sees c_in * (k / stride)^2 taps
        fan_in = max(c_in * kernel_size**2 / stride**2, 1.0)
        self.weight = Parameter(kaiming_uniform(shape, fan_in, rng))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        bias = self.bias.value if self.bias is not None else None
        return F.transposed_conv2d(x, self.weight.value, bias, self.stride, self.padding)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=DEFAULT_DTYPE)
        self.running_var = np.ones(channels, dtype=DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.gamma.value,
            self.beta.value,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )


class ConvBlock(Module):
    """Conv -> (batch norm) -> activation. The conv drops its bias when normalized."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        norm: bool = True,
        act: str = "relu",
    ) -> None:
        self.conv = Conv2d(c_in, c_out, kernel_size, stride, padding, bias=not norm, rng=rng)
        self.norm = BatchNorm2d(c_out) if norm else None
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return F.activation(x, self.act)
