"""Parameter containers and the small set of layers the two GANs are built from."""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from . import ops
from .autograd import Parameter, Tensor, get_default_dtype


class Module:
    """Base container; parameters and submodules are discovered from attributes.

    Discovery walks ``vars(self)`` in insertion order, so parameter names and
    ordering are stable across runs.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{key}.{i}", item

    def named_state(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        """Every parameter and persistent buffer, with dotted path names."""
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_state(prefix=name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_state() if p.trainable]

    def state(self) -> list[Parameter]:
        """Parameters and buffers with ``.name`` set to their dotted path."""
        out = []
        for name, p in self.named_state():
            p.name = name
            out.append(p)
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


@contextlib.contextmanager
def frozen(*modules: Module) -> Iterator[None]:
    """Exclude the modules' parameters from graph construction."""
    params = [p for m in modules for p in m.parameters()]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class _ConvBase(Module):
    def __init__(self, weight_shape, fan_in: int, out_channels: int, stride, pad,
                 rng: np.random.Generator, bias: bool):
        self.weight = Parameter(uniform_init(rng, weight_shape, fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None
        self.stride = stride
        self.pad = pad

    def _add_bias(self, out: Tensor) -> Tensor:
        if self.bias is None:
            return out
        shape = (1, -1) + (1,) * (out.ndim - 2)
        return ops.add(out, ops.reshape(self.bias, shape))


class Conv3d(_ConvBase):
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__((cout, cin, k, k, k), cin * k ** 3, cout, stride, pad, rng, bias)

    def forward(self, x: Tensor) -> Tensor:
        return self._add_bias(ops.conv3d(x, self.weight, self.stride, self.pad))


class Conv2d(_ConvBase):
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, bias: bool = True):
        super().__init__((cout, cin, k, k), cin * k ** 2, cout, stride, pad, rng, bias)

    def forward(self, x: Tensor) -> Tensor:
        return self._add_bias(ops.conv2d(x, self.weight, self.stride, self.pad))


class ConvTranspose2d(_ConvBase):
    def __init__(self, cin: int, cout: int, k: int, stride: int, pad: int,
                 rng: np.random.Generator, bias: bool = True):
        # fan-in seen by each output element is cin * k^2 / stride^2; use the
        # conventional cin * k^2 like the forward conv
        super().__init__((cin, cout, k, k), cin * k ** 2, cout, stride, pad, rng, bias)

    def forward(self, x: Tensor) -> Tensor:
        return self._add_bias(ops.conv_transpose2d(x, self.weight, self.stride, self.pad))


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1):
        dtype = get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = Parameter(np.zeros(channels, dtype=dtype), trainable=False)
        self.running_var = Parameter(np.ones(channels, dtype=dtype), trainable=False)
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        stats = ops.RunningStats(self.running_mean.data, self.running_var.data, self.momentum)
        mode = "train" if self.training else "eval"
        return ops.batch_norm(x, self.gamma, self.beta, stats, mode=mode)
