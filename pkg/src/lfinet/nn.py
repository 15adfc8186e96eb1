"""Parameter containers and basic layers.

Modules own named :class:`Tensor` parameters (``requires_grad=True``) and
numpy buffers (batch-norm running statistics). Names are dotted attribute
paths such as ``hfb.0.proj.weight``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        """Cast all parameters and buffers in place."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match parameter shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()
        for name, buf in buffers.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match buffer shape {buf.shape}")
            buf[...] = arr

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int | None = None,
        dilation: int = 1,
        groups: int = 1,
        bias: bool = True,
    ):
        self.stride, self.dilation, self.groups = stride, dilation, groups
        self.padding = F.same_padding(kernel, dilation) if padding is None else padding
        fan_in = in_channels // groups * kernel * kernel
        self.weight = Tensor(
            kaiming_uniform(rng, (out_channels, in_channels // groups, kernel, kernel), fan_in), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_channels, np.float32), requires_grad=True) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


def depthwise(channels: int, kernel: int, rng, dilation: int = 1, bias: bool = True) -> Conv2d:
    return Conv2d(channels, channels, kernel, rng, dilation=dilation, groups=channels, bias=bias)


class ConvTranspose2d(Module):
    """Kernel-2 stride-2 transposed convolution (exact 2x upsampling)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, stride: int = 2):
        self.stride = stride
        self.weight = Tensor(
            kaiming_uniform(rng, (in_channels, out_channels, stride, stride), in_channels), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_channels, np.float32), requires_grad=True)

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum, self.eps = momentum, eps
        self.weight = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self._running_mean = np.zeros(channels, np.float32)
        self._running_var = np.ones(channels, np.float32)

    def named_buffers(self, prefix: str = ""):
        yield f"{prefix}running_mean", self._running_mean
        yield f"{prefix}running_var", self._running_var

    def _cast_buffers(self, dtype):
        self._running_mean = self._running_mean.astype(dtype)
        self._running_var = self._running_var.astype(dtype)

    def forward(self, x):
        return F.batch_norm2d(
            x, self.weight, self.bias, self._running_mean, self._running_var, self.training, self.momentum, self.eps
        )


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, np.float32), requires_grad=True)

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(out_features, in_features)).astype(np.float32), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features, np.float32), requires_grad=True)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class ConvBNAct(Module):
    """Conv -> BatchNorm -> activation, the recurring unit of the network."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng, act: str = "relu", groups: int = 1):
        self.conv = Conv2d(in_channels, out_channels, kernel, rng, groups=groups, bias=False)
        self.bn = BatchNorm2d(out_channels)
        self.act = act

    def forward(self, x):
        return F.activation(self.bn(self.conv(x)), self.act)
