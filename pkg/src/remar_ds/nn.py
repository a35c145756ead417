"""Module/parameter bookkeeping and the basic layers the network is built from."""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Parameter(Tensor):
    """Learnable leaf tensor. ``name`` is filled in by the owning module tree."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name


class Module:
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in self._children():
            full = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{name}", getattr(self, name)
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

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

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()
        for name, buf in bufs.items():
            arr = np.asarray(state[name])
            if arr.shape != buf.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {buf.shape}")
            buf[...] = arr

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def same_padding(k: int, stride: int):
    """Padding keeping ``out = in / stride``; asymmetric ``(lo, hi)`` for stride > 1."""
    if stride == 1:
        return (k - 1) // 2
    total = max(k - stride, 0)
    return (total // 2, total - total // 2)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, rng=None, dtype=np.float32):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = same_padding(k, stride)
        self.weight = Parameter(_he_normal(rng, (cout, cin, k, k), cin * k * k, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, k: int = 3, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(_he_normal(rng, (channels, 1, k, k), k * k, dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.depthwise_conv2d(x, self.weight, self.bias)


class PointwiseConv2d(Module):
    def __init__(self, cin: int, cout: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(_he_normal(rng, (cout, cin, 1, 1), cin, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.pointwise_conv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(_he_normal(rng, (fout, fin), fin, dtype))
        self.bias = Parameter(np.zeros(fout, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ad.fully_connected(x, self.weight, self.bias)


class CBR(Module):
    """Conv -> BatchNorm -> ReLU."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, rng=None, dtype=np.float32):
        self.conv = Conv2d(cin, cout, k, stride, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(self.bn(self.conv(x)))


def conv_params(cin: int, cout: int, k: int) -> int:
    return cin * cout * k * k + cout


def depthwise_params(c: int, k: int) -> int:
    return c * k * k + c


def bn_params(c: int) -> int:
    return 2 * c


def linear_params(fin: int, fout: int) -> int:
    return fin * fout + fout
