"""Parameter containers and the standard layers the blocks are built from.

Each leaf layer knows its own closed-form parameter count and can
``profile`` an input shape into ``LayerRow`` records, which is how the
accounting engine computes MACs without running a forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


@dataclass
class LayerRow:
    name: str
    kind: str
    params: int
    macs: int


Shape = tuple[int, ...]


class Module:
    """Minimal module tree: parameters, buffers, children, train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, Module]]:
        return iter(self._children.items())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        for name, value in state.items():
            if name not in own:
                raise ConfigError(f"unexpected tensor {name!r} not present in model")
            if own[name].shape != value.shape:
                raise ConfigError(f"tensor {name!r}: shape {value.shape} != model shape {own[name].shape}")
        for name in own:
            if name not in state:
                raise ConfigError(f"tensor {name!r} missing from state")
        self._assign(state, "")

    def _assign(self, state, prefix):
        for name, p in self._params.items():
            p.data = np.array(state[prefix + name], dtype=p.dtype)
        for name in self._buffers:
            current = getattr(self, name)
            object.__setattr__(self, name, np.array(state[prefix + name], dtype=current.dtype))
        for cname, child in self._children.items():
            child._assign(state, f"{prefix}{cname}.")

    def train(self, mode: bool = True) -> Module:
        object.__setattr__(self, "training", mode)
        for _, child in self._children.items():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype) -> Module:
        """Cast parameters and buffers in place (used for float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for name in self._buffers:
            object.__setattr__(self, name, getattr(self, name).astype(dtype))
        for _, child in self._children.items():
            child.to_dtype(dtype)
        return self

    def param_count(self) -> int:
        """Closed-form parameter count; leaves override, containers sum."""
        return sum(child.param_count() for _, child in self.children())

    def profile(self, shape: Shape, name: str) -> tuple[list[LayerRow], Shape]:
        raise NotImplementedError(type(self).__name__)


def _kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)


class Conv2d(Module):
    def __init__(self, spec: ops.ConvSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        fan_in = spec.weight_shape[1] * spec.kernel[0] * spec.kernel[1]
        self.weight = Parameter(_kaiming(rng, spec.weight_shape, fan_in))
        self.bias = Parameter(np.zeros(spec.out_channels)) if spec.bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ConfigError(f"conv expects {self.spec.in_channels} channels, got {x.shape[1]}")
        s = self.spec
        return ops.conv2d(x, self.weight, self.bias, stride=s.stride, padding=s.padding, dilation=s.dilation, groups=s.groups)

    def param_count(self) -> int:
        return self.spec.param_count()

    def profile(self, shape, name):
        n, c, h, w = shape
        ho, wo = self.spec.output_size(h, w)
        return [LayerRow(name, "conv", self.param_count(), n * self.spec.macs(h, w))], (n, self.spec.out_channels, ho, wo)


def conv(cin, cout, rng, kernel=1, stride=1, padding=0, dilation=1, groups=1, bias=False) -> Conv2d:
    return Conv2d(ops.ConvSpec(cin, cout, kernel, stride, padding, dilation, groups, bias), rng)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var, self.training)

    def param_count(self) -> int:
        return 2 * self.channels

    def profile(self, shape, name):
        return [LayerRow(name, "bn", self.param_count(), 0)], shape


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias)

    def param_count(self) -> int:
        return 2 * self.dim

    def profile(self, shape, name):
        return [LayerRow(name, "ln", self.param_count(), 0)], shape


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.fin, self.fout = fin, fout
        bound = 1.0 / np.sqrt(fin)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(fout, fin)))
        self.bias = Parameter(np.zeros(fout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def param_count(self) -> int:
        return self.fin * self.fout + (self.fout if self.bias is not None else 0)

    def profile(self, shape, name):
        rows = int(np.prod(shape[:-1]))
        out = (*shape[:-1], self.fout)
        return [LayerRow(name, "linear", self.param_count(), rows * self.fin * self.fout)], out


class ConvBN(Module):
    """Convolution (no bias) followed by BatchNorm and an optional ReLU."""

    def __init__(self, spec: ops.ConvSpec, rng: np.random.Generator, act: bool = True):
        super().__init__()
        self.conv = Conv2d(spec, rng)
        self.bn = BatchNorm2d(spec.out_channels)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return ops.relu(y) if self.act else y

    def profile(self, shape, name):
        rows, shape = self.conv.profile(shape, f"{name}.conv")
        more, shape = self.bn.profile(shape, f"{name}.bn")
        return rows + more, shape


def profile_sequence(modules: list[tuple[str, Module]], shape: Shape, prefix: str):
    rows: list[LayerRow] = []
    for name, module in modules:
        more, shape = module.profile(shape, f"{prefix}.{name}" if prefix else name)
        rows += more
    return rows, shape
