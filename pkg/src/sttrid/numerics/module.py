"""Parameter containers and the two stateful layers shared by every network."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Parameter, Tensor


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, parameter name) so init is order-independent."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Attribute-walking container in the usual deep-learning style.

    Parameters, buffers and submodules are discovered from instance attributes
    (lists of modules included), in attribute-definition order.
    """

    training: bool = True

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{key}.{i}.")

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for prefix, mod in self.named_modules():
            for key, value in vars(mod).items():
                if isinstance(value, Parameter):
                    yield prefix + key, value

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, mod in self.named_modules():
            for key in getattr(mod, "_buffers", ()):
                yield prefix + key, getattr(mod, key)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching entries in place; returns names that were absent from ``state``."""
        missing = []
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(self.named_buffers())
        for name, arr in targets.items():
            if name not in state:
                missing.append(name)
                continue
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model shape {arr.shape}")
            arr[...] = src
        if strict and missing:
            raise KeyError(f"missing parameter {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
        return missing

    def name_parameters(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, init_scale: float = 1.0):
        self.weight = Parameter(kaiming_uniform((out_features, in_features), in_features, rng) * init_scale)
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization over channel axis 1."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.scale, self.shift, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)
