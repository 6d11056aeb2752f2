"""Adam and SGD-with-momentum updates plus the step learning-rate schedule.

Weight decay is the classic L2 form: ``weight_decay * theta`` is added to the
gradient before the update rule sees it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter

KINDS = ("adam", "sgd-momentum")


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")

    def _buffer(self, key: str, like: np.ndarray) -> np.ndarray:
        buf = self.buffers.get(key)
        if buf is None:
            buf = self.buffers[key] = np.zeros_like(like)
        elif buf.shape != like.shape:
            raise ValueError(f"optimizer buffer {key!r} has shape {buf.shape}, parameter has {like.shape}")
        return buf


def adam(learning_rate: float = 0.01, weight_decay: float = 1e-4) -> OptimizerState:
    return OptimizerState("adam", learning_rate, weight_decay)


def sgd_momentum(learning_rate: float = 0.001, weight_decay: float = 1e-4,
                 momentum: float = 0.9) -> OptimizerState:
    return OptimizerState("sgd-momentum", learning_rate, weight_decay, momentum=momentum)


def adam_step(state: OptimizerState, params: Iterable[Parameter], lr_scale: float = 1.0) -> None:
    state.step += 1
    lr = state.learning_rate * lr_scale
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p in params:
        g = p.grad + state.weight_decay * p.data
        m = state._buffer(f"m/{p.name}", p.data)
        v = state._buffer(f"v/{p.name}", p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sgd_momentum_step(state: OptimizerState, params: Iterable[Parameter], lr_scale: float = 1.0) -> None:
    state.step += 1
    lr = state.learning_rate * lr_scale
    for p in params:
        g = p.grad + state.weight_decay * p.data
        buf = state._buffer(f"buf/{p.name}", p.data)
        buf *= state.momentum
        buf += g
        p.data -= lr * buf


def optimizer_step(state: OptimizerState, params: Iterable[Parameter], lr_scale: float = 1.0) -> None:
    if state.kind == "adam":
        adam_step(state, params, lr_scale)
    else:
        sgd_momentum_step(state, params, lr_scale)


def lr_schedule(epoch: int, total_epochs: int = 120) -> float:
    """Step decay: x0.1 at half of training and again at three quarters.

    With the default 120 epochs the drops land on epochs 60 and 90.  The
    first epoch always runs at the full rate, however short the run.
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    first, second = max(1, round(total_epochs * 0.5)), max(1, round(total_epochs * 0.75))
    if epoch >= second:
        return 0.01
    if epoch >= first:
        return 0.1
    return 1.0
