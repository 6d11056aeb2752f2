"""Multi-head self-attention over keypoints (per frame) or over frames (per keypoint)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import BatchNorm, Module, Parameter, Tensor, kaiming_uniform, ops

KINDS = ("spatial", "temporal")


@dataclass(frozen=True)
class AttentionConfig:
    model_channels: int
    heads: int = 8
    dk_ratio: float = 0.25
    dv_ratio: float = 0.25

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("heads must be at least 1")
        for name, total in (("key", self.key_channels), ("value", self.value_channels)):
            if total < self.heads or total % self.heads:
                raise ValueError(
                    f"{name} channels {total} (ratio of {self.model_channels}) not divisible by {self.heads} heads")

    @property
    def key_channels(self) -> int:
        return round(self.dk_ratio * self.model_channels)

    @property
    def value_channels(self) -> int:
        return round(self.dv_ratio * self.model_channels)

    @property
    def head_key_dim(self) -> int:
        return self.key_channels // self.heads


@dataclass
class AttentionWeights:
    query: Parameter
    key: Parameter
    value: Parameter
    out: Parameter
    out_bias: Parameter | None = None


def self_attention(x: Tensor, w: AttentionWeights, config: AttentionConfig, kind: str,
                   return_weights: bool = False):
    """softmax(Q Kᵀ / √d) V per head, then the output projection back to C channels.

    ``kind='spatial'`` attends across the V keypoints of each frame,
    ``kind='temporal'`` across the T frames of each keypoint.  The attention
    tensor has shape (B, groups, heads, tokens, tokens).
    """
    if kind not in KINDS:
        raise ValueError(f"attention kind must be one of {KINDS}")
    if x.ndim != 4 or x.shape[1] != config.model_channels:
        raise ops.ShapeError(f"attention expects (B, {config.model_channels}, T, V), got {x.shape}")
    b, c, t, v = x.shape
    h = config.heads
    flat = ops.reshape(x, (b, c, t * v))
    # (B, D, T, V) -> (B, group, head, token, d)
    to_heads = (0, 3, 1, 4, 2) if kind == "spatial" else (0, 4, 1, 3, 2)

    def heads(w_proj):
        d = w_proj.shape[0]
        p = ops.reshape(ops.matmul(w_proj, flat), (b, h, d // h, t, v))
        return ops.transpose(p, to_heads)

    q, k, val = heads(w.query), heads(w.key), heads(w.value)
    o = ops.scaled_dot_attention(q, k, val, 1.0 / math.sqrt(config.head_key_dim))
    attn = o.attention
    o = ops.reshape(ops.transpose(o, tuple(np.argsort(to_heads))), (b, config.value_channels, t * v))
    out = ops.reshape(ops.matmul(w.out, o), (b, c, t, v))
    if w.out_bias is not None:
        out = out + ops.reshape(w.out_bias, (1, -1, 1, 1))
    return (out, attn) if return_weights else out


def init_attention(config: AttentionConfig, rng: np.random.Generator) -> AttentionWeights:
    c, dk, dv = config.model_channels, config.key_channels, config.value_channels
    return AttentionWeights(
        Parameter(kaiming_uniform((dk, c), c, rng)),
        Parameter(kaiming_uniform((dk, c), c, rng)),
        Parameter(kaiming_uniform((dv, c), c, rng)),
        Parameter(kaiming_uniform((c, dv), dv, rng)),
        Parameter(np.zeros(c)),
    )


class AttentionBlock(Module):
    """relu(batch_norm(attention(x)) + x).

    The output projection carries no bias here since the batch norm shift
    already provides one.
    """

    def __init__(self, config: AttentionConfig, kind: str, rng: np.random.Generator):
        self.config = config
        self.kind = kind
        w = init_attention(config, rng)
        self.query, self.key, self.value = w.query, w.key, w.value
        self.out = w.out
        self.bn = BatchNorm(config.model_channels)

    @property
    def weights(self) -> AttentionWeights:
        return AttentionWeights(self.query, self.key, self.value, self.out)

    def forward(self, x: Tensor) -> Tensor:
        a = self_attention(x, self.weights, self.config, self.kind)
        return ops.relu(self.bn(a) + x)
