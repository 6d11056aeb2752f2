"""ST-GCN feature blocks: graph convolution over keypoints, convolution over frames."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import BatchNorm, Module, Parameter, ShapeError, Tensor, kaiming_uniform, ops
from .skeleton import SkeletonGraph


@dataclass(frozen=True)
class STGCNBlockConfig:
    in_channels: int
    out_channels: int
    temporal_kernel: int = 9
    temporal_stride: int = 1
    residual: bool = True
    depthwise_temporal: bool = True

    def __post_init__(self):
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be a positive odd integer, got {self.temporal_kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.temporal_stride < 1:
            raise ValueError("temporal_stride must be positive")


def spatial_graph_conv(x: Tensor, adjacency: np.ndarray | SkeletonGraph, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``W · X[:, :, t, :] · Â`` for every frame ``t`` of a (B, C, T, V) input."""
    a_hat = adjacency.normalized_adjacency if isinstance(adjacency, SkeletonGraph) else np.asarray(adjacency)
    if x.shape[-1] != a_hat.shape[0]:
        raise ShapeError(f"input has {x.shape[-1]} vertices, graph has {a_hat.shape[0]}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"weight {weight.shape} cannot mix {x.shape[1]} channels")
    b, c, t, v = x.shape
    mixed = ops.matmul(weight, ops.reshape(ops.matmul(x, Tensor(a_hat)), (b, c, t * v)))
    out = ops.reshape(mixed, (b, weight.shape[0], t, v))
    if bias is not None:
        out = out + ops.reshape(bias, (1, -1, 1, 1))
    return out


def temporal_conv(x: Tensor, kernel: Tensor, stride: int = 1, groups: int = 1) -> Tensor:
    return ops.temporal_conv(x, kernel, stride=stride, groups=groups)


class STGCNBlock(Module):
    def __init__(self, config: STGCNBlockConfig, graph: SkeletonGraph, rng: np.random.Generator):
        c_in, c_out, k = config.in_channels, config.out_channels, config.temporal_kernel
        self.config = config
        self.graph = graph
        self.gcn_weight = Parameter(kaiming_uniform((c_out, c_in), c_in, rng))
        self.gcn_bias = Parameter(np.zeros(c_out))
        self.bn = BatchNorm(c_out)
        self.groups = c_out if config.depthwise_temporal else 1
        per = c_out // self.groups
        self.tcn_weight = Parameter(kaiming_uniform((c_out, per, k), per * k, rng))
        self.proj_weight = None
        if config.residual and (c_in != c_out or config.temporal_stride != 1):
            self.proj_weight = Parameter(kaiming_uniform((c_out, c_in, 1), c_in, rng))

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        h = ops.relu(spatial_graph_conv(x, self.graph, self.gcn_weight, self.gcn_bias))
        h = self.bn(h)
        h = temporal_conv(h, self.tcn_weight, cfg.temporal_stride, self.groups)
        if not cfg.residual:
            return h
        if self.proj_weight is None:
            return h + x
        return h + temporal_conv(x, self.proj_weight, cfg.temporal_stride)


def stgcn_block(x: Tensor, block: STGCNBlock) -> Tensor:
    return block(x)
