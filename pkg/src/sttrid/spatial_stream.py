"""STR: ST-GCN stem, spatial self-attention blocks, pooled 256-d embedding, classifier.

The stream class here is shared with TTR; the two differ only in attention
kind and stem defaults (see :mod:`sttrid.temporal_stream`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .attention import AttentionBlock, AttentionConfig, AttentionWeights, self_attention
from .graph_conv import STGCNBlock, STGCNBlockConfig
from .numerics import Linear, Module, ShapeError, Tensor, as_tensor, ops, param_rng
from .skeleton import SkeletonGraph

EMBED_DIM = 256


@dataclass(frozen=True)
class StreamConfig:
    kind: str
    num_classes: int
    stem_channels: tuple[int, ...] = (16, 32, 64)
    temporal_kernel: int = 1
    stem_strides: tuple[int, ...] = ()
    attention_blocks: int = 2
    heads: int = 8
    dk_ratio: float = 0.25
    dv_ratio: float = 0.25
    embed_dim: int = EMBED_DIM
    in_channels: int = 3
    center_time: bool = False
    classifier_init_scale: float = 0.01

    @property
    def model_channels(self) -> int:
        return self.stem_channels[-1]

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.model_channels, self.heads, self.dk_ratio, self.dv_ratio)


def str_config(num_classes: int, **overrides) -> StreamConfig:
    """Desk-scale STR: three per-frame stem blocks (3→16→32→64)."""
    return StreamConfig("spatial", num_classes, **overrides)


@dataclass
class StreamOutput:
    logits: Tensor
    embedding: Tensor = field(repr=False)


def as_model_input(x) -> Tensor:
    """Accept (B, C, T, V) or (B, C, T, V, 1); anything with M > 1 is rejected."""
    x = as_tensor(x)
    if x.ndim == 5:
        if x.shape[4] != 1:
            raise ShapeError(f"streams take a single person (M=1), got M={x.shape[4]}")
        x = ops.reshape(x, x.shape[:4])
    if x.ndim != 4:
        raise ShapeError(f"stream input must be (B, C, T, V[, 1]), got {x.shape}")
    return x


class TransformerStream(Module):
    def __init__(self, config: StreamConfig, graph: SkeletonGraph, seed: int = 0, prefix: str = ""):
        self.config = config
        self.graph = graph
        chans = (config.in_channels,) + tuple(config.stem_channels)
        strides = tuple(config.stem_strides) or (1,) * len(config.stem_channels)
        self.stem = [
            STGCNBlock(STGCNBlockConfig(c_in, c_out, config.temporal_kernel, stride), graph,
                       param_rng(seed, f"{prefix}stem.{i}"))
            for i, (c_in, c_out, stride) in enumerate(zip(chans[:-1], chans[1:], strides))
        ]
        self.blocks = [AttentionBlock(config.attention, config.kind, param_rng(seed, f"{prefix}blocks.{i}"))
                       for i in range(config.attention_blocks)]
        self.embed = Linear(config.model_channels, config.embed_dim, param_rng(seed, f"{prefix}embed"))
        self.classifier = Linear(config.embed_dim, config.num_classes, param_rng(seed, f"{prefix}classifier"),
                                 init_scale=config.classifier_init_scale)

    def forward(self, x) -> StreamOutput:
        x = as_model_input(x)
        if x.shape[1] != self.config.in_channels or x.shape[3] != self.graph.vertex_count:
            raise ShapeError(f"input {x.shape} does not match {self.config.in_channels} channels "
                             f"and {self.graph.vertex_count} vertices")
        if self.config.center_time:
            x = x - ops.mean(x, axis=2, keepdims=True)
        for block in self.stem:
            x = block(x)
        for block in self.blocks:
            x = block(x)
        pooled = ops.mean(x, axis=(2, 3))
        embedding = self.embed(pooled)
        return StreamOutput(self.classifier(embedding), embedding)


def spatial_self_attention(x: Tensor, weights: AttentionWeights, config: AttentionConfig,
                           return_weights: bool = False):
    """Attention across keypoints, independently for each frame and head."""
    return self_attention(x, weights, config, "spatial", return_weights)


def build_str(num_classes: int, graph: SkeletonGraph, seed: int = 0, **overrides) -> TransformerStream:
    return TransformerStream(str_config(num_classes, **overrides), graph, seed, prefix="str.")


def str_forward(x, model: TransformerStream) -> StreamOutput:
    return model(x)

