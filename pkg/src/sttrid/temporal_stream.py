"""TTR: temporal self-attention across frames for every keypoint."""
from __future__ import annotations

from .attention import AttentionConfig, AttentionWeights, self_attention
from .numerics import Tensor
from .skeleton import SkeletonGraph
from .spatial_stream import StreamConfig, StreamOutput, TransformerStream


def ttr_config(num_classes: int, **overrides) -> StreamConfig:
    """Desk-scale TTR: two stem blocks (3→32→64) with 9-frame temporal kernels.

    The second block halves the frame rate before attention.  Each keypoint
    trajectory is centred on its clip mean before the stem, so the stream
    sees motion only.
    """
    params = dict(stem_channels=(32, 64), temporal_kernel=9, stem_strides=(1, 2), center_time=True)
    params.update(overrides)
    return StreamConfig("temporal", num_classes, **params)


def temporal_self_attention(x: Tensor, weights: AttentionWeights, config: AttentionConfig,
                            return_weights: bool = False):
    """Attention across frames, independently for each keypoint and head."""
    return self_attention(x, weights, config, "temporal", return_weights)


def build_ttr(num_classes: int, graph: SkeletonGraph, seed: int = 0, **overrides) -> TransformerStream:
    return TransformerStream(ttr_config(num_classes, **overrides), graph, seed, prefix="ttr.")


def ttr_forward(x, model: TransformerStream) -> StreamOutput:
    return model(x)
