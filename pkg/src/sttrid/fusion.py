"""Joint training objectives: the shared loss and feature-level fusion."""
from __future__ import annotations

from dataclasses import dataclass

from .numerics import BatchNorm, Linear, Module, ShapeError, Tensor, as_tensor, ops, param_rng
from .spatial_stream import EMBED_DIM


@dataclass(frozen=True)
class LossWeights:
    w_str: float = 0.5
    w_ttr: float = 0.5
    w_fusion: float = 0.0

    def __post_init__(self):
        if min(self.w_str, self.w_ttr, self.w_fusion) < 0:
            raise ValueError("loss weights must be non-negative")


SHARED_WEIGHTS = LossWeights(0.5, 0.5, 0.0)
FUSION_WEIGHTS = LossWeights(0.3, 0.3, 0.4)


@dataclass(frozen=True)
class FusionHeadConfig:
    num_classes: int
    input_width: int = 2 * EMBED_DIM
    hidden: tuple[int, ...] = (512, 256)
    dropout_p: float = 0.2
    classifier_init_scale: float = 0.01

    def __post_init__(self):
        if self.input_width % 2:
            raise ValueError("fusion input must be two equal-width embeddings")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")


def shared_loss(loss_str, loss_ttr, weights: LossWeights = SHARED_WEIGHTS) -> Tensor:
    return ops.add(ops.mul(loss_str, weights.w_str), ops.mul(loss_ttr, weights.w_ttr))


def fusion_loss(loss_str, loss_ttr, loss_fusion, weights: LossWeights = FUSION_WEIGHTS) -> Tensor:
    return ops.add(shared_loss(loss_str, loss_ttr, weights), ops.mul(loss_fusion, weights.w_fusion))


def fuse_embeddings(e_str, e_ttr) -> Tensor:
    """L2-normalize each embedding row, then concatenate STR first."""
    e_str, e_ttr = as_tensor(e_str), as_tensor(e_ttr)
    if e_str.shape != e_ttr.shape:
        raise ShapeError(f"embedding widths differ: {e_str.shape} vs {e_ttr.shape}")
    return ops.concat([ops.l2_normalize(e_str, axis=-1), ops.l2_normalize(e_ttr, axis=-1)], axis=-1)


class FusionHead(Module):
    """linear → batch_norm → relu → dropout, twice, then the classifier.

    The hidden linear layers have no bias because batch norm removes it.
    """

    def __init__(self, config: FusionHeadConfig, seed: int = 0, prefix: str = "fusion."):
        self.config = config
        widths = (config.input_width,) + tuple(config.hidden)
        self.layers = [Linear(a, b, param_rng(seed, f"{prefix}layers.{i}"), bias=False) for i, (a, b) in
                       enumerate(zip(widths[:-1], widths[1:]))]
        self.norms = [BatchNorm(w) for w in widths[1:]]
        self.classifier = Linear(widths[-1], config.num_classes, param_rng(seed, f"{prefix}classifier"),
                                 init_scale=config.classifier_init_scale)
        self.dropout_seed = seed
        self.step = 0

    def forward(self, fused: Tensor) -> Tensor:
        h = as_tensor(fused)
        if h.shape[-1] != self.config.input_width:
            raise ShapeError(f"fusion head expects width {self.config.input_width}, got {h.shape[-1]}")
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms)):
            h = ops.relu(norm(layer(h)))
            h = ops.dropout(h, self.config.dropout_p, self.training, seed=(self.dropout_seed, i, self.step))
        return self.classifier(h)


def fusion_head_forward(fused: Tensor, head: FusionHead, training: bool) -> Tensor:
    head.train(training)
    return head(fused)

