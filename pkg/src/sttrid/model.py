"""The four trainable configurations behind one container."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .fusion import FUSION_WEIGHTS, SHARED_WEIGHTS, FusionHead, FusionHeadConfig, LossWeights, fuse_embeddings, fusion_loss, shared_loss
from .numerics import Module, Tensor, ops
from .skeleton import SkeletonGraph, skeleton_preset
from .spatial_stream import StreamOutput, TransformerStream, str_config
from .temporal_stream import ttr_config

PHASES = ("str-only", "ttr-only", "joint-shared", "joint-fusion")
# Feature order inside the fused vector; part of the checkpoint contract.
CONCAT_ORDER = ("str", "ttr")


def check_phase(phase: str) -> str:
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")
    return phase


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    skeleton: str = "body17"
    heads: int = 8
    dk_ratio: float = 0.25
    dv_ratio: float = 0.25
    attention_blocks: int = 2
    str_stem: tuple[int, ...] = (16, 32, 64)
    ttr_stem: tuple[int, ...] = (32, 64)
    str_temporal_kernel: int = 1
    ttr_temporal_kernel: int = 9
    ttr_strides: tuple[int, ...] = (1, 2)
    fusion_hidden: tuple[int, ...] = (512, 256)
    dropout_p: float = 0.2
    classifier_init_scale: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("str_stem", "ttr_stem", "ttr_strides", "fusion_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ModelOutput:
    str: StreamOutput | None = None
    ttr: StreamOutput | None = None
    fusion_logits: Tensor | None = field(default=None, repr=False)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class IdentityModel(Module):
    def __init__(self, config: ModelConfig, phase: str, seed: int = 0, graph: SkeletonGraph | None = None):
        # ``graph`` overrides the named preset, mainly for small test skeletons
        self.config = config
        self.phase = check_phase(phase)
        graph = graph if graph is not None else skeleton_preset(config.skeleton)
        common = dict(heads=config.heads, dk_ratio=config.dk_ratio, dv_ratio=config.dv_ratio,
                      attention_blocks=config.attention_blocks, classifier_init_scale=config.classifier_init_scale)
        self.str = None
        self.ttr = None
        self.fusion = None
        if phase != "ttr-only":
            cfg = str_config(config.num_classes, stem_channels=config.str_stem,
                             temporal_kernel=config.str_temporal_kernel, **common)
            self.str = TransformerStream(cfg, graph, seed, prefix="str.")
        if phase != "str-only":
            cfg = ttr_config(config.num_classes, stem_channels=config.ttr_stem,
                             temporal_kernel=config.ttr_temporal_kernel, stem_strides=config.ttr_strides,
                             **common)
            self.ttr = TransformerStream(cfg, graph, seed, prefix="ttr.")
        if phase == "joint-fusion":
            head_cfg = FusionHeadConfig(config.num_classes, hidden=config.fusion_hidden, dropout_p=config.dropout_p,
                                        classifier_init_scale=config.classifier_init_scale)
            self.fusion = FusionHead(head_cfg, seed)
        self.name_parameters()

    def forward(self, x) -> ModelOutput:
        out = ModelOutput()
        if self.str is not None:
            out.str = self.str(x)
        if self.ttr is not None:
            out.ttr = self.ttr(x)
        if self.fusion is not None:
            out.fusion_logits = self.fusion(fuse_embeddings(out.str.embedding, out.ttr.embedding))
        return out

    def loss(self, out: ModelOutput, labels, weights: LossWeights | None = None) -> Tensor:
        if self.phase == "str-only":
            return ops.cross_entropy(out.str.logits, labels)
        if self.phase == "ttr-only":
            return ops.cross_entropy(out.ttr.logits, labels)
        ce_str = ops.cross_entropy(out.str.logits, labels)
        ce_ttr = ops.cross_entropy(out.ttr.logits, labels)
        if self.phase == "joint-shared":
            return shared_loss(ce_str, ce_ttr, weights or SHARED_WEIGHTS)
        return fusion_loss(ce_str, ce_ttr, ops.cross_entropy(out.fusion_logits, labels), weights or FUSION_WEIGHTS)

    def scores(self, out: ModelOutput, weights: LossWeights | None = None) -> np.ndarray:
        """Class probabilities used for prediction and ranking.

        The shared-loss model averages its two streams' softmax outputs with
        the stream loss weights.
        """
        if self.phase == "str-only":
            return _softmax(out.str.logits.data)
        if self.phase == "ttr-only":
            return _softmax(out.ttr.logits.data)
        if self.phase == "joint-fusion":
            return _softmax(out.fusion_logits.data)
        w = weights or SHARED_WEIGHTS
        total = w.w_str + w.w_ttr
        return (w.w_str * _softmax(out.str.logits.data) + w.w_ttr * _softmax(out.ttr.logits.data)) / total


def build_model(config: ModelConfig, phase: str, seed: int = 0) -> IdentityModel:
    return IdentityModel(config, phase, seed)
