"""Four-phase training loop, evaluation and the report it produces."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from .fusion import FUSION_WEIGHTS, SHARED_WEIGHTS, LossWeights
from .model import IdentityModel, ModelConfig, build_model, check_phase
from .numerics import OptimizerState, Tape, adam, lr_schedule, optimizer_step, sgd_momentum
from .skeleton import LabeledSequence, SplitManifest, normalize_sequence, preset_for_vertices, resample_to_length

OPTIMIZER_PRESETS = {
    "str-only": ("adam", 0.01, 1e-4),
    "ttr-only": ("sgd-momentum", 0.001, 1e-4),
    "joint-shared": ("adam", 0.01, 1e-4),
    "joint-fusion": ("adam", 0.01, 1e-4),
}


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    phase: str
    epochs: int = 120
    train_batch: int = 32
    test_batch: int = 8
    optimizer: str | None = None        # None: phase preset
    learning_rate: float | None = None
    weight_decay: float | None = None
    seed: int = 0
    loss_weights: LossWeights | None = None
    warm_start: bool = True
    frames: int = 60
    frame_skip: int = 2
    normalize: bool = True
    heads: int = 8
    dk_ratio: float = 0.25
    dv_ratio: float = 0.25

    def __post_init__(self):
        check_phase(self.phase)
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.train_batch < 2 or self.test_batch < 1:
            raise ValueError("train_batch must be >= 2 and test_batch >= 1")
        if self.frame_skip < 1 or self.frames < 1:
            raise ValueError("frames and frame_skip must be positive")

    def resolved_optimizer(self) -> tuple[str, float, float]:
        kind, lr, wd = OPTIMIZER_PRESETS[self.phase]
        return (self.optimizer or kind,
                lr if self.learning_rate is None else self.learning_rate,
                wd if self.weight_decay is None else self.weight_decay)

    def resolved_loss_weights(self) -> LossWeights:
        if self.loss_weights is not None:
            return self.loss_weights
        return FUSION_WEIGHTS if self.phase == "joint-fusion" else SHARED_WEIGHTS

    def to_dict(self) -> dict:
        d = asdict(self)
        kind, lr, wd = self.resolved_optimizer()
        d.update(optimizer=kind, learning_rate=lr, weight_decay=wd,
                 loss_weights=asdict(self.resolved_loss_weights()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("loss_weights") is not None:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    lr_multiplier: float
    batch_losses: list[float] = field(default_factory=list)

    def line(self) -> str:
        return f"{self.epoch}\t{self.phase}\t{self.loss!r}\t{self.lr_multiplier!r}"


@dataclass
class TrainResult:
    model: IdentityModel
    optimizer: OptimizerState
    log: list[EpochRecord]
    stage_models: dict[str, IdentityModel] = field(default_factory=dict)

    def log_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.log)


# -- data -------------------------------------------------------------------

def prepare_clip(clip: LabeledSequence, frames: int = 60, frame_skip: int = 2, normalize: bool = True) -> np.ndarray:
    """(3, T, V) model input for the first tracked person."""
    seq = normalize_sequence(clip.sequence) if normalize else clip.sequence
    return resample_to_length(seq, frames, frame_skip).data[..., 0]


def select(clips: Sequence[LabeledSequence], ids: Sequence[str]) -> list[LabeledSequence]:
    by_id = {c.clip_id: c for c in clips}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise TrainingError(f"split manifest names clips absent from the corpus: {missing[:5]}")
    return [by_id[i] for i in ids]


def stack_inputs(clips: Sequence[LabeledSequence], config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([prepare_clip(c, config.frames, config.frame_skip, config.normalize) for c in clips])
    y = np.array([c.identity for c in clips], dtype=np.int64)
    return x, y


def model_config_for(clips: Sequence[LabeledSequence], config: TrainConfig) -> ModelConfig:
    V = clips[0].sequence.V
    return ModelConfig(num_classes=max(c.identity for c in clips) + 1, skeleton=preset_for_vertices(V),
                       heads=config.heads, dk_ratio=config.dk_ratio, dv_ratio=config.dv_ratio)


def batch_order(n: int, batch: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, 11, epoch]).permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def make_optimizer(config: TrainConfig) -> OptimizerState:
    kind, lr, wd = config.resolved_optimizer()
    return adam(lr, wd) if kind == "adam" else sgd_momentum(lr, wd)


# -- training ---------------------------------------------------------------

def run_phase(model: IdentityModel, x: np.ndarray, y: np.ndarray, config: TrainConfig,
              optimizer: OptimizerState | None = None) -> tuple[OptimizerState, list[EpochRecord]]:
    """Optimize ``model`` in place for ``config.epochs`` epochs."""
    n = len(y)
    if n == 0:
        raise TrainingError("training split is empty")
    if n % config.train_batch == 1:
        raise TrainingError(f"{n} training clips leave a final batch of one, which batch norm cannot use")
    optimizer = optimizer or make_optimizer(config)
    weights = config.resolved_loss_weights()
    params = model.parameters()
    log = []
    for epoch in range(config.epochs):
        scale = lr_schedule(epoch, config.epochs)
        model.train()
        losses = []
        for idx in batch_order(n, config.train_batch, config.seed, epoch):
            model.zero_grad()
            with Tape() as tape:
                loss = model.loss(model(x[idx]), y[idx], weights)
                tape.backward(loss)
            optimizer_step(optimizer, params, scale)
            if model.fusion is not None:
                model.fusion.step += 1
            losses.append(loss.item())
        log.append(EpochRecord(epoch, model.phase, float(np.mean(losses)), scale, losses))
    return optimizer, log


def train(clips: Sequence[LabeledSequence], manifest: SplitManifest, config: TrainConfig,
          init: dict[str, IdentityModel] | None = None, model_config: ModelConfig | None = None) -> TrainResult:
    """Train one phase and return the final-epoch model.

    Joint phases start from trained single-stream weights when
    ``config.warm_start`` is set.  Those come from ``init`` (keys ``"str"``
    and ``"ttr"``) or, when absent, from fresh str-only and ttr-only runs with
    their own presets and the same seed and epoch budget.
    """
    train_clips = select(clips, manifest.train)
    if not train_clips:
        raise TrainingError("training split is empty")
    model_config = model_config or model_config_for(clips, config)
    x, y = stack_inputs(train_clips, config)
    model = build_model(model_config, config.phase, config.seed)
    stage_models = {}
    if config.phase.startswith("joint") and config.warm_start:
        init = dict(init or {})
        for stream in ("str", "ttr"):
            if stream not in init:
                sub = replace(config, phase=f"{stream}-only", optimizer=None, learning_rate=None,
                              weight_decay=None, loss_weights=None)
                init[stream] = train(clips, manifest, sub, model_config=model_config).model
            stage_models[stream] = init[stream]
            warm = {k: v for k, v in init[stream].state_dict().items() if k.startswith(stream + ".")}
            if not warm:
                raise TrainingError(f"warm-start model for {stream!r} has no {stream} parameters")
            model.load_state_dict(warm, strict=False)
    optimizer, log = run_phase(model, x, y, config)
    return TrainResult(model, optimizer, log, stage_models)


# -- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    phase: str
    accuracy: float
    mean_average_precision: float
    per_class_precision: list[float]
    per_class_average_precision: list[float]
    confusion: list[list[int]]
    test_clips: int
    map_definition: str = metrics.MAP_DEFINITION

    def to_json(self) -> str:
        d = asdict(self)
        d["per_class_average_precision"] = [None if math.isnan(a) else a for a in self.per_class_average_precision]
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["per_class_average_precision"] = [math.nan if a is None else a for a in d["per_class_average_precision"]]
        return cls(**d)

    def summary(self) -> str:
        return (f"phase={self.phase} test_clips={self.test_clips} "
                f"accuracy={self.accuracy:.4f} mAP={self.mean_average_precision:.4f}")


def predict_scores(model: IdentityModel, x: np.ndarray, batch: int = 8,
                   weights: LossWeights | None = None) -> np.ndarray:
    model.eval()
    return np.concatenate([model.scores(model(x[i:i + batch]), weights) for i in range(0, len(x), batch)])


def evaluate(model: IdentityModel, clips: Sequence[LabeledSequence], manifest: SplitManifest,
             config: TrainConfig | None = None) -> EvalReport:
    config = config or TrainConfig(model.phase)
    if config.phase != model.phase:
        raise TrainingError(f"model was built for phase {model.phase!r}, evaluation asked for {config.phase!r}")
    test_clips = select(clips, manifest.test)
    if not test_clips:
        raise TrainingError("test split is empty")
    x, y = stack_inputs(test_clips, config)
    scores = predict_scores(model, x, config.test_batch, config.loss_weights)
    k = model.config.num_classes
    cm = metrics.confusion_matrix(y, metrics.predictions(scores), k)
    return EvalReport(
        phase=model.phase,
        accuracy=metrics.accuracy(scores, y),
        mean_average_precision=metrics.mean_average_precision(scores, y),
        per_class_precision=metrics.per_class_precision(cm),
        per_class_average_precision=metrics.per_class_average_precision(scores, y),
        confusion=cm.tolist(),
        test_clips=len(y),
    )
