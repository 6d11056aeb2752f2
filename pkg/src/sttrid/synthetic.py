"""Procedural identities with controllable spatial and temporal signatures.

Every identity owns a *spatial code* (a static per-keypoint displacement of
the canonical pose) and a *temporal code* (sinusoidal motion of keypoint
groups).  The corpus mode decides which codes are shared:

* ``spatial-only``: distinct spatial codes, one shared temporal code.
* ``temporal-only``: one shared (zero) displacement, distinct temporal codes.
* ``mixed``: each identity has a unique (spatial, temporal) pair, but with
  four or more identities each individual code is shared by two identities,
  so neither cue alone resolves every identity.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .skeleton import (
    KeypointSequence, LabeledSequence, SplitManifest, canonical_pose, load_sequence_file,
    preset_for_vertices, read_labels_map, split_dataset, write_labels_map, write_sequence_file,
)

MODES = ("spatial-only", "temporal-only", "mixed")


@dataclass(frozen=True)
class MotionMode:
    group: tuple[int, ...]
    amplitude: float
    frequency: float  # cycles per frame
    phase: float
    axis: int = 1  # 0 moves x, 1 moves y


@dataclass(frozen=True)
class IdentityProfile:
    identity_index: int
    base_offsets: np.ndarray
    motion_modes: tuple[MotionMode, ...]
    noise_sigma: float

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        for mode in self.motion_modes:
            if not 0.0 < mode.frequency < 0.5:
                raise ValueError(f"motion frequency {mode.frequency} outside (0, 0.5)")


@dataclass(frozen=True)
class CorpusSpec:
    identity_count: int = 8
    clips_per_identity: int = 50
    frames_per_clip: int = 60
    V: int = 17
    seed: int = 0
    mode: str = "mixed"
    noise_sigma: float = 0.02
    offset_scale: float = 0.06
    amplitude: float = 0.15

    def __post_init__(self):
        if self.identity_count < 2:
            raise ValueError("a corpus needs at least 2 identities")
        if self.clips_per_identity < 2:
            raise ValueError("each identity needs at least 2 clips for a train/test split")
        if self.mode not in MODES:
            raise ValueError(f"unknown corpus mode {self.mode!r}; choose from {MODES}")
        if self.frames_per_clip < 3:
            raise ValueError("frames_per_clip must be at least 3 to hold one motion cycle below Nyquist")


def identity_codes(spec: CorpusSpec, identity_index: int) -> tuple[int | None, int]:
    """(spatial code, temporal code); ``None`` means the shared zero displacement."""
    k, i = spec.identity_count, identity_index
    if spec.mode == "spatial-only":
        return i, 0
    if spec.mode == "temporal-only":
        return None, i
    if k < 4:
        return i, i
    return i // 2, (i // 2 + i % 2) % math.ceil(k / 2)


def temporal_code_count(spec: CorpusSpec) -> int:
    k = spec.identity_count
    if spec.mode == "spatial-only":
        return 1
    if spec.mode == "temporal-only" or k < 4:
        return k
    return math.ceil(k / 2)


def _cycle_grid(frames: int, codes: int) -> list[int]:
    top = max(1, math.floor(0.45 * frames))
    low = min(3, top)
    step = max(1, (top - low) // max(codes - 1, 1))
    return list(range(low, top + 1, step))


def _groups(V: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if V == 17:
        return (7, 8, 9, 10), (0, 1, 2, 3, 4)
    if V == 133:
        return (7, 8, 9, 10) + tuple(range(91, 133)), (0, 1, 2, 3, 4) + tuple(range(23, 91))
    q = max(1, V // 4)
    return tuple(range(V - q, V)), tuple(range(q))


def _canonical(V: int) -> np.ndarray:
    try:
        return canonical_pose(preset_for_vertices(V))
    except KeyError:
        angle = 2 * np.pi * np.arange(V) / V
        return np.stack([np.cos(angle), np.sin(angle)], axis=1)


def generate_identity(spec: CorpusSpec, identity_index: int, seed: int | None = None) -> IdentityProfile:
    if not 0 <= identity_index < spec.identity_count:
        raise ValueError(f"identity_index {identity_index} outside [0, {spec.identity_count})")
    seed = spec.seed if seed is None else seed
    spatial, temporal = identity_codes(spec, identity_index)
    if spatial is None:
        offsets = np.zeros((spec.V, 2))
    else:
        rng = np.random.default_rng([seed, 1, spatial])
        offsets = rng.normal(0.0, spec.offset_scale, size=(spec.V, 2))

    grid = _cycle_grid(spec.frames_per_clip, temporal_code_count(spec))
    arm_cycles = grid[temporal % len(grid)]
    head_cycles = grid[(temporal % len(grid) + temporal // len(grid)) % len(grid)]
    phases = np.random.default_rng([seed, 2, temporal]).uniform(0.0, 2 * np.pi, size=2)
    arms, head = _groups(spec.V)
    modes = (
        MotionMode(arms, spec.amplitude, arm_cycles / spec.frames_per_clip, float(phases[0]), axis=1),
        MotionMode(head, 0.5 * spec.amplitude, head_cycles / spec.frames_per_clip, float(phases[1]), axis=0),
    )
    offsets.setflags(write=False)
    return IdentityProfile(identity_index, offsets, modes, spec.noise_sigma)


def render_sequence(profile: IdentityProfile, clip_seed, frames: int = 60) -> KeypointSequence:
    """Render one clip; ``clip_seed`` drives the phase jitter and the noise."""
    V = profile.base_offsets.shape[0]
    rng = np.random.default_rng(clip_seed)
    jitter = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(frames)
    xy = np.broadcast_to((_canonical(V) + profile.base_offsets).T[:, None, :], (2, frames, V)).copy()
    for mode in profile.motion_modes:
        wave = mode.amplitude * np.sin(2 * np.pi * mode.frequency * t + mode.phase + jitter)
        xy[mode.axis][:, list(mode.group)] += wave[:, None]
    if profile.noise_sigma > 0:
        xy += rng.normal(0.0, profile.noise_sigma, size=xy.shape)
    data = np.concatenate([xy, np.ones((1, frames, V))], axis=0)[..., None]
    return KeypointSequence(data)


def clip_seed(spec: CorpusSpec, identity_index: int, clip_index: int) -> list[int]:
    return [spec.seed, 3, identity_index, clip_index]


def generate_corpus(spec: CorpusSpec) -> tuple[list[LabeledSequence], SplitManifest]:
    clips = []
    for i in range(spec.identity_count):
        profile = generate_identity(spec, i)
        for c in range(spec.clips_per_identity):
            seq = render_sequence(profile, clip_seed(spec, i, c), spec.frames_per_clip)
            clips.append(LabeledSequence(seq, i, f"id{i:03d}_clip{c:03d}", f"id_{i:03d}", 30.0))
    return clips, split_dataset(clips, 0.8, spec.seed)


def nearest_centroid_accuracy(clips, manifest: SplitManifest) -> float:
    """Test accuracy of a nearest-centroid classifier on time-averaged (x, y) poses."""
    by_id = {c.clip_id: c for c in clips}

    def feature(c):
        return c.sequence.data[:2].mean(axis=1).reshape(-1)

    train = [by_id[i] for i in manifest.train]
    labels = sorted({c.identity for c in train})
    centroids = np.stack([np.mean([feature(c) for c in train if c.identity == k], axis=0) for k in labels])
    correct = 0
    for cid in manifest.test:
        c = by_id[cid]
        d = ((centroids - feature(c)) ** 2).sum(axis=1)
        correct += labels[int(np.argmin(d))] == c.identity
    return correct / len(manifest.test)


# -- on-disk corpus ---------------------------------------------------------

META_FILE = "corpus.meta"
SPLIT_FILE = "split.json"
LABELS_FILE = "labels.map"
# JSON files in a corpus directory that are not keypoint files
NON_CLIP_FILES = (SPLIT_FILE, "run_manifest.json")


def write_corpus(clips, manifest: SplitManifest, out_dir, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = {c.label: c.identity for c in clips}
    write_labels_map(labels, out / LABELS_FILE)
    for c in clips:
        write_sequence_file(c, out / f"{c.clip_id}.json")
    (out / SPLIT_FILE).write_text(manifest.to_json() + "\n", encoding="utf-8")
    (out / META_FILE).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def corpus_meta(spec: CorpusSpec) -> dict:
    """Provenance record; synthetic clips are already at model frame rate."""
    return {"generator": "synthetic", "spec": asdict(spec), "frame_skip": 1}


def load_corpus(corpus_dir) -> tuple[list[LabeledSequence], SplitManifest, dict]:
    root = Path(corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    labels = read_labels_map(root / LABELS_FILE)
    meta = json.loads((root / META_FILE).read_text(encoding="utf-8")) if (root / META_FILE).exists() else {}
    clips = [load_sequence_file(p, labels) for p in sorted(root.glob("*.json")) if p.name not in NON_CLIP_FILES]
    if (root / SPLIT_FILE).exists():
        manifest = SplitManifest.from_json((root / SPLIT_FILE).read_text(encoding="utf-8"))
    else:
        manifest = split_dataset(clips, 0.8, int(meta.get("seed", 0)))
    return clips, manifest, meta
