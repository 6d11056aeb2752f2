"""Keypoint data model: skeleton graphs, clip files, normalization, resampling, splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CHANNELS = 3
DEFAULT_FRAMES = 60
PRESETS = {
    "body17": ("coco_body_17.edges", "coco_body_17.pose", 17),
    "wholebody133": ("coco_wholebody_133.edges", "coco_wholebody_133.pose", 133),
}


class IngestionError(ValueError):
    """Input data violates the keypoint or edge-table contract."""


class ParseError(IngestionError):
    pass


class SchemaError(IngestionError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SkeletonGraph:
    vertex_count: int
    edges: tuple[tuple[int, int], ...]
    normalized_adjacency: np.ndarray = field(repr=False)

    def relabel(self, perm: Sequence[int]) -> "SkeletonGraph":
        """Graph under the relabeling where new vertex ``i`` is old vertex ``perm[i]``."""
        inv = np.argsort(perm)
        return build_skeleton_graph([(int(inv[i]), int(inv[j])) for i, j in self.edges], self.vertex_count)


def build_skeleton_graph(edge_table: Iterable[tuple[int, int]], V: int) -> SkeletonGraph:
    """Symmetric 0/1 adjacency plus self-loops, normalized as D^-1/2 (A + I) D^-1/2."""
    edges = []
    for pair in edge_table:
        i, j = int(pair[0]), int(pair[1])
        if not (0 <= i < V and 0 <= j < V):
            raise IngestionError(f"edge ({i}, {j}) references a vertex outside [0, {V})")
        if i == j:
            raise IngestionError(f"edge ({i}, {j}) is a self-loop")
        edges.append((i, j))
    a = np.eye(V)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return SkeletonGraph(V, tuple(edges), _frozen(d[:, None] * a * d[None, :]))


def read_edge_table(path) -> list[tuple[int, int]]:
    edges = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer vertex index in {line!r}") from None
    return edges


def _data_file(name: str) -> Path:
    return Path(str(resources.files("sttrid") / "data" / name))


def skeleton_preset(name: str = "body17") -> SkeletonGraph:
    """Named vertex subset: ``body17`` (COCO body) or ``wholebody133`` (COCO-WholeBody)."""
    if name not in PRESETS:
        raise KeyError(f"unknown skeleton preset {name!r}; choose from {sorted(PRESETS)}")
    edges_file, _, v = PRESETS[name]
    return build_skeleton_graph(read_edge_table(_data_file(edges_file)), v)


def preset_for_vertices(V: int) -> str:
    for name, (_, _, v) in PRESETS.items():
        if v == V:
            return name
    raise KeyError(f"no skeleton preset with {V} vertices")


def canonical_pose(name: str = "body17") -> np.ndarray:
    """Stick-figure (V, 2) layout centred near the origin."""
    _, pose_file, v = PRESETS[name]
    pose = np.loadtxt(_data_file(pose_file), dtype=np.float64)
    assert pose.shape == (v, 2)
    return pose


@dataclass(frozen=True)
class KeypointSequence:
    """(C, T, V, M) coordinates; channel order is x, y, confidence."""

    data: np.ndarray
    short: bool = False
    flagged_frames: tuple[int, ...] = ()

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 4 or data.shape[0] != CHANNELS:
            raise SchemaError(f"keypoint data must be (3, T, V, M), got {data.shape}")
        if not np.isfinite(data).all():
            raise SchemaError("keypoint data contains NaN or Inf")
        conf = data[2]
        if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
            raise SchemaError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def V(self) -> int:
        return self.data.shape[2]

    @property
    def M(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class LabeledSequence:
    sequence: KeypointSequence
    identity: int
    clip_id: str
    label: str = ""
    fps: float = 30.0


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    test: tuple[str, ...]
    ratio: float = 0.8

    def to_json(self) -> str:
        return json.dumps({"ratio": self.ratio, "train": list(self.train), "test": list(self.test)}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        obj = json.loads(text)
        return cls(tuple(obj["train"]), tuple(obj["test"]), float(obj["ratio"]))


# -- keypoint files -----------------------------------------------------------

def read_labels_map(path) -> dict[str, int]:
    labels = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        try:
            label, index = line.split("\t")
            labels[label] = int(index)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: expected 'label<TAB>index', got {line!r}") from None
    if sorted(labels.values()) != list(range(len(labels))):
        raise SchemaError(f"{path}: class indices must be dense from 0")
    return labels


def write_labels_map(labels: Mapping[str, int], path) -> None:
    lines = [f"{label}\t{index}\n" for label, index in sorted(labels.items(), key=lambda kv: kv[1])]
    Path(path).write_text("".join(lines), encoding="utf-8")


def dumps_sequence(item: LabeledSequence) -> str:
    """Serialize one clip, one frame per line; floats use repr so reloads are bit-exact."""
    if item.sequence.M != 1:
        raise SchemaError("keypoint files hold exactly one person")
    data = item.sequence.data[..., 0]
    head = json.dumps({"clip_id": item.clip_id, "identity": item.label, "fps": item.fps})[:-1]
    rows = []
    for t in range(data.shape[1]):
        kps = ",".join(f"[{x!r},{y!r},{c!r}]" for x, y, c in data[:, t, :].T.tolist())
        rows.append(f' {{"index": {t}, "keypoints": [{kps}]}}')
    return head + ', "frames": [\n' + ",\n".join(rows) + "\n]}\n"


def write_sequence_file(item: LabeledSequence, path) -> None:
    Path(path).write_text(dumps_sequence(item), encoding="utf-8")


def _field(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaError(f"{where}: field {key!r} has type {type(value).__name__}")
    return value


def load_sequence_file(
    path,
    labels: Mapping[str, int] | None = None,
    vertices: int | None = None,
    expected_frames: int = DEFAULT_FRAMES,
) -> LabeledSequence:
    """Parse one clip file.

    ``labels`` defaults to the ``labels.map`` next to the file.  Coordinates
    are returned raw.  Clips with fewer than ``expected_frames`` frames are
    accepted and marked ``short``.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: top level must be an object")
    clip_id = _field(obj, "clip_id", str, str(path))
    label = _field(obj, "identity", str, str(path))
    fps = float(_field(obj, "fps", (int, float), str(path)))
    frames = _field(obj, "frames", list, str(path))
    if not frames:
        raise SchemaError(f"{path}: clip has no frames")
    if labels is None:
        sidecar = path.parent / "labels.map"
        if not sidecar.exists():
            raise SchemaError(f"{path}: no labels mapping given and no labels.map beside the file")
        labels = read_labels_map(sidecar)
    if label not in labels:
        raise SchemaError(f"{path}: identity {label!r} missing from labels map")

    rows = []
    for n, frame in enumerate(frames):
        where = f"{path}: frame {n}"
        if not isinstance(frame, dict):
            raise SchemaError(f"{where}: must be an object")
        index = _field(frame, "index", int, where)
        if index != n:
            raise SchemaError(f"{where}: index {index} out of order")
        kps = _field(frame, "keypoints", list, where)
        if vertices is None:
            vertices = len(kps)
        if len(kps) != vertices:
            raise SchemaError(f"{where}: expected {vertices} keypoints, got {len(kps)}")
        for v, kp in enumerate(kps):
            if not isinstance(kp, list) or len(kp) != 3:
                size = len(kp) if isinstance(kp, list) else type(kp).__name__
                raise SchemaError(f"{where} keypoint {v}: expected [x, y, confidence], got {size} values")
            if any(not isinstance(c, (int, float)) or isinstance(c, bool) for c in kp):
                raise SchemaError(f"{where} keypoint {v}: non-numeric value")
        rows.append(kps)
    data = np.asarray(rows, dtype=np.float64).transpose(2, 0, 1)[..., None]
    try:
        seq = KeypointSequence(data, short=len(frames) < expected_frames)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return LabeledSequence(seq, labels[label], clip_id, label, fps)


# -- sequence transforms ----------------------------------------------------

def normalize_sequence(seq: KeypointSequence) -> KeypointSequence:
    """Centre each frame on its confident keypoints, then scale to unit RMS radius.

    Frames with no confident keypoint are left as they are and reported in
    ``flagged_frames``.
    """
    out = seq.data.copy()
    flagged = set()
    for m in range(seq.M):
        xy, conf = out[:2, :, :, m], out[2, :, :, m]
        valid = conf > 0
        live = valid.any(axis=1)
        flagged.update(np.flatnonzero(~live).tolist())
        if not live.any():
            continue
        counts = np.maximum(valid.sum(axis=1), 1)
        centroid = (xy * valid).sum(axis=2) / counts
        xy[:, live, :] -= centroid[:, live, None]
        sq = ((xy ** 2).sum(axis=0) * valid)[live]
        rms = math.sqrt(sq.sum() / valid[live].sum())
        if rms > 0:
            xy[:, live, :] /= rms
    return KeypointSequence(out, seq.short, tuple(sorted(flagged)))


def resample_to_length(seq: KeypointSequence, T_target: int = DEFAULT_FRAMES, frame_skip: int = 2) -> KeypointSequence:
    """Keep every ``frame_skip``-th frame, then centre-crop or pad with the last frame."""
    if seq.T < 1:
        raise ValueError("sequence has no frames")
    data = seq.data[:, ::frame_skip]
    n = data.shape[1]
    if n > T_target:
        start = (n - T_target) // 2
        data = data[:, start:start + T_target]
    elif n < T_target:
        pad = np.repeat(data[:, -1:], T_target - n, axis=1)
        data = np.concatenate([data, pad], axis=1)
    return KeypointSequence(data, short=False, flagged_frames=seq.flagged_frames)


def split_dataset(clips: Sequence[LabeledSequence], ratio: float = 0.8, seed: int = 0) -> SplitManifest:
    """Per-identity clip-level split; clip ids are sorted before the seeded shuffle."""
    groups: dict[int, list[str]] = {}
    seen = set()
    for clip in clips:
        if clip.clip_id in seen:
            raise IngestionError(f"duplicate clip_id {clip.clip_id!r}")
        seen.add(clip.clip_id)
        groups.setdefault(clip.identity, []).append(clip.clip_id)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for identity in sorted(groups):
        ids = sorted(groups[identity])
        if len(ids) < 2:
            raise IngestionError(f"identity {identity} has {len(ids)} clip; a split needs at least 2")
        order = rng.permutation(len(ids))
        n_train = min(max(math.floor(ratio * len(ids) + 0.5), 1), len(ids) - 1)
        train += [ids[i] for i in order[:n_train]]
        test += [ids[i] for i in order[n_train:]]
    return SplitManifest(tuple(train), tuple(test), ratio)
