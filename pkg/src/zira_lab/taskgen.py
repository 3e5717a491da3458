"""Seeded Gaussian-blob datasets: one general domain plus a sequence of shifted downstream tasks.

Each class is a coloured blob with its own location and scale. A sample
jitters position, scale and amplitude and adds pixel noise; its box target
is the blob's 2-sigma bounding box in normalised image coordinates.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

FULL_SHOTS = 50
HOLDOUT_PER_CLASS = 20
SHOTS = {"1": 1, "5": 5, "10": 10, "full": FULL_SHOTS}


@dataclass
class ImageSpec:
    channels: int = 3
    size: int = 8
    center_jitter: float = 0.3
    scale_jitter: float = 0.1
    pixel_noise: float = 0.05


@dataclass
class TaskDataset:
    name: str
    kind: str
    images: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray
    class_ids: list[int]
    split: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def local_labels(self) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_ids)}
        return np.array([index[int(c)] for c in self.labels], dtype=np.int64)

    def samples(self):
        return list(zip(self.images, self.labels.tolist(), self.boxes))

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.images, self.labels, self.boxes):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr((self.name, self.kind, self.class_ids, self.split)).encode())
        return h.hexdigest()


@dataclass
class DownstreamTask:
    name: str
    train: TaskDataset
    holdout: TaskDataset

    @property
    def class_ids(self) -> list[int]:
        return self.train.class_ids


def class_pattern(seed: int, class_id: int, spec: ImageSpec) -> tuple[np.ndarray, float, np.ndarray]:
    """Centre (x, y), blob scale and per-channel colour of one class."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, class_id, 11])
    lo, hi = 1.5, spec.size - 2.5
    center = rng.uniform(lo, hi, size=2)
    scale = rng.uniform(0.7, 1.6)
    color = rng.normal(size=spec.channels)
    color /= np.linalg.norm(color)
    return center, scale, color


def render_blob(center, scale, color, amplitude, size) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    g = np.exp(-((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / (2.0 * scale * scale))
    return amplitude * color[:, None, None] * g[None, :, :]


def blob_box(center, scale, size) -> np.ndarray:
    half = 2.0 * scale
    box = np.array([center[0] - half, center[1] - half, center[0] + half, center[1] + half]) / size
    return np.clip(box, 0.0, 1.0)


def _render_split(rng, seed, class_ids, per_class, spec, gain=None, offset=None):
    n = len(class_ids) * per_class
    images = np.empty((n, spec.channels, spec.size, spec.size))
    labels = np.empty(n, dtype=np.int64)
    boxes = np.empty((n, 4))
    patterns = {c: class_pattern(seed, c, spec) for c in class_ids}
    i = 0
    for _ in range(per_class):
        for c in class_ids:
            center, scale, color = patterns[c]
            ctr = center + rng.normal(0.0, spec.center_jitter, size=2)
            sc = scale * np.exp(rng.normal(0.0, spec.scale_jitter))
            amp = rng.uniform(0.8, 1.2)
            img = render_blob(ctr, sc, color, amp, spec.size)
            img = img + rng.normal(0.0, spec.pixel_noise, size=img.shape)
            if gain is not None:
                img = gain[:, None, None] * img + offset[:, None, None]
            images[i], labels[i], boxes[i] = img, c, blob_box(ctr, sc, spec.size)
            i += 1
    return images, labels, boxes


def gen_general(seed: int, n_classes: int = 10, per_class: int = 50, spec: ImageSpec | None = None,
                holdout_per_class: int = HOLDOUT_PER_CLASS) -> tuple[TaskDataset, TaskDataset]:
    if n_classes < 2:
        raise DomainError("the general domain needs at least two classes")
    spec = spec or ImageSpec()
    class_ids = list(range(n_classes))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 1])
    tr = _render_split(rng, seed, class_ids, per_class, spec)
    ho = _render_split(rng, seed, class_ids, holdout_per_class, spec)
    return (TaskDataset("general", "general", *tr, class_ids, "train"),
            TaskDataset("general", "general", *ho, class_ids, "holdout"))


def task_shift(seed: int, group: int, shift_strength: float, channels: int):
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, group, 23])
    gain = np.exp(shift_strength * 0.5 * rng.normal(size=channels))
    offset = shift_strength * 0.3 * rng.normal(size=channels)
    return gain, offset


def gen_task_sequence(seed: int, n_tasks: int = 5, classes_per_task: int = 5, shots="full",
                      shift_strength: float = 1.0, first_class_id: int = 10,
                      spec: ImageSpec | None = None) -> list[DownstreamTask]:
    """Downstream tasks with disjoint class ids, presented in a seed-shuffled order.

    Task groups own fixed class-id ranges; only their order and appearance
    depend on the seed.
    """
    if n_tasks < 1:
        raise DomainError("need at least one task")
    if shift_strength < 0:
        raise DomainError("shift_strength must be non-negative")
    key = str(shots)
    if key not in SHOTS:
        raise DomainError(f"shots must be one of {sorted(SHOTS)}, got {shots!r}")
    per_class = SHOTS[key]
    spec = spec or ImageSpec()
    order = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 5]).permutation(n_tasks)
    tasks = []
    for group in order.tolist():
        ids = list(range(first_class_id + group * classes_per_task, first_class_id + (group + 1) * classes_per_task))
        gain, offset = task_shift(seed, group, shift_strength, spec.channels)
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, group, 3])
        name = f"task{group}"
        meta = {"group": group, "gain": gain.tolist(), "offset": offset.tolist()}
        tr = _render_split(rng, seed, ids, per_class, spec, gain, offset)
        ho = _render_split(rng, seed, ids, HOLDOUT_PER_CLASS, spec, gain, offset)
        tasks.append(DownstreamTask(
            name,
            TaskDataset(name, "downstream", *tr, ids, "train", meta),
            TaskDataset(name, "downstream", *ho, ids, "holdout", meta),
        ))
    return tasks


def save_datasets(path: str | Path, datasets: list[TaskDataset]):
    """Write datasets to one uncompressed .npz blob (deterministic bytes)."""
    arrays = {}
    for i, ds in enumerate(datasets):
        arrays[f"{i}/images"] = ds.images
        arrays[f"{i}/labels"] = ds.labels
        arrays[f"{i}/boxes"] = ds.boxes
        arrays[f"{i}/class_ids"] = np.array(ds.class_ids, dtype=np.int64)
        arrays[f"{i}/header"] = np.array([ds.name, ds.kind, ds.split])
    np.savez(path, **arrays)


def load_datasets(path: str | Path) -> list[TaskDataset]:
    with np.load(path) as z:
        n = len({k.split("/")[0] for k in z.files})
        out = []
        for i in range(n):
            name, kind, split = (str(v) for v in z[f"{i}/header"])
            out.append(TaskDataset(name, kind, z[f"{i}/images"], z[f"{i}/labels"], z[f"{i}/boxes"],
                                   z[f"{i}/class_ids"].tolist(), split))
    return out
