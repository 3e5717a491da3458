"""Desk-scale stand-in for a vision-language detector.

Vision path: two frozen tanh conv layers -> frozen conv (the pre-trained
branch) with a conv RDB beside it -> 2x2 average pool -> frozen linear
projection to the text space (and a frozen box head).
Language path: per-class unit "text" vectors -> frozen linear (the
pre-trained branch) with a linear RDB beside it.
Classification is softmax over cosine similarity between the two.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensorcore as tc
from .errors import DomainError, PretrainConvergenceError, StateError
from .optim import OptimState, adamw_step
from .rdb import BranchParams, FusedBranch, Rdb, consolidate_with_pretrained, rdb_forward
from .taskgen import ImageSpec, TaskDataset, gen_general
from .tensorcore import Tensor, no_grad

log = logging.getLogger(__name__)

MODALITIES = ("V", "L", "VL")
PROBE_SIZE = 16


@dataclass
class ModelDims:
    in_channels: int = 3
    channels: int = 8
    image_size: int = 8
    embed_dim: int = 16
    n_general: int = 10
    n_classes_total: int = 35
    pool: int = 2
    temperature: float = 3.0
    s_init_language: float = 1.0
    s_init_vision: float = 0.1
    ptb_gain: float = 0.3

    def __post_init__(self):
        for k in ("in_channels", "channels", "image_size", "embed_dim", "n_general", "n_classes_total", "pool"):
            if getattr(self, k) < 1:
                raise DomainError(f"{k} must be >= 1")
        if self.image_size % self.pool:
            raise DomainError("pool size must divide image size")
        if self.n_classes_total < self.n_general:
            raise DomainError("n_classes_total must cover the general classes")

    @property
    def pooled_dim(self) -> int:
        return self.channels * (self.image_size // self.pool) ** 2


@dataclass
class PretrainConfig:
    general_per_class: int = 50
    lr: float = 1e-2
    batch_size: int = 25
    min_epochs: int = 10
    max_epochs: int = 60
    target_accuracy: float = 0.9


@dataclass
class ToyVlodModel:
    dims: ModelDims
    seed: int
    enc1: BranchParams
    enc2: BranchParams
    vision_ptb: BranchParams
    language_ptb: BranchParams
    proj: BranchParams
    box_head: BranchParams
    class_prototypes: Tensor
    rdb_vision: Rdb
    rdb_language: Rdb
    probe_images: np.ndarray
    pretrain_accuracy: float = float("nan")
    fused: dict[str, FusedBranch] | None = field(default=None, repr=False)

    @property
    def temperature(self) -> float:
        return self.dims.temperature

    def frozen_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name in ("enc1", "enc2", "vision_ptb", "language_ptb", "proj", "box_head"):
            bp = getattr(self, name)
            out[f"{name}.weight"] = bp.weight
            out[f"{name}.bias"] = bp.bias
        out["class_prototypes"] = self.class_prototypes
        return out

    def rdb_parameters(self) -> dict[str, Tensor]:
        out = {}
        for side, rdb in (("rdb_vision", self.rdb_vision), ("rdb_language", self.rdb_language)):
            for k, t in rdb.parameters().items():
                out[f"{side}.{k}"] = t
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.frozen_parameters(), **self.rdb_parameters()}

    def frozen_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in self.frozen_parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def prototypes_for(self, class_ids) -> Tensor:
        return Tensor(self.class_prototypes.data[np.asarray(class_ids, dtype=np.int64)])

    def invalidate_fused(self):
        self.fused = None


class Batch(NamedTuple):
    images: np.ndarray
    class_text_ids: list[int]
    labels: np.ndarray
    box_targets: np.ndarray


class ForwardOutput(NamedTuple):
    logits: Tensor
    boxes: Tensor
    rdb_outputs: list[Tensor]
    hlrb_scaled_outputs: list[Tensor]


def batch_from(ds: TaskDataset, idx=None) -> Batch:
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    return Batch(ds.images[idx], list(ds.class_ids), ds.local_labels[idx], ds.boxes[idx])


def _conv(shape, rng, scale=None):
    fan_in = int(np.prod(shape[1:]))
    scale = scale if scale is not None else 1.0 / np.sqrt(fan_in)
    return rng.normal(0.0, scale, size=shape)


def init_model(dims: ModelDims, seed: int) -> ToyVlodModel:
    """Randomly initialised model with zero RDBs (before general-domain pretraining)."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 101])
    c, d = dims.channels, dims.embed_dim

    def branch(kind, shape, padding=0, scale=None):
        return BranchParams(kind, Tensor(_conv(shape, rng, scale)), Tensor(np.zeros(shape[0])), padding)

    protos = rng.normal(size=(dims.n_classes_total, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    vptb = branch("conv", (c, c, 3, 3), 1, scale=0.05)
    vptb.weight.data[:, :, 1, 1] += dims.ptb_gain * np.eye(c)
    lptb = branch("linear", (d, d), scale=0.05)
    lptb.weight.data += dims.ptb_gain * np.eye(d)
    return ToyVlodModel(
        dims=dims,
        seed=seed,
        enc1=branch("conv", (c, dims.in_channels, 3, 3), 1),
        enc2=branch("conv", (c, c, 3, 3), 1),
        vision_ptb=vptb,
        language_ptb=lptb,
        proj=branch("linear", (d, dims.pooled_dim)),
        box_head=branch("linear", (4, dims.pooled_dim)),
        class_prototypes=Tensor(protos),
        rdb_vision=Rdb.zeros("conv", (c, c, 3, 3), 1, s_init=dims.s_init_vision),
        rdb_language=Rdb.zeros("linear", (d, d), s_init=dims.s_init_language),
        probe_images=np.zeros((0, dims.in_channels, dims.image_size, dims.image_size)),
    )


def _encode(model: ToyVlodModel, images: np.ndarray) -> Tensor:
    x = Tensor(images)
    h = tc.tanh(model.enc1.forward(x))
    return tc.tanh(model.enc2.forward(h))


def _add_noise(t: Tensor, sigma: float, rng) -> Tensor:
    if sigma == 0:
        return t
    rms = float(np.sqrt(np.mean(t.data ** 2)))
    return tc.add(t, Tensor(rng.normal(0.0, sigma * rms, size=t.shape)))


def model_forward(model: ToyVlodModel, batch: Batch, mode: str = "train", modalities: str = "VL",
                  noise: tuple[float, np.random.Generator] | None = None) -> ForwardOutput:
    """Run both paths.

    mode: "train" (PTB + RDB branches), "fused_inference" (consolidated
    single branches) or "ptb_only" (RDBs ignored entirely).
    """
    if mode not in ("train", "fused_inference", "ptb_only"):
        raise DomainError(f"unknown mode {mode!r}")
    if mode == "fused_inference" and model.fused is None:
        raise StateError("fused_inference requires consolidate() first")
    rdb_outs, hlrb_outs = [], []

    h = _encode(model, batch.images)
    protos = model.prototypes_for(batch.class_text_ids)

    if mode == "fused_inference":
        v = model.fused["vision"].forward(h)
        t = model.fused["language"].forward(protos)
    else:
        v = model.vision_ptb.forward(h)
        t = model.language_ptb.forward(protos)
        if mode == "train":
            if "V" in modalities:
                r = rdb_forward(model.rdb_vision, h)
                v = tc.add(v, r.output)
                rdb_outs.append(r.output)
                hlrb_outs.append(r.hlrb_scaled)
            if "L" in modalities:
                r = rdb_forward(model.rdb_language, protos)
                t = tc.add(t, r.output)
                rdb_outs.append(r.output)
                hlrb_outs.append(r.hlrb_scaled)

    if noise is not None:
        sigma, rng = noise
        v = _add_noise(v, sigma, rng)
        t = _add_noise(t, sigma, rng)

    pooled = tc.avg_pool2d(v, model.dims.pool)
    pooled = tc.reshape(pooled, (pooled.shape[0], -1))
    feats = model.proj.forward(pooled)
    boxes = model.box_head.forward(pooled)
    logits = tc.cosine_logits(feats, t, model.temperature)
    return ForwardOutput(logits, boxes, rdb_outs, hlrb_outs)


def consolidate(model: ToyVlodModel) -> ToyVlodModel:
    model.fused = {
        "vision": consolidate_with_pretrained(model.rdb_vision, model.vision_ptb),
        "language": consolidate_with_pretrained(model.rdb_language, model.language_ptb),
    }
    return model


def task_losses(out: ForwardOutput, batch: Batch) -> tuple[Tensor, Tensor]:
    l_cls = tc.softmax_cross_entropy(out.logits, batch.labels)
    l_loc = tc.reduce_norm(tc.sub(out.boxes, Tensor(batch.box_targets)), "smooth_l1_mean")
    return l_cls, l_loc


def accuracy(model: ToyVlodModel, ds: TaskDataset, mode: str = "fused_inference", modalities: str = "VL",
             noise=None) -> float:
    with no_grad():
        out = model_forward(model, batch_from(ds), mode, modalities, noise)
    pred = np.argmax(out.logits.data, axis=1)
    return float(np.mean(pred == ds.local_labels))


def build_pretrained(dims: ModelDims | None = None, seed: int = 0, cfg: PretrainConfig | None = None,
                     spec: ImageSpec | None = None) -> ToyVlodModel:
    """Initialise and train the frozen parts on the general domain.

    RDBs stay exactly zero. Raises PretrainConvergenceError if held-out
    general accuracy never reaches the target.
    """
    dims = dims or ModelDims()
    cfg = cfg or PretrainConfig()
    spec = spec or ImageSpec(channels=dims.in_channels, size=dims.image_size)
    model = init_model(dims, seed)
    train, holdout = gen_general(seed, dims.n_general, cfg.general_per_class, spec)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 202])

    params = {k: v for k, v in model.frozen_parameters().items() if k != "class_prototypes"}
    for p in params.values():
        p.requires_grad = True
    state = OptimState(weight_decay=0.0)
    acc = 0.0
    try:
        for epoch in range(cfg.max_epochs):
            perm = rng.permutation(len(train))
            for start in range(0, len(perm), cfg.batch_size):
                batch = batch_from(train, perm[start:start + cfg.batch_size])
                out = model_forward(model, batch, "ptb_only")
                l_cls, l_loc = task_losses(out, batch)
                loss = tc.add(l_cls, l_loc)
                for p in params.values():
                    p.zero_grad()
                tc.backward(loss)
                adamw_step(params, state, cfg.lr)
            acc = accuracy(model, holdout, "ptb_only")
            log.debug("pretrain epoch %d holdout acc %.4f", epoch, acc)
            if acc >= cfg.target_accuracy and epoch + 1 >= cfg.min_epochs:
                break
        else:
            raise PretrainConvergenceError(
                f"general-domain accuracy {acc:.3f} < {cfg.target_accuracy} after {cfg.max_epochs} epochs"
            )
    finally:
        for p in params.values():
            p.requires_grad = False
            p.zero_grad()

    model.probe_images = train.images[rng.choice(len(train), PROBE_SIZE, replace=False)].copy()
    model.pretrain_accuracy = acc
    consolidate(model)
    return model


def noise_probe(model: ToyVlodModel, dataset: TaskDataset, sigmas, seed: int = 0) -> list[tuple[float, float]]:
    """Accuracy with Gaussian noise (std = sigma * feature RMS) on both detector inputs."""
    sigmas = [float(s) for s in sigmas]
    if any(s < 0 for s in sigmas) or sigmas != sorted(sigmas):
        raise DomainError("sigmas must be non-negative and sorted ascending")
    mode = "fused_inference" if model.fused is not None else "train"
    out = []
    for i, sigma in enumerate(sigmas):
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, i, 303])
        noise = None if sigma == 0 else (sigma, rng)
        out.append((sigma, accuracy(model, dataset, mode, noise=noise)))
    return out
