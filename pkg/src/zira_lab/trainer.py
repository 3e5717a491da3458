"""Incremental adaptation protocol and its ablation variants.

ZiRa per task: zero the fast branch, train with the slow branch at eta x
the fast learning rate under L_cls + L_loc + lambda * ZiL, then fold the
fast branch into the slow one.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensorcore as tc
from .errors import DomainError, TrainingError
from .evalkit import RunRecord, evaluate_sequence
from .optim import OptimState, adamw_step
from .rdb import merge_hlrb_into_llrb, rdb_forward, reset_hlrb
from .taskgen import DownstreamTask, TaskDataset
from .tensorcore import Tensor, no_grad
from .toymodel import ToyVlodModel, batch_from, model_forward, task_losses
from .zil import ZilConfig, loss_hlrb, loss_rdb, total_loss

__all__ = ["TrainConfig", "TaskLog", "METHODS", "method_config", "adamw_step", "train_task",
           "run_incremental_sequence", "probe_norms"]

log = logging.getLogger(__name__)

STRUCTURES = ("SB", "DB", "RDB", "full_finetune")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    lr_hlrb: float = 1e-3
    eta: float = 0.2
    lr_decay_factor: float = 0.1
    epochs: int = 2
    batch_size: int = 2
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    zil: ZilConfig = field(default_factory=ZilConfig)
    use_rdb_term: bool = True
    use_hlrb_term: bool = True
    rep_plus: bool = True
    structure: str = "RDB"
    modalities: str = "VL"
    carry_s: bool = False
    full_finetune_lr: float = 1e-4

    def __post_init__(self):
        if isinstance(self.zil, dict):
            self.zil = ZilConfig(**self.zil)
        self.betas = tuple(self.betas)
        if not self.lr_hlrb > 0:
            raise DomainError("lr_hlrb must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError("eta must lie in [0, 1]")
        if self.structure not in STRUCTURES:
            raise DomainError(f"structure must be one of {STRUCTURES}")
        if self.modalities not in ("V", "L", "VL"):
            raise DomainError("modalities must be V, L or VL")
        if self.rep_plus and self.structure != "RDB":
            raise DomainError(f"rep_plus needs the RDB structure, got {self.structure}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr_hlrb * (self.lr_decay_factor if epoch >= 1 else 1.0)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# Named presets for the ablation rows. Each maps to overrides on a TrainConfig.
METHODS: dict[str, dict] = {
    "zira": dict(structure="RDB", rep_plus=True, use_rdb_term=True, use_hlrb_term=True),
    "rdb": dict(structure="RDB", rep_plus=True, use_rdb_term=True, use_hlrb_term=True),
    "baseline": dict(structure="DB", rep_plus=False, use_rdb_term=False, use_hlrb_term=False),
    "rep-only": dict(structure="RDB", rep_plus=True, use_rdb_term=False, use_hlrb_term=False),
    "zil-only": dict(structure="DB", rep_plus=False, use_rdb_term=True, use_hlrb_term=True),
    "db": dict(structure="DB", rep_plus=False, use_rdb_term=True, use_hlrb_term=True),
    "sb": dict(structure="SB", rep_plus=False, use_rdb_term=True, use_hlrb_term=False),
    "rdb-loss-only": dict(structure="RDB", rep_plus=True, use_rdb_term=True, use_hlrb_term=False),
    "hlrb-loss-only": dict(structure="RDB", rep_plus=True, use_rdb_term=False, use_hlrb_term=True),
    "v-only": dict(structure="RDB", rep_plus=True, use_rdb_term=True, use_hlrb_term=True, modalities="V"),
    "l-only": dict(structure="RDB", rep_plus=True, use_rdb_term=True, use_hlrb_term=True, modalities="L"),
    "full-finetune": dict(structure="full_finetune", rep_plus=False, use_rdb_term=False, use_hlrb_term=False),
}


def method_config(base: TrainConfig, method: str) -> TrainConfig:
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    return replace(base, **METHODS[method])


@dataclass
class TaskLog:
    task: str
    task_index: int
    steps: list[dict] = field(default_factory=list)
    epoch_lrs: list[dict[str, float]] = field(default_factory=list)
    norms: list[dict] = field(default_factory=list)
    l_hlrb_at_start: float | None = None
    merge_max_rel_diff: float | None = None


def _active_rdbs(model: ToyVlodModel, cfg: TrainConfig):
    out = []
    if "V" in cfg.modalities:
        out.append(("rdb_vision", model.rdb_vision))
    if "L" in cfg.modalities:
        out.append(("rdb_language", model.rdb_language))
    return out


def trainable_groups(model: ToyVlodModel, cfg: TrainConfig) -> tuple[dict[str, Tensor], dict[str, float]]:
    """Parameters to optimise and their learning-rate multipliers."""
    params: dict[str, Tensor] = {}
    mult: dict[str, float] = {}
    if cfg.structure == "full_finetune":
        for name in ("vision_ptb", "language_ptb"):
            bp = getattr(model, name)
            for k, t in (("weight", bp.weight), ("bias", bp.bias)):
                params[f"{name}.{k}"] = t
                mult[f"{name}.{k}"] = cfg.full_finetune_lr / cfg.lr_hlrb
        return params, mult
    slow = cfg.eta if cfg.rep_plus else 1.0
    for side, rdb in _active_rdbs(model, cfg):
        params[f"{side}.llrb.weight"] = rdb.llrb.weight
        params[f"{side}.llrb.bias"] = rdb.llrb.bias
        mult[f"{side}.llrb.weight"] = mult[f"{side}.llrb.bias"] = slow
        if cfg.structure == "SB":
            continue
        for k in ("hlrb.weight", "hlrb.bias", "s"):
            params[f"{side}.{k}"] = rdb.parameters()[k]
            mult[f"{side}.{k}"] = 1.0
    return params, mult


def probe_norms(model: ToyVlodModel) -> dict[str, float]:
    """Mean |RDB output| on the fixed probe inputs (general images / general text vectors)."""
    with no_grad():
        h = tc.tanh(model.enc2.forward(tc.tanh(model.enc1.forward(Tensor(model.probe_images)))))
        v = rdb_forward(model.rdb_vision, h).output
        t = rdb_forward(model.rdb_language, model.prototypes_for(range(model.dims.n_general))).output
    return {"V": float(np.mean(np.abs(v.data))), "L": float(np.mean(np.abs(t.data)))}


def _zero() -> Tensor:
    return Tensor(np.array(0.0))


def _set_trainable(model: ToyVlodModel, params: dict[str, Tensor]):
    for t in model.named_parameters().values():
        t.requires_grad = False
        t.zero_grad()
    for t in params.values():
        t.requires_grad = True


def train_task(model: ToyVlodModel, task: TaskDataset, cfg: TrainConfig, rng: np.random.Generator,
               task_index: int = 0) -> TaskLog:
    if len(task) == 0:
        raise DomainError(f"task {task.name} has no training samples")
    model.invalidate_fused()
    params, mult = trainable_groups(model, cfg)
    _set_trainable(model, params)
    state = OptimState(betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay, lr_mult=mult)
    mode = "ptb_only" if cfg.structure == "full_finetune" else "train"
    tlog = TaskLog(task.name, task_index)
    try:
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at_epoch(epoch)
            tlog.epoch_lrs.append({k: lr * m for k, m in mult.items()})
            perm = rng.permutation(len(task))
            for start in range(0, len(perm), cfg.batch_size):
                batch = batch_from(task, perm[start:start + cfg.batch_size])
                out = model_forward(model, batch, mode, cfg.modalities)
                l_cls, l_loc = task_losses(out, batch)
                l_rdb = loss_rdb(out.rdb_outputs, cfg.zil.norm_kind) if out.rdb_outputs else _zero()
                l_hlrb = loss_hlrb(out.hlrb_scaled_outputs, cfg.zil.norm_kind) if out.hlrb_scaled_outputs else _zero()
                loss = total_loss(l_cls, l_loc, l_rdb, l_hlrb, cfg.zil, cfg.use_rdb_term, cfg.use_hlrb_term)
                step = {"epoch": epoch, "l_cls": l_cls.item(), "l_loc": l_loc.item(),
                        "l_rdb": l_rdb.item(), "l_hlrb": l_hlrb.item(), "total": loss.item()}
                tlog.steps.append(step)
                if tlog.l_hlrb_at_start is None:
                    tlog.l_hlrb_at_start = step["l_hlrb"]
                if not step["total"] < DIVERGENCE_LIMIT:
                    raise TrainingError(f"loss diverged ({step['total']:.3g}) on {task.name}", tlog)
                if loss.requires_grad:
                    tc.backward(loss)
                adamw_step(params, state, lr)
                for t in params.values():
                    t.zero_grad()
            for modality, value in probe_norms(model).items():
                tlog.norms.append({"task_index": task_index, "epoch": epoch, "modality": modality,
                                   "mean_l1_norm": value})
    finally:
        for t in params.values():
            t.requires_grad = False
            t.zero_grad()
    return tlog


def _probe_outputs(model: ToyVlodModel, cfg: TrainConfig, general: TaskDataset) -> np.ndarray:
    with no_grad():
        return model_forward(model, batch_from(general, np.arange(min(16, len(general)))), "train",
                             cfg.modalities).logits.data


def run_incremental_sequence(model: ToyVlodModel, tasks: list[DownstreamTask], cfg: TrainConfig,
                             general_holdout: TaskDataset, seed: int = 0,
                             config_snapshot: dict | None = None) -> RunRecord:
    """Train on each task in order and evaluate everything once at the end."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 404])
    reset_s = not cfg.carry_s
    logs = []
    for i, task in enumerate(tasks):
        if cfg.rep_plus:
            for _, rdb in _active_rdbs(model, cfg):
                reset_hlrb(rdb, reset_s)
        tlog = train_task(model, task.train, cfg, rng, i)
        if cfg.rep_plus:
            before = _probe_outputs(model, cfg, general_holdout)
            for _, rdb in _active_rdbs(model, cfg):
                merge_hlrb_into_llrb(rdb, reset_s)
            after = _probe_outputs(model, cfg, general_holdout)
            tlog.merge_max_rel_diff = float(np.max(np.abs(after - before) / np.maximum(np.abs(before), 1e-12)))
        log.info("task %d (%s): final total loss %.4f", i, task.name, tlog.steps[-1]["total"])
        logs.append(tlog)
    snapshot = config_snapshot if config_snapshot is not None else {"train": cfg.snapshot()}
    return evaluate_sequence(model, tasks, general_holdout, seed, snapshot, logs)
