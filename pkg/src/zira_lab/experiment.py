"""Glue between an ExperimentConfig and the library: pretrain, build tasks, run a method."""
from __future__ import annotations

import copy

from .config import ExperimentConfig
from .evalkit import RunRecord
from .taskgen import gen_general, gen_task_sequence
from .toymodel import ToyVlodModel, build_pretrained
from .trainer import run_incremental_sequence


def pretrain(cfg: ExperimentConfig, seed: int) -> ToyVlodModel:
    return build_pretrained(cfg.model_dims(), seed, cfg.pretrain, cfg.image_spec())


def general_holdout(cfg: ExperimentConfig, seed: int):
    return gen_general(seed, cfg.model.n_general, cfg.pretrain.general_per_class, cfg.image_spec())[1]


def task_sequence(cfg: ExperimentConfig, seed: int):
    t = cfg.tasks
    return gen_task_sequence(seed, t.n_tasks, t.classes_per_task, t.shots, t.shift_strength,
                             first_class_id=cfg.model.n_general, spec=cfg.image_spec())


def run_method(cfg: ExperimentConfig, seed: int, method: str | None = None,
               model: ToyVlodModel | None = None) -> RunRecord:
    """One full incremental run. `model` (if given) is copied, never mutated."""
    model = copy.deepcopy(model) if model is not None else pretrain(cfg, seed)
    train_cfg = cfg.train_config(method)
    snapshot = cfg.to_dict()
    snapshot["train"]["method"] = method or cfg.train.method
    snapshot["resolved_train"] = train_cfg.snapshot()
    return run_incremental_sequence(model, task_sequence(cfg, seed), train_cfg, general_holdout(cfg, seed),
                                    seed, snapshot)
