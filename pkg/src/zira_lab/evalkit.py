"""Scores for an incremental run: zero-shot retention, downstream average and their harmonic mean."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .taskgen import TaskDataset
from .toymodel import ToyVlodModel, accuracy, consolidate


def hap(z: float, a: float) -> float:
    """Harmonic mean of zero-shot retention and downstream average."""
    if z < 0 or a < 0:
        raise DomainError("hap arguments must be non-negative")
    if z + a == 0:
        raise DomainError("hap undefined when both scores are zero")
    return 2.0 * z * a / (z + a)


@dataclass
class RunRecord:
    config: dict
    seed: int
    zcoco_analogue: float
    per_task_acc: dict[str, float]
    avg: float | None
    hap: float | None
    norm_curves: list[dict] = field(default_factory=list)
    noise_curve: list[list[float]] | None = None
    pretrain_accuracy: float | None = None
    task_summaries: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.per_task_acc:
            expect = float(np.mean(list(self.per_task_acc.values())))
            if self.avg is None or not math.isclose(self.avg, expect, rel_tol=0, abs_tol=1e-12):
                raise DomainError("avg must equal the mean of per-task accuracies")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)

    def final_norm(self, modality: str | None = None) -> float:
        """Last recorded probe norm, averaged over modalities unless one is named."""
        if not self.norm_curves:
            return 0.0
        last = max((r["task_index"], r["epoch"]) for r in self.norm_curves)
        vals = [r["mean_l1_norm"] for r in self.norm_curves
                if (r["task_index"], r["epoch"]) == last and (modality is None or r["modality"] == modality)]
        return float(np.mean(vals))


def eval_zero_shot(model: ToyVlodModel, general_holdout: TaskDataset) -> float:
    if len(general_holdout) == 0:
        raise DomainError("empty holdout set")
    if model.fused is None:
        consolidate(model)
    return accuracy(model, general_holdout, "fused_inference")


def eval_task(model: ToyVlodModel, holdout: TaskDataset) -> float:
    if model.fused is None:
        consolidate(model)
    return accuracy(model, holdout, "fused_inference")


def evaluate_sequence(model, tasks, general_holdout, seed, config_snapshot, logs) -> RunRecord:
    consolidate(model)
    z = eval_zero_shot(model, general_holdout)
    per_task = {t.name: eval_task(model, t.holdout) for t in tasks}
    avg = float(np.mean(list(per_task.values()))) if per_task else None
    h = hap(z, avg) if avg is not None and z + avg > 0 else None
    curves = [row for tl in logs for row in tl.norms]
    summaries = [{
        "task": tl.task,
        "task_index": tl.task_index,
        "steps": len(tl.steps),
        "final": tl.steps[-1] if tl.steps else None,
        "l_hlrb_at_start": tl.l_hlrb_at_start,
        "merge_max_rel_diff": tl.merge_max_rel_diff,
    } for tl in logs]
    return RunRecord(config_snapshot, int(seed), z, per_task, avg, h, curves,
                     pretrain_accuracy=model.pretrain_accuracy, task_summaries=summaries)
