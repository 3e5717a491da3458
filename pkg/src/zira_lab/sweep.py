"""Cartesian ablation grids over config axes, with per-cell failure capture and CSV output."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from statistics import median

from .config import ExperimentConfig
from .errors import ZiraError
from .evalkit import RunRecord
from .experiment import pretrain, run_method

log = logging.getLogger(__name__)

THREADS_ENV = "ZIRA_LAB_THREADS"


@dataclass
class GridCell:
    values: dict
    seed: int
    record: RunRecord | None = None
    error: str | None = None


def worker_count(default: int | None = None) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return default or 1


def _run_cell(base: ExperimentConfig, values: dict, seed: int) -> GridCell:
    try:
        cfg = base
        for axis, value in values.items():
            cfg = cfg.with_override(axis, value)
        return GridCell(values, seed, run_method(cfg, seed))
    except ZiraError as e:
        return GridCell(values, seed, error=f"{type(e).__name__}: {e}")


def run_ablation_grid(base: ExperimentConfig, axes: dict[str, list], seeds=None,
                      workers: int | None = None) -> list[GridCell]:
    """Run every combination of axis values for every seed; failures are kept per cell."""
    seeds = list(base.seeds if seeds is None else seeds)
    names = list(axes)
    combos = [dict(zip(names, vals)) for vals in itertools.product(*(axes[n] for n in names))] or [{}]
    jobs = [(values, seed) for values in combos for seed in seeds]
    workers = workers or worker_count()
    if workers <= 1:
        cells = [_run_cell(base, v, s) for v, s in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, base, v, s) for v, s in jobs]
            cells = [f.result() for f in futures]
    for c in cells:
        if c.error:
            log.warning("cell %s seed %d failed: %s", c.values, c.seed, c.error)
    return cells


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def grid_csv(cells: list[GridCell], axes: list[str]) -> str:
    ok = [c for c in cells if c.record is not None]
    n_tasks = max((len(c.record.per_task_acc) for c in ok), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*axes, "seed", "zcoco", "avg", "hap", *[f"task_{i}" for i in range(n_tasks)]])
    for c in ok:
        r = c.record
        accs = list(r.per_task_acc.values())
        w.writerow([*(c.values[a] for a in axes), c.seed, _fmt(r.zcoco_analogue), _fmt(r.avg), _fmt(r.hap),
                    *(_fmt(a) for a in accs), *([""] * (n_tasks - len(accs)))])
    return buf.getvalue()


def median_table(cells: list[GridCell], axes: list[str]) -> list[dict]:
    """Per-cell medians over seeds of zcoco, avg, hap and the final probe norm."""
    groups: dict[tuple, list[RunRecord]] = {}
    for c in cells:
        if c.record is not None:
            groups.setdefault(tuple(c.values[a] for a in axes), []).append(c.record)
    rows = []
    for key, recs in groups.items():
        rows.append({
            **dict(zip(axes, key)),
            "n_seeds": len(recs),
            "zcoco": median(r.zcoco_analogue for r in recs),
            "avg": median(r.avg for r in recs if r.avg is not None) if any(r.avg is not None for r in recs) else None,
            "hap": median(r.hap for r in recs if r.hap is not None) if any(r.hap is not None for r in recs) else None,
            "final_norm": median(r.final_norm() for r in recs),
        })
    return rows


def medians_csv(rows: list[dict], axes: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["n_seeds", "zcoco", "avg", "hap", "final_norm"]
    w.writerow([*axes, *cols])
    for r in rows:
        w.writerow([*(r[a] for a in axes), r["n_seeds"], *(_fmt(r[c]) if c != "n_seeds" else r[c] for c in cols[1:])])
    return buf.getvalue()
