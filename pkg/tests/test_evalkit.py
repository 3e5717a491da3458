import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zira_lab.config import default_config
from zira_lab.errors import DomainError
from zira_lab.evalkit import RunRecord, eval_zero_shot, hap
from zira_lab.sweep import grid_csv, median_table, medians_csv, run_ablation_grid, worker_count


def test_hap_values():
    assert hap(46.06, 59.73) == pytest.approx(52.01, abs=0.01)
    assert hap(47.37, 46.70) == pytest.approx(47.03, abs=0.01)
    assert hap(0.4, 0.4) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(DomainError):
        hap(0.0, 0.0)
    with pytest.raises(DomainError):
        hap(-1.0, 1.0)


scores = st.floats(0.0, 100.0, allow_nan=False)


@given(scores, scores)
def test_hap_properties(a, b):
    if a + b == 0:
        return
    h = hap(a, b)
    assert h == hap(b, a)
    assert min(a, b) - 1e-12 <= h <= (a + b) / 2 + 1e-12


def test_record_avg_invariant():
    with pytest.raises(DomainError):
        RunRecord({}, 0, 0.5, {"a": 0.2, "b": 0.4}, 0.5, 0.5)
    r = RunRecord({}, 0, 0.5, {"a": 0.2, "b": 0.4}, 0.3, hap(0.5, 0.3))
    assert RunRecord.from_dict(r.to_dict()) == r


def test_final_norm():
    rows = [{"task_index": t, "epoch": e, "modality": m, "mean_l1_norm": v}
            for t, e, m, v in [(0, 0, "V", 1.0), (0, 1, "V", 2.0), (0, 1, "L", 4.0), (1, 0, "V", 0.5), (1, 0, "L", 1.5)]]
    r = RunRecord({}, 0, 0.5, {}, None, None, rows)
    assert r.final_norm() == 1.0
    assert r.final_norm("L") == 1.5


def test_zero_shot_on_untouched_model(pretrained, general_holdout):
    assert eval_zero_shot(pretrained, general_holdout) == pretrained.pretrain_accuracy


def _tiny():
    cfg = default_config(seeds=[0, 1])
    cfg.tasks.n_tasks = 1
    cfg.tasks.shots = "5"
    cfg.train.epochs = 1
    return cfg


def test_grid_rows_and_failures():
    cfg = _tiny()
    cells = run_ablation_grid(cfg, {"lambda": [0.0, 0.1], "eta": [0.2, 2.0]}, workers=1)
    assert len(cells) == 8
    bad = [c for c in cells if c.error]
    assert len(bad) == 4 and all(c.values["eta"] == 2.0 for c in bad)
    text = grid_csv(cells, ["lambda", "eta"])
    lines = text.strip().split("\n")
    assert lines[0] == "lambda,eta,seed,zcoco,avg,hap,task_0"
    assert len(lines) == 1 + 4
    assert all(len(f.split(".")[1]) == 6 for f in lines[1].split(",")[3:])
    med = median_table(cells, ["lambda", "eta"])
    assert len(med) == 2 and all(r["n_seeds"] == 2 for r in med)
    assert medians_csv(med, ["lambda", "eta"]).count("\n") == 3


def test_single_cell_grid():
    cfg = _tiny()
    cells = run_ablation_grid(cfg, {}, seeds=[0], workers=1)
    assert len(cells) == 1 and cells[0].record is not None


def test_parallel_matches_serial():
    cfg = _tiny()
    serial = run_ablation_grid(cfg, {"lambda": [0.0, 0.1]}, workers=1)
    parallel = run_ablation_grid(cfg, {"lambda": [0.0, 0.1]}, workers=2)
    assert grid_csv(serial, ["lambda"]) == grid_csv(parallel, ["lambda"])


def test_worker_count(monkeypatch):
    monkeypatch.setenv("ZIRA_LAB_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("ZIRA_LAB_THREADS", "zero")
    assert worker_count() == 1


def test_lambda_grid_trend():
    """Seven lambda values x five seeds: 35 rows, zero-shot retention rising in at least 5 of 6 steps."""
    lams = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0]
    cfg = default_config()
    cells = run_ablation_grid(cfg, {"lambda": lams})
    assert len(grid_csv(cells, ["lambda"]).strip().splitlines()) == 1 + 35
    med = {r["lambda"]: r["zcoco"] for r in median_table(cells, ["lambda"])}
    steps = sum(med[b] >= med[a] for a, b in zip(lams, lams[1:]))
    assert steps >= 5, med
