import copy

import numpy as np
import pytest

from zira_lab.errors import DomainError, TrainingError
from zira_lab.trainer import METHODS, TrainConfig, method_config, run_incremental_sequence, train_task
from zira_lab.zil import ZilConfig

FAST = TrainConfig(epochs=2, batch_size=5)


def _snap(params):
    return {k: t.data.copy() for k, t in params.items()}


def _changed(before, params):
    return {k for k, t in params.items() if not np.array_equal(before[k], t.data)}


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at_epoch(0) == 1e-3
    assert cfg.lr_at_epoch(1) == pytest.approx(0.1 * cfg.lr_at_epoch(0), rel=1e-15)


def test_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(lr_hlrb=0.0)
    with pytest.raises(DomainError):
        TrainConfig(eta=-0.1)
    with pytest.raises(DomainError):
        TrainConfig(structure="SB", rep_plus=True)
    with pytest.raises(DomainError):
        method_config(TrainConfig(), "nope")


def test_db_preset_semantics():
    db = method_config(TrainConfig(), "db")
    zira = method_config(TrainConfig(), "zira")
    assert not db.rep_plus and db.use_rdb_term and db.use_hlrb_term
    assert (db.zil, db.eta, db.lr_hlrb) == (zira.zil, zira.eta, zira.lr_hlrb)
    assert set(METHODS) >= {"zira", "baseline", "rep-only", "zil-only", "sb", "db", "v-only", "l-only",
                            "full-finetune"}


def test_exclusive_trainability_and_epoch_lrs(pretrained, short_tasks):
    frozen = pretrained.frozen_hash()
    before = _snap(pretrained.rdb_parameters())
    log = train_task(pretrained, short_tasks[0].train, FAST, np.random.default_rng(0))
    assert pretrained.frozen_hash() == frozen
    assert _changed(before, pretrained.rdb_parameters()) == set(before)
    for name, lr in log.epoch_lrs[1].items():
        assert lr == pytest.approx(0.1 * log.epoch_lrs[0][name], rel=1e-15)
    assert log.epoch_lrs[0]["rdb_vision.llrb.weight"] == pytest.approx(0.2e-3, rel=1e-15)
    assert log.epoch_lrs[0]["rdb_vision.hlrb.weight"] == 1e-3
    assert len(log.norms) == 2 * FAST.epochs


@pytest.mark.parametrize("method,moves", [
    ("v-only", {"rdb_vision"}),
    ("l-only", {"rdb_language"}),
])
def test_modalities(pretrained, short_tasks, method, moves):
    before = _snap(pretrained.rdb_parameters())
    train_task(pretrained, short_tasks[0].train, method_config(FAST, method), np.random.default_rng(0))
    assert {k.split(".")[0] for k in _changed(before, pretrained.rdb_parameters())} == moves


def test_sb_leaves_fast_branch_zero(pretrained, short_tasks):
    train_task(pretrained, short_tasks[0].train, method_config(FAST, "sb"), np.random.default_rng(0))
    for rdb in (pretrained.rdb_vision, pretrained.rdb_language):
        assert not np.any(rdb.hlrb.weight.data)
        assert np.any(rdb.llrb.weight.data)


def test_full_finetune_moves_only_ptbs(pretrained, short_tasks):
    before = _snap(pretrained.named_parameters())
    train_task(pretrained, short_tasks[0].train, method_config(FAST, "full-finetune"), np.random.default_rng(0))
    assert {k.split(".")[0] for k in _changed(before, pretrained.named_parameters())} == {"vision_ptb",
                                                                                          "language_ptb"}


def test_eta_zero_freezes_slow_branch(pretrained, short_tasks):
    # only the optimiser is frozen; the post-task merge still writes into the slow branch
    before = _snap(pretrained.rdb_parameters())
    train_task(pretrained, short_tasks[0].train, TrainConfig(epochs=2, batch_size=5, eta=0.0),
               np.random.default_rng(0))
    changed = _changed(before, pretrained.rdb_parameters())
    assert not any(".llrb." in k for k in changed)
    assert any(".hlrb." in k for k in changed)


def test_reset_and_merge_bracketing(pretrained, short_tasks, general_holdout):
    rec = run_incremental_sequence(pretrained, short_tasks, FAST, general_holdout)
    for s in rec.task_summaries:
        assert s["l_hlrb_at_start"] == 0.0
        assert s["merge_max_rel_diff"] <= 1e-9
    assert len(rec.per_task_acc) == 2
    assert pretrained.rdb_vision.hlrb.weight.data.any() == False  # noqa: E712


def test_zero_tasks_equals_pretrained(pretrained, general_holdout):
    rec = run_incremental_sequence(pretrained, [], FAST, general_holdout)
    assert rec.zcoco_analogue == pretrained.pretrain_accuracy
    assert rec.avg is None and rec.hap is None and rec.per_task_acc == {}


def test_deterministic(pretrained, short_tasks, general_holdout):
    a = run_incremental_sequence(copy.deepcopy(pretrained), short_tasks, FAST, general_holdout, seed=3)
    b = run_incremental_sequence(pretrained, short_tasks, FAST, general_holdout, seed=3)
    assert a.to_json() == b.to_json()


def test_large_lambda_overconstrains(pretrained, short_tasks, general_holdout):
    task = short_tasks[:1]
    free = run_incremental_sequence(copy.deepcopy(pretrained), task, FAST, general_holdout)
    tight = run_incremental_sequence(pretrained, task, TrainConfig(epochs=2, batch_size=5, zil=ZilConfig(lam=1e3)),
                                     general_holdout)
    assert tight.final_norm() < free.final_norm()
    assert tight.final_norm() < 1e-2
    assert tight.avg <= free.avg


def test_divergence_guard(pretrained, short_tasks):
    cfg = TrainConfig(epochs=1, batch_size=5, lr_hlrb=1e9, weight_decay=0.0)
    with pytest.raises(TrainingError) as err:
        for _ in range(3):
            train_task(pretrained, short_tasks[0].train, cfg, np.random.default_rng(0))
    assert err.value.log is not None and err.value.log.steps
