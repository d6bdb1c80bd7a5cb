import csv

import numpy as np
import pytest
import torch

from satgnn.generators import SR, DatasetSpec, generate
from satgnn.model import ModelConfig
from satgnn.cnf import CnfFormula
from satgnn.training import (CurriculumState, TrainConfig, check_closest_targets, curriculum_step,
                             ema_beta, load_model, start_curriculum, train)

TINY = ModelConfig(d_model=8, mlp_hidden=(8,), t_train=4)


@pytest.fixture(scope="module")
def small_data():
    return list(generate(DatasetSpec(SR, (3, 8), 50, seed=4)))


def test_curriculum_thresholds():
    cur = start_curriculum(40)
    assert cur.size == 5 and cur.threshold == pytest.approx(0.65)
    assert CurriculumState(40, 40).threshold == pytest.approx(0.85)
    assert CurriculumState(22, 40, 4).threshold == pytest.approx(0.75)


def test_curriculum_advances_and_forces():
    cur = start_curriculum(40)
    assert curriculum_step(cur, 0.70).size == 7
    stuck = cur
    for _ in range(99):
        stuck = curriculum_step(stuck, 0.0)
    assert stuck.size == 5 and stuck.epochs_at_size == 99
    assert curriculum_step(stuck, 0.0).size == 7
    top = CurriculumState(40, 40)
    assert curriculum_step(top, 1.0).size == 40


def test_curriculum_pool():
    cur = CurriculumState(13, 40)
    assert cur.pool_bounds() == (5, 13)
    assert cur.in_pool(5) and cur.in_pool(13) and not cur.in_pool(4) and not cur.in_pool(14)
    assert start_curriculum(3).size == 3


def test_ema_warmup():
    cfg = TrainConfig()
    assert ema_beta(cfg, 0) == pytest.approx(0.1)
    assert ema_beta(cfg, 10 ** 6) == pytest.approx(0.999)
    assert ema_beta(TrainConfig(ema_warmup=False), 0) == 0.999


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    assert TrainConfig(loss="sat").use_curriculum
    assert not TrainConfig().use_curriculum


def test_empty_dataset_rejected(small_data):
    with pytest.raises(ValueError):
        train(TrainConfig(model=TINY, epochs=1), [])
    unsat = [i for i in small_data if not i.sat]
    with pytest.raises(ValueError):
        train(TrainConfig(model=TINY, epochs=1, sat_only=True), unsat)


@pytest.mark.parametrize("loss", ["assignment", "unsupervised", "sat"])
def test_loss_decreases(small_data, loss):
    cfg = TrainConfig(model=TINY, loss=loss, epochs=5, batch_size=10, lr=3e-3, curriculum=False)
    res = train(cfg, small_data, small_data[:10])
    first, last = res.log[0]["loss"], res.log[-1]["loss"]
    assert last < first
    assert np.isfinite(res.best_metric)


def test_closest_training_runs(small_data, monkeypatch):
    import satgnn.training as tr
    seen = []
    real = tr.check_closest_targets
    monkeypatch.setattr(tr, "check_closest_targets", lambda *a: seen.append(real(*a)))
    cfg = TrainConfig(model=TINY, loss="closest", epochs=2, batch_size=10, lr=3e-3)
    res = train(cfg, small_data, small_data[:10])
    assert all(np.isfinite(r["loss"]) for r in res.log)
    # one spot check per epoch (the first batch), each covering the whole batch
    assert seen == [10, 10]


def test_sat_only_filters(small_data):
    cfg = TrainConfig(model=TINY, epochs=1, batch_size=16, sat_only=True)
    res = train(cfg, small_data, small_data[:5])
    assert res.log[0]["loss"] > 0


def test_deterministic_and_saved(tmp_path, small_data):
    cfg = TrainConfig(model=TINY, epochs=2, batch_size=16, seed=5)
    a = train(cfg, small_data, small_data[:8], out_dir=tmp_path / "a")
    b = train(cfg, small_data, small_data[:8], out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert torch.equal(p, q)
    model, meta = load_model(tmp_path / "a" / "model.npz")
    assert meta["config"]["train"]["seed"] == 5
    for p, q in zip(a.model.parameters(), model.parameters()):
        assert torch.equal(p, q)
    rows = list(csv.DictReader(open(tmp_path / "a" / "metrics.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert "val_sat_acc" in rows[0]


def test_ema_smooths_validation(small_data):
    cfg = TrainConfig(model=TINY, loss="unsupervised", epochs=8, batch_size=5, lr=1e-2, ema_beta=0.9)
    res = train(cfg, small_data, small_data[:20], track_raw=True)
    raw = np.array([r["raw_metric"] for r in res.log])
    ema = np.array([r["val_metric"] for r in res.log])
    assert ema.std(ddof=1) <= raw.std(ddof=1)


def test_curriculum_run_logs_size(small_data):
    cfg = TrainConfig(model=TINY, loss="sat", epochs=3, batch_size=16, curriculum_start=3,
                      curriculum_thresholds=(0.0, 0.0))
    res = train(cfg, small_data, small_data[:10])
    assert [r["curriculum_size"] for r in res.log] == [3, 5, 7]



def test_closest_spot_check():
    f = CnfFormula(2, [[-1, -2]])
    assert check_closest_targets([f], np.array([0.9, 0.9]), np.array([True, False])) == 1
    with pytest.raises(RuntimeError):
        check_closest_targets([f], np.array([0.9, 0.9]), np.array([False, False]))
