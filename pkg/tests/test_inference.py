import csv

import numpy as np
import pytest
import torch

from satgnn.cnf import CnfFormula, gap
from satgnn.generators import SR, DatasetSpec, LabeledInstance, generate
from satgnn.inference import (NO_WITNESS, SAT_FOUND, cluster_decode, cluster_solve, evaluate,
                              export_trajectory, kmeans2, pca2, resample_solve,
                              sample_seeds, solve, solve_batch, summarize, sweep, write_records_csv)
from satgnn.model import ModelConfig, SatGNN


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SatGNN(ModelConfig(d_model=16, mlp_hidden=(16,), t_train=5)).eval()


@pytest.fixture(scope="module")
def data():
    return list(generate(DatasetSpec(SR, (4, 8), 24, seed=6)))


def test_solve_reports_running_minimum(model, data):
    for inst in data[:6]:
        r = solve(inst.formula, model, 30, seed=1)
        assert r.best_gap == min(r.gap_trajectory)
        assert gap(inst.formula, r.assignment) == r.best_gap
        assert r.found == (r.best_gap == 0)
        assert r.status in (SAT_FOUND, NO_WITNESS)
        if not inst.sat:
            assert not r.found


def test_early_stop_and_steps(model):
    f = CnfFormula(2, [[1, 2], [1, -2], [-1, 2], [-1, -2]])
    r = solve(f, model, 7)
    assert r.steps_used == 7 and len(r.gap_trajectory) == 7 and r.best_gap >= 1
    easy = CnfFormula(1, [[1, -1]])
    r = solve(easy, model, 10)
    assert r.found and r.steps_used == 1 and r.gap_trajectory == [0]
    full = solve_batch(model, [easy], 10, [0], early_stop=False)[0]
    assert full.steps_used == 1 and full.gap_trajectory == [0] * 10


def test_sweep_with_early_solved_instance(model, data):
    easy = LabeledInstance(CnfFormula(1, [[1, -1]]), True, np.array([True]))
    grid = sweep([easy] + data[:3], model, (2, 6), (1, 2), seed=0)
    assert grid.cells[(2, 1)]["sat_acc"] > 0


def test_batch_matches_single(model, data):
    formulas = [i.formula for i in data[:5]]
    batched = solve_batch(model, formulas, 12, list(range(5)), early_stop=False)
    for k, f in enumerate(formulas):
        alone = solve_batch(model, [f], 12, [k], early_stop=False)[0]
        assert alone.gap_trajectory == batched[k].gap_trajectory


def test_resample_k1_is_solve(model, data):
    f = data[0].formula
    a = resample_solve(f, model, 20, k=1, seed=4)
    b = solve_batch(model, [f], 20, sample_seeds(4, 1))[0]
    assert a.gap_trajectory == b.gap_trajectory and a.sample == 0
    with pytest.raises(ValueError):
        resample_solve(f, model, 20, k=0)


def test_resampling_monotone(model, data):
    for inst in data[:6]:
        gaps = [resample_solve(inst.formula, model, 10, k=k, seed=2).best_gap for k in range(1, 5)]
        assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_evaluate_and_summary(tmp_path, model, data):
    s = evaluate(data, model, max_iters=15, samples=2, seed=1)
    assert len(s.records) == len(data)
    m = s.metrics
    assert 0 <= m["sat_acc"] <= 1 and 0 <= m["decision_acc"] <= 1
    # with verified witnesses only, every UNSAT row counts as correct
    assert m["decision_acc"] >= 0.5
    write_records_csv(s.records, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == len(data)
    with pytest.raises(ValueError):
        evaluate([], model)
    with pytest.raises(ValueError):
        summarize([])


def test_sweep_monotone_and_schema(tmp_path, model, data):
    grid = sweep(data, model, (5, 10, 15), (1, 2, 3), seed=0)
    cells = grid.cells
    for i in (5, 10, 15):
        for s in (1, 2):
            assert cells[(i, s + 1)]["decision_acc"] >= cells[(i, s)]["decision_acc"]
            assert cells[(i, s + 1)]["avg_gap"] <= cells[(i, s)]["avg_gap"]
    grid.write_csv(tmp_path / "g.csv")
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["iters", "samples", "avg_gap", "sat_acc", "decision_acc"]
    assert len(rows) == 10
    # the (15, 1) cell equals a plain 15-iteration evaluation at the same seeds
    s = evaluate(data, model, 15, samples=1, seed=0)
    assert cells[(15, 1)]["avg_gap"] == pytest.approx(s.metrics["avg_gap"])


def test_kmeans_cases():
    x = np.array([[0, 0], [0, 0.1], [5, 5], [5, 5.1]])
    labels = kmeans2(x)
    assert labels[0] == labels[1] != labels[2] == labels[3]
    same = kmeans2(np.ones((4, 3)))
    assert len(set(same.tolist())) == 1
    assert kmeans2(np.zeros((0, 2))).shape == (0,)


def test_cluster_decode_examples():
    f = CnfFormula(3, [[1], [2], [-3]])
    rows = np.array([[1.0, 0], [0.9, 0.1], [-1, 0]])
    assert cluster_decode(rows, f).tolist() == [True, True, False]
    assert cluster_decode(np.array([[0.3]]), CnfFormula(1, [[-1]])).tolist() == [False]
    with pytest.raises(ValueError):
        cluster_decode(rows[:2], f)


def test_cluster_solve_shape(model, data):
    a = cluster_solve(data[0].formula, model)
    assert a.shape == (data[0].formula.num_vars,) and a.dtype == bool


def test_pca2():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 5)) * np.array([5, 2, 0.1, 0.1, 0.1])
    coords, var = pca2(x)
    assert coords.shape == (30, 2) and var[0] >= var[1]
    assert np.allclose(coords.mean(0), 0)
    c1, v1 = pca2(np.ones((1, 4)))
    assert np.allclose(c1, 0) and np.allclose(v1, 0)


def test_export_trajectory(tmp_path, model, data):
    f = data[1].formula
    tr = export_trajectory(f, model, t=6, seed=3)
    assert len(tr.rows) == 6 * f.num_vars
    assert tr.explained_variance.shape == (6, 2)
    r = solve_batch(model, [f], 6, [3], early_stop=False)[0]
    assert tr.gaps == r.gap_trajectory
    tr.write_csv(tmp_path / "t.csv")
    assert open(tmp_path / "t.csv").readline().strip() == "iter,node,x,y,cluster,gap"
    with pytest.raises(ValueError):
        export_trajectory(f, model, t=1)
