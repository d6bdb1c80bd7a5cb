import math

import numpy as np
import pytest
import torch

from satgnn.cnf import CnfFormula, gap
from satgnn.graph import LCG, VCG
from satgnn.model import (LSTM, RNN, ModelConfig, MpState, Prediction, SatGNN, as_torch_graph,
                          loss_assignment, loss_closest, loss_sat, loss_unsupervised)
from satgnn.solvers import maxsat_optimum

F5 = CnfFormula(5, [[1, -2, 3], [-1, 4], [2, -5], [-3, -4, 5], [1, 5], [-2, -4]])
SMALL = dict(d_model=6, mlp_hidden=(5,), t_train=3)


def small_model(kind, cell, seed=0, **kw):
    torch.manual_seed(seed)
    return SatGNN(ModelConfig(graph_kind=kind, cell=cell, **SMALL, **kw)).double()


def loss_fn(name, model, f):
    pred, _, state = model([f], seeds=3)
    tg = model.graph([f])
    if name == "sat":
        return loss_sat(model.sat_logit(tg, state), [1.0])
    if name == "assignment":
        return loss_assignment(pred, maxsat_optimum(f)[1])
    if name == "assignment_mse":
        return loss_assignment(pred, maxsat_optimum(f)[1], "MSE")
    if name == "unsupervised":
        return loss_unsupervised(pred, [f], model.kind)
    # closest targets are piecewise constant, so FD sees only the CE part
    fixed = loss_closest(pred, [f], model.kind)[1]
    return loss_assignment(pred, fixed)


def fd_check(model, fn, n_entries=6, h=1e-4, tol=1e-3):
    params = [p for p in model.parameters()]
    model.zero_grad()
    fn().backward()
    rng = np.random.default_rng(0)
    for p in params:
        if p.grad is None:
            continue
        flat = p.data.view(-1)
        g = p.grad.view(-1)
        for i in rng.choice(flat.numel(), size=min(n_entries, flat.numel()), replace=False):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = fn().item()
                flat[i] = old - h
                down = fn().item()
                flat[i] = old
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(g[i].item()), 1e-6)
            assert abs(num - g[i].item()) / denom < tol or abs(num - g[i].item()) < 1e-8, (p.shape, i)


@pytest.mark.parametrize("kind", [VCG, LCG])
@pytest.mark.parametrize("cell", [RNN, LSTM])
@pytest.mark.parametrize("loss", ["sat", "assignment", "assignment_mse", "unsupervised", "closest"])
def test_gradients_match_finite_differences(kind, cell, loss):
    model = small_model(kind, cell)
    fd_check(model, lambda: loss_fn(loss, model, F5))


def test_lcg_message_mlp_gradients():
    model = small_model(LCG, RNN, lcg_message_mlp=True)
    fd_check(model, lambda: loss_fn("unsupervised", model, F5))


def permute_clauses(f, perm):
    return CnfFormula(f.num_vars, [f.clauses[i] for i in perm])


@pytest.mark.parametrize("kind", [VCG, LCG])
@pytest.mark.parametrize("cell", [RNN, LSTM])
def test_clause_permutation_equivariance(kind, cell):
    model = small_model(kind, cell)
    perm = [3, 0, 5, 1, 4, 2]
    g = permute_clauses(F5, perm)
    s = model.init_state([F5], seeds=1)
    s2 = MpState(s.h_left, s.h_clause[perm],
                 s.c_left, None if s.c_clause is None else s.c_clause[perm])
    a, _, sa = model([F5], t_steps=4, state=s)
    b, _, sb = model([g], t_steps=4, state=s2)
    assert torch.allclose(a.logits, b.logits, atol=1e-10)
    assert torch.allclose(sa.h_clause[perm], sb.h_clause, atol=1e-10)


@pytest.mark.parametrize("kind", [VCG, LCG])
def test_variable_renaming_equivariance(kind):
    model = small_model(kind, RNN)
    perm = np.array([2, 4, 0, 1, 3])  # new var j is old var perm[j]
    inv = np.argsort(perm)
    g = CnfFormula(5, [[int(np.sign(l)) * (int(inv[abs(l) - 1]) + 1) for l in c] for c in F5.clauses])
    s = model.init_state([F5], seeds=1)
    rows = perm if kind == VCG else np.concatenate([perm, perm + 5])
    s2 = MpState(s.h_left[rows], s.h_clause)
    a, _, _ = model([F5], t_steps=4, state=s)
    b, _, _ = model([g], t_steps=4, state=s2)
    assert torch.allclose(a.logits[perm], b.logits, atol=1e-10)


def test_lcg_negation_symmetry():
    model = small_model(LCG, RNN)
    v = 1  # negate x2 everywhere
    g = CnfFormula(5, [[-l if abs(l) == v + 1 else l for l in c] for c in F5.clauses])
    s = model.init_state([F5], seeds=2)
    swap = np.arange(10)
    swap[v], swap[v + 5] = v + 5, v
    s2 = MpState(s.h_left[swap], s.h_clause)
    _, _, sa = model([F5], t_steps=5, state=s)
    _, _, sb = model([g], t_steps=5, state=s2)
    assert torch.allclose(sa.h_left[swap], sb.h_left, atol=1e-10)


@pytest.mark.parametrize("kind", [VCG, LCG])
@pytest.mark.parametrize("cell", [RNN, LSTM])
def test_embeddings_stay_unit_norm(kind, cell):
    model = small_model(kind, cell)
    _, traj, _ = model([F5, CnfFormula(2, [[1], [-2]])], t_steps=6, seeds=0, keep_states=True)
    for st in traj:
        assert torch.allclose(st.h_left.norm(dim=1), torch.ones(st.h_left.shape[0], dtype=torch.float64))
        assert torch.allclose(st.h_clause.norm(dim=1), torch.ones(st.h_clause.shape[0], dtype=torch.float64))


def test_batch_invariance_and_seed_determinism():
    model = small_model(VCG, RNN)
    g = CnfFormula(3, [[1, 2], [-3]])
    alone, _, _ = model([F5], seeds=[11])
    both, _, _ = model([g, F5], seeds=[5, 11])
    assert torch.allclose(alone.logits, both.logits[3:], atol=1e-12)
    again, _, _ = model([F5], seeds=[11])
    assert torch.equal(alone.logits, again.logits)


def test_shape_mismatch_raises():
    model = small_model(VCG, RNN)
    s = model.init_state([F5])
    with pytest.raises(Exception):
        model.mp_round([CnfFormula(2, [[1, 2]])], s)
    with pytest.raises(ValueError):
        model([F5], t_steps=0)


def test_loss_worked_examples():
    zero = Prediction(torch.zeros(2, 2, dtype=torch.float64))
    assert loss_assignment(zero, [1, 0]).item() == pytest.approx(math.log(2))
    assert loss_assignment(zero, [1, 0], "MSE").item() == pytest.approx(0.25)
    one = Prediction(torch.zeros(1, 2, dtype=torch.float64))
    assert loss_unsupervised(one, [CnfFormula(1, [[1]])]).item() == pytest.approx(math.log(2))
    two = CnfFormula(2, [[1], [-2]])
    assert loss_unsupervised(zero, [two]).item() == pytest.approx(2 * math.log(2))
    assert loss_unsupervised(zero, [CnfFormula(2, [[1, 2]])]).item() == pytest.approx(-math.log(0.75))
    assert loss_sat(torch.zeros(1, dtype=torch.float64), [1.0]).item() == pytest.approx(math.log(2))


def test_unsupervised_batch_average():
    zero = Prediction(torch.zeros(3, 2, dtype=torch.float64))
    loss = loss_unsupervised(zero, [CnfFormula(1, [[1]]), CnfFormula(2, [[1], [-2]])])
    assert loss.item() == pytest.approx(1.5 * math.log(2))


def test_unsupervised_clamp_finite():
    certain = Prediction(torch.tensor([[100.0, -100.0]], dtype=torch.float64, requires_grad=True))
    loss = loss_unsupervised(certain, [CnfFormula(1, [[1]])])
    assert torch.isfinite(loss)
    loss.backward()
    assert torch.isfinite(certain.logits.grad).all()


def test_closest_targets_are_optimal():
    model = small_model(VCG, RNN)
    pred, _, _ = model([F5], seeds=0)
    _, target = loss_closest(pred, [F5])
    assert gap(F5, target) == maxsat_optimum(F5)[0]


def test_target_length_checked():
    with pytest.raises(Exception):
        loss_assignment(Prediction(torch.zeros(3, 2)), [1, 0])


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(graph_kind="X")
    with pytest.raises(ValueError):
        ModelConfig(cell="GRU")
    with pytest.raises(ValueError):
        as_torch_graph(as_torch_graph([F5], VCG), LCG)
