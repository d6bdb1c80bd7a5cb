import itertools

import numpy as np
import pytest

from satgnn.cnf import CnfFormula, gap
from satgnn.sdp import (VectorState, build_w, optimize_vectors, random_max2sat, round_vectors,
                        sdp_solve)
from satgnn.solvers import dpll_solve


def test_build_w_single_clause():
    p = build_w(CnfFormula(2, [[1, -2]]))
    assert p.offset == pytest.approx(0.75)
    assert p.W[0, 1] == pytest.approx(0.125) and p.W[0, 2] == pytest.approx(-0.125)
    assert p.W[1, 2] == pytest.approx(0.125)
    assert np.allclose(p.W, p.W.T) and np.allclose(np.diag(p.W), 0)


def test_build_w_unit_and_repeated():
    p = build_w(CnfFormula(1, [[-1]]))
    assert p.offset == pytest.approx(0.5) and p.W[0, 1] == pytest.approx(-0.25)
    q = build_w(CnfFormula(1, [[1, -1]]))
    # x or not x: the lifted product sits on the diagonal and folds into the offset
    assert q.objective(np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_w(CnfFormula(3, [[1, 2, 3]]))


def test_integral_objective_counts_satisfied():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = random_max2sat(5, 12, rng)
        p = build_w(f)
        for bits in itertools.product([False, True], repeat=5):
            s = np.array([1.0] + [1.0 if b else -1.0 for b in bits])
            assert p.objective(np.outer(s, s)) == pytest.approx(f.num_clauses - gap(f, np.array(bits)))


def test_optimizer_monotone_and_unit_rows():
    f = random_max2sat(8, 24, np.random.default_rng(1))
    st = optimize_vectors(build_w(f), iters=300, seed=0)
    assert np.allclose(np.linalg.norm(st.V, axis=1), 1)
    assert all(b >= a for a, b in zip(st.history, st.history[1:]))
    assert st.objective == pytest.approx(build_w(f).objective(st.Y))
    with pytest.raises(ValueError):
        optimize_vectors(build_w(f), iters=0)


def test_relaxation_upper_bounds_optimum():
    rng = np.random.default_rng(2)
    for _ in range(5):
        r = sdp_solve(random_max2sat(7, 21, rng), iters=500, k=32)
        assert r.relaxation >= r.optimum - 1e-6
        assert r.rounded <= r.optimum


def test_satisfiable_2cnf_reaches_m():
    rng = np.random.default_rng(3)
    seen = 0
    while seen < 5:
        f = random_max2sat(8, 8, rng)
        if not dpll_solve(f).sat:
            continue
        seen += 1
        st = optimize_vectors(build_w(f), iters=3000, seed=seen)
        assert st.objective >= f.num_clauses - 1e-3


def test_rounding_modes():
    V = np.array([[1.0, 0], [0.6, 0.8], [-0.6, 0.8], [0, 1]])
    st = VectorState(V, 0.0)
    assert round_vectors(st).tolist() == [True, False, True]
    f = CnfFormula(3, [[1], [-2], [3]])
    a = round_vectors(st, f, "hyperplane", k=64, seed=0)
    assert gap(f, a) <= gap(f, round_vectors(st))
    with pytest.raises(ValueError):
        round_vectors(st, None, "hyperplane")
    with pytest.raises(ValueError):
        round_vectors(st, f, "random")


def test_random_max2sat_shape():
    f = random_max2sat(6, 18, np.random.default_rng(0))
    assert f.num_clauses == 18 and all(len({abs(l) for l in c}) == 2 for c in f.clauses)
