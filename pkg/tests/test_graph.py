import numpy as np
import pytest

from satgnn.cnf import CnfFormula, parse_dimacs, write_dimacs
from satgnn.graph import LCG, VCG, batch_graphs, build_graph, build_lcg, build_vcg, flip_pairing

FIG1 = CnfFormula(3, [[-1, 2], [2, -3], [1, 3]])


def test_vcg_figure_formula():
    g = build_vcg(FIG1)
    assert (g.num_left, g.num_clauses, g.num_edges) == (3, 3, 6)
    edges = set(g.edges)
    assert (0, 0, -1) in edges and (0, 2, 1) in edges


def test_lcg_figure_formula():
    g = build_lcg(FIG1)
    assert (g.num_left, g.num_clauses, g.num_edges) == (6, 3, 6)
    assert set(g.edge_polarity.tolist()) == {1}
    # ~x1 is node 3 and sits in clause 0
    assert (3, 0, 1) in set(g.edges)


def test_single_clause_and_both_polarities():
    g = build_vcg(CnfFormula(1, [[1]]))
    assert g.edges == [(0, 0, 1)]
    g = build_vcg(CnfFormula(1, [[1, -1]]))
    assert sorted(g.edges) == [(0, 0, -1), (0, 0, 1)]


def test_unused_literal_has_node():
    g = build_lcg(CnfFormula(2, [[1, 2]]))
    assert g.num_left == 4
    assert g.left_degree().tolist() == [1, 1, 0, 0]


def test_flip_pairing():
    g = build_lcg(FIG1)
    assert flip_pairing(g).tolist() == [3, 4, 5, 0, 1, 2]
    p = flip_pairing(g)
    assert p[p].tolist() == list(range(6))
    with pytest.raises(ValueError):
        flip_pairing(build_vcg(FIG1))


def test_flip_neighbors_are_complement_clauses():
    rng = np.random.default_rng(0)
    n = 5
    f = CnfFormula(n, [[int(v + 1) * int(rng.choice([-1, 1])) for v in rng.choice(n, 3, replace=False)]
                       for _ in range(12)])
    g = build_lcg(f)
    p = flip_pairing(g)
    for l in range(2 * n):
        lit = (l % n + 1) * (1 if l < n else -1)
        expected = {c for c, cl in enumerate(f.clauses) if -lit in cl}
        assert set(g.edge_clause[g.left_edges(p[l])].tolist()) == expected


def test_edge_count_and_incidence_transpose():
    f = CnfFormula(4, [[1, -2, 3], [4], [-1, -4, 2]])
    for kind in (LCG, VCG):
        g = build_graph(f, kind)
        assert g.num_edges == f.num_literals
        for c, clause in enumerate(f.clauses):
            assert len(g.clause_edges(c)) == len(clause)
        total = sum(len(g.left_edges(i)) for i in range(g.num_left))
        assert total == g.num_edges


def test_invariant_to_dimacs_round_trip():
    f2 = parse_dimacs(write_dimacs(FIG1))
    for kind in (LCG, VCG):
        assert build_graph(f2, kind).edges == build_graph(FIG1, kind).edges


def test_batch_layout():
    a = CnfFormula(2, [[1, -2]])
    b = CnfFormula(3, [[-3], [1, 2]])
    bat = batch_graphs([build_lcg(a), build_lcg(b)])
    assert bat.graph.num_left == 10
    assert bat.var_offsets.tolist() == [0, 2, 5]
    # ~x2 of a -> N + 1; ~x3 of b -> N + 2 + 2
    assert set(bat.graph.edges) == {(0, 0, 1), (6, 0, 1), (9, 1, 1), (2, 2, 1), (3, 2, 1)}
    assert bat.flip.tolist() == [5, 6, 7, 8, 9, 0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        batch_graphs([build_lcg(a), build_vcg(b)])
