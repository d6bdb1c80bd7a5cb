"""Bipartite graph views of a CNF formula (literal-clause and variable-clause)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cnf import CnfFormula

LCG = "LCG"
VCG = "VCG"


@dataclass(frozen=True)
class FormulaGraph:
    """Edge-major incidence of a formula.

    ``edge_left[e]`` / ``edge_clause[e]`` are the endpoints of edge ``e``
    and ``edge_polarity[e]`` is +1/-1.  Edges follow clause order, so the
    per-clause lists are contiguous slices.  For LCG the left nodes are
    literals laid out as ``x_1..x_n, ~x_1..~x_n`` and every polarity is +1.
    """

    kind: str
    num_vars: int
    num_left: int
    num_clauses: int
    edge_left: np.ndarray
    edge_clause: np.ndarray
    edge_polarity: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.edge_left.shape[0])

    @property
    def edges(self) -> list[tuple[int, int, int]]:
        return list(zip(self.edge_left.tolist(), self.edge_clause.tolist(),
                        self.edge_polarity.tolist()))

    def clause_edges(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.edge_clause == c)

    def left_edges(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.edge_left == i)

    def left_degree(self) -> np.ndarray:
        return np.bincount(self.edge_left, minlength=self.num_left)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_vcg(f: CnfFormula) -> FormulaGraph:
    left = f.lit_var.astype(np.int64)
    clause = f.lit_clause.astype(np.int64)
    pol = np.where(f.lit_pos, 1, -1).astype(np.int64)
    _freeze(left, clause, pol)
    return FormulaGraph(VCG, f.num_vars, f.num_vars, f.num_clauses, left, clause, pol)


def build_lcg(f: CnfFormula) -> FormulaGraph:
    left = np.where(f.lit_pos, f.lit_var, f.lit_var + f.num_vars).astype(np.int64)
    clause = f.lit_clause.astype(np.int64)
    pol = np.ones_like(left)
    _freeze(left, clause, pol)
    return FormulaGraph(LCG, f.num_vars, 2 * f.num_vars, f.num_clauses, left, clause, pol)


def build_graph(f: CnfFormula, kind: str) -> FormulaGraph:
    if kind == VCG:
        return build_vcg(f)
    if kind == LCG:
        return build_lcg(f)
    raise ValueError(f"unknown graph kind {kind!r}")


def flip_pairing(g: FormulaGraph) -> np.ndarray:
    """Permutation sending each literal node to its complement."""
    if g.kind != LCG:
        raise ValueError("flip pairing is defined for literal-clause graphs only")
    n = g.num_vars
    return np.concatenate([np.arange(n, 2 * n), np.arange(n)])


@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of several graphs of the same kind."""

    graph: FormulaGraph
    var_offsets: np.ndarray
    clause_offsets: np.ndarray
    var_graph: np.ndarray  # member id per variable
    clause_graph: np.ndarray
    flip: np.ndarray | None

    @property
    def size(self) -> int:
        return int(self.var_offsets.shape[0]) - 1


def batch_graphs(graphs: Sequence[FormulaGraph]) -> GraphBatch:
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    kind = graphs[0].kind
    if any(g.kind != kind for g in graphs):
        raise ValueError("mixed graph kinds in one batch")
    nv = np.array([g.num_vars for g in graphs], dtype=np.int64)
    nc = np.array([g.num_clauses for g in graphs], dtype=np.int64)
    var_off = np.concatenate([[0], np.cumsum(nv)])
    cl_off = np.concatenate([[0], np.cumsum(nc)])
    N = int(var_off[-1])
    lefts, clauses = [], []
    for k, g in enumerate(graphs):
        if kind == VCG:
            lefts.append(g.edge_left + var_off[k])
        else:
            # batched literal layout: all positive literals, then all negative ones
            n = g.num_vars
            is_neg = g.edge_left >= n
            lefts.append(np.where(is_neg, g.edge_left - n + N, g.edge_left) + var_off[k])
        clauses.append(g.edge_clause + cl_off[k])
    edge_left = np.concatenate(lefts)
    edge_clause = np.concatenate(clauses)
    edge_pol = np.concatenate([g.edge_polarity for g in graphs])
    num_left = N if kind == VCG else 2 * N
    merged = FormulaGraph(kind, N, num_left, int(cl_off[-1]), edge_left, edge_clause, edge_pol)
    flip = None
    if kind == LCG:
        flip = np.concatenate([np.arange(N, 2 * N), np.arange(N)])
    return GraphBatch(
        graph=merged,
        var_offsets=var_off,
        clause_offsets=cl_off,
        var_graph=np.repeat(np.arange(len(graphs)), nv),
        clause_graph=np.repeat(np.arange(len(graphs)), nc),
        flip=flip,
    )
