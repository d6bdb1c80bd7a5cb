"""Exact oracles: unit propagation, DPLL, MaxSAT and closest assignments.

These are desk-scale reference solvers.  ``dpll_solve`` handles a few
hundred variables on random instances; the MaxSAT routines are exact
and intended for n up to roughly 30.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .cnf import CnfFormula, as_assignment, batch_gaps

UNASSIGNED = -1

# exhaustive enumeration is used up to this many variables
ENUM_MAX_VARS = 16


class BudgetExceeded(RuntimeError):
    """A solver exhausted its node budget."""


class Propagation(enum.Enum):
    SOLVED = "solved"
    CONFLICT = "conflict"
    SIMPLIFIED = "simplified"


@dataclass
class PropagationOutcome:
    kind: Propagation
    extended: np.ndarray
    # None on conflict
    residual: Optional[CnfFormula]


def empty_partial(num_vars: int) -> np.ndarray:
    return np.full(num_vars, UNASSIGNED, dtype=np.int8)


def as_partial(p, num_vars: int) -> np.ndarray:
    if p is None:
        return empty_partial(num_vars)
    if isinstance(p, dict):
        out = empty_partial(num_vars)
        for var, val in p.items():
            out[var] = int(bool(val))
        return out
    out = np.asarray(p, dtype=np.int8).copy()
    if out.shape != (num_vars,):
        raise ValueError(f"partial assignment must have length {num_vars}")
    return out


def unit_propagate(f: CnfFormula, p=None) -> PropagationOutcome:
    """Extend ``p`` by unit propagation to a fixed point.

    ``p`` is an int8 vector with values 0, 1 or ``UNASSIGNED`` (or a
    ``{var0: bool}`` dict).  The residual keeps only unsatisfied clauses,
    restricted to their unassigned literals.
    """
    values = as_partial(p, f.num_vars)
    while True:
        residual: list[list[int]] = []
        units: list[int] = []
        for clause in f.clauses:
            rest: list[int] = []
            satisfied = False
            for lit in clause:
                v = values[abs(lit) - 1]
                if v == UNASSIGNED:
                    if lit not in rest:
                        rest.append(lit)
                elif (v == 1) == (lit > 0):
                    satisfied = True
                    break
            if satisfied:
                continue
            if not rest:
                return PropagationOutcome(Propagation.CONFLICT, values, None)
            if len(rest) == 1:
                units.append(rest[0])
            residual.append(rest)
        if not units:
            break
        for lit in units:
            var = abs(lit) - 1
            if values[var] == UNASSIGNED:
                values[var] = 1 if lit > 0 else 0
            # a contradicting unit shows up as a falsified clause next pass
    if not residual:
        return PropagationOutcome(Propagation.SOLVED, values, CnfFormula(f.num_vars, []))
    return PropagationOutcome(Propagation.SIMPLIFIED, values, CnfFormula(f.num_vars, residual))


# DPLL -----------------------------------------------------------------------

@dataclass
class SatResult:
    sat: bool
    assignment: Optional[np.ndarray] = None
    decisions: int = 0

    def __bool__(self) -> bool:
        return self.sat


class _Dpll:
    """Chronological-backtracking DPLL over two watched literals.

    Literal codes: ``2*var`` is positive, ``2*var + 1`` negative.
    """

    def __init__(self, f: CnfFormula):
        self.n = f.num_vars
        self.val = [UNASSIGNED] * self.n
        self.watches: list[list[int]] = [[] for _ in range(2 * self.n)]
        self.clauses: list[list[int]] = []
        self.units: list[int] = []
        self.trivially_unsat = False
        counts = [0] * self.n
        for clause in f.clauses:
            lits = []
            for l in clause:
                code = 2 * (abs(l) - 1) + (l < 0)
                if code not in lits:
                    lits.append(code)
            if any((c ^ 1) in lits for c in lits):
                continue  # tautology
            for c in lits:
                counts[c >> 1] += 1
            if len(lits) == 1:
                self.units.append(lits[0])
                continue
            ci = len(self.clauses)
            self.clauses.append(lits)
            self.watches[lits[0]].append(ci)
            self.watches[lits[1]].append(ci)
        # highest occurrence first, ties by index
        self.order = sorted(range(self.n), key=lambda v: (-counts[v], v))
        self.trail: list[int] = []

    def _lit_value(self, code: int) -> int:
        v = self.val[code >> 1]
        if v == UNASSIGNED:
            return UNASSIGNED
        return int(v == (1 - (code & 1)))

    def _assign(self, code: int) -> bool:
        cur = self._lit_value(code)
        if cur == 1:
            return True
        if cur == 0:
            return False
        self.val[code >> 1] = 1 - (code & 1)
        self.trail.append(code)
        return True

    def _propagate(self, head: int) -> bool:
        trail, val, watches, clauses = self.trail, self.val, self.watches, self.clauses
        while head < len(trail):
            false_lit = trail[head] ^ 1
            head += 1
            ws = watches[false_lit]
            keep = []
            i = 0
            nw = len(ws)
            conflict = False
            while i < nw:
                ci = ws[i]
                i += 1
                c = clauses[ci]
                if c[0] == false_lit:
                    c[0], c[1] = c[1], c[0]
                first = c[0]
                fv = val[first >> 1]
                if fv != UNASSIGNED and fv == 1 - (first & 1):
                    keep.append(ci)
                    continue
                moved = False
                for k in range(2, len(c)):
                    lk = c[k]
                    vk = val[lk >> 1]
                    if vk == UNASSIGNED or vk == 1 - (lk & 1):
                        c[1], c[k] = lk, c[1]
                        watches[lk].append(ci)
                        moved = True
                        break
                if moved:
                    continue
                keep.append(ci)
                if fv == UNASSIGNED:
                    val[first >> 1] = 1 - (first & 1)
                    trail.append(first)
                else:
                    conflict = True
                    keep.extend(ws[i:])
                    break
            watches[false_lit] = keep
            if conflict:
                return False
        return True

    def solve(self, max_decisions: Optional[int] = None) -> SatResult:
        for u in self.units:
            if not self._assign(u):
                return SatResult(False)
        if not self._propagate(0):
            return SatResult(False)
        # each frame: (trail length before decision, decision literal, flipped?)
        stack: list[tuple[int, int, bool]] = []
        decisions = 0
        pos = 0
        while True:
            while pos < self.n and self.val[self.order[pos]] != UNASSIGNED:
                pos += 1
            if pos == self.n:
                a = np.array([v == 1 for v in self.val], dtype=bool)
                return SatResult(True, a, decisions)
            var = self.order[pos]
            decisions += 1
            if max_decisions is not None and decisions > max_decisions:
                raise BudgetExceeded(f"DPLL exceeded {max_decisions} decisions")
            code = 2 * var  # try true first
            stack.append((len(self.trail), code, False))
            self._assign(code)
            ok = self._propagate(len(self.trail) - 1)
            while not ok:
                while stack and stack[-1][2]:
                    stack.pop()
                if not stack:
                    return SatResult(False, None, decisions)
                mark, code, _ = stack.pop()
                self._undo(mark)
                stack.append((mark, code ^ 1, True))
                self._assign(code ^ 1)
                ok = self._propagate(len(self.trail) - 1)
            pos = 0

    def _undo(self, mark: int) -> None:
        for code in self.trail[mark:]:
            self.val[code >> 1] = UNASSIGNED
        del self.trail[mark:]


def dpll_solve(f: CnfFormula, max_decisions: Optional[int] = None) -> SatResult:
    """Decide satisfiability; returns a :class:`SatResult` (truthy iff SAT)."""
    return _Dpll(f).solve(max_decisions)


# Enumeration ----------------------------------------------------------------

def _enum_matrix(n: int) -> np.ndarray:
    """All 2^n assignments; row index bits with variable 0 most significant."""
    idx = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(bool)


def assignment_index(a: np.ndarray) -> int:
    out = 0
    for bit in np.asarray(a, dtype=bool):
        out = (out << 1) | int(bit)
    return out


@lru_cache(maxsize=8192)
def _enumerated_optima(f: CnfFormula) -> tuple[int, np.ndarray]:
    n = f.num_vars
    gaps = np.empty(1 << n, dtype=np.int64)
    chunk = 1 << min(n, 14)
    A = _enum_matrix(n)
    for start in range(0, 1 << n, chunk):
        gaps[start:start + chunk] = batch_gaps(f, A[start:start + chunk])
    best = int(gaps.min())
    return best, np.flatnonzero(gaps == best)


def _index_to_assignment(idx: int, n: int) -> np.ndarray:
    return np.array([(idx >> (n - 1 - i)) & 1 for i in range(n)], dtype=bool)


# Branch and bound -----------------------------------------------------------

class _BranchAndBound:
    """DFS over variables 0..n-1 with incremental falsified-clause counts."""

    def __init__(self, f: CnfFormula, max_nodes: Optional[int]):
        self.f = f
        self.n = f.num_vars
        self.max_nodes = max_nodes
        self.nodes = 0
        m = f.num_clauses
        # occurrences[var][value] -> clauses where that value falsifies / satisfies a literal
        self.falsify = [([], []) for _ in range(self.n)]
        self.satisfy = [([], []) for _ in range(self.n)]
        self.remaining = [0] * m
        for ci, clause in enumerate(f.clauses):
            seen = set()
            for lit in clause:
                if lit in seen:
                    continue
                seen.add(lit)
                var = abs(lit) - 1
                if lit > 0:
                    self.satisfy[var][1].append(ci)
                    self.falsify[var][0].append(ci)
                else:
                    self.satisfy[var][0].append(ci)
                    self.falsify[var][1].append(ci)
            self.remaining[ci] = len(seen)
        self.sat_count = [0] * m

    def _tick(self):
        self.nodes += 1
        if self.max_nodes is not None and self.nodes > self.max_nodes:
            raise BudgetExceeded(f"branch and bound exceeded {self.max_nodes} nodes")

    def _apply(self, var: int, value: int) -> int:
        """Assign and return the number of newly falsified clauses."""
        newly = 0
        for ci in self.satisfy[var][value]:
            self.sat_count[ci] += 1
            self.remaining[ci] -= 1
        for ci in self.falsify[var][value]:
            self.remaining[ci] -= 1
            if self.remaining[ci] == 0 and self.sat_count[ci] == 0:
                newly += 1
        return newly

    def _revert(self, var: int, value: int) -> None:
        for ci in self.satisfy[var][value]:
            self.sat_count[ci] -= 1
            self.remaining[ci] += 1
        for ci in self.falsify[var][value]:
            self.remaining[ci] += 1

    def min_gap(self, lower_bound: int, upper: int, witness: np.ndarray) -> tuple[int, np.ndarray]:
        best = [upper, witness.copy()]
        cur = np.zeros(self.n, dtype=bool)

        def rec(i: int, falsified: int) -> bool:
            self._tick()
            if falsified >= best[0]:
                return False
            if i == self.n:
                best[0] = falsified
                best[1] = cur.copy()
                return falsified <= lower_bound
            for value in (1, 0):
                cur[i] = bool(value)
                newly = self._apply(i, value)
                done = rec(i + 1, falsified + newly)
                self._revert(i, value)
                if done:
                    return True
            return False

        if best[0] > lower_bound:
            rec(0, 0)
        return best[0], best[1]

    def closest(self, target_gap: int, ref: np.ndarray) -> np.ndarray:
        best_ham = [self.n + 1]
        best_a: list[Optional[np.ndarray]] = [None]
        cur = np.zeros(self.n, dtype=bool)

        def rec(i: int, falsified: int, ham: int) -> None:
            self._tick()
            if falsified > target_gap or ham >= best_ham[0]:
                return
            if i == self.n:
                best_ham[0] = ham
                best_a[0] = cur.copy()
                return
            r = int(ref[i])
            # the reference value first: the first optimum found is lexicographically
            # smallest in its disagreement pattern
            for value in (r, 1 - r):
                cur[i] = bool(value)
                newly = self._apply(i, value)
                rec(i + 1, falsified + newly, ham + (value != r))
                self._revert(i, value)
                if best_ham[0] == 0:
                    return

        rec(0, 0, 0)
        if best_a[0] is None:
            raise RuntimeError("no assignment attains the requested gap")
        return best_a[0]


def _greedy_upper_bound(f: CnfFormula, start: np.ndarray, sweeps: int = 20) -> np.ndarray:
    """Best-improvement local search to seed the branch and bound incumbent."""
    a = start.copy()
    g = batch_gaps(f, a[None])[0]
    for _ in range(sweeps):
        flips = np.repeat(a[None], f.num_vars, axis=0)
        flips[np.arange(f.num_vars), np.arange(f.num_vars)] ^= True
        gs = batch_gaps(f, flips)
        j = int(np.argmin(gs))
        if gs[j] >= g:
            break
        a, g = flips[j], gs[j]
    return a


def maxsat_optimum(f: CnfFormula, method: str = "auto",
                   max_nodes: Optional[int] = 5_000_000) -> tuple[int, np.ndarray]:
    """Minimum achievable gap and a witness attaining it.

    ``method`` is ``"enumerate"``, ``"bnb"`` or ``"auto"`` (enumeration for
    small n, otherwise DPLL followed by branch and bound).
    """
    if f.num_clauses == 0:
        return 0, np.zeros(f.num_vars, dtype=bool)
    if method == "auto":
        method = "enumerate" if f.num_vars <= ENUM_MAX_VARS else "bnb"
    if method == "enumerate":
        best, idx = _enumerated_optima(f)
        return best, _index_to_assignment(int(idx[0]), f.num_vars)
    if method != "bnb":
        raise ValueError(f"unknown method {method!r}")
    res = dpll_solve(f, max_decisions=max_nodes)
    if res.sat:
        return 0, res.assignment
    start = _greedy_upper_bound(f, np.ones(f.num_vars, dtype=bool))
    upper = int(batch_gaps(f, start[None])[0])
    bnb = _BranchAndBound(f, max_nodes)
    return bnb.min_gap(1, upper, start)


def closest_assignment(f: CnfFormula, ref, method: str = "auto",
                       max_nodes: Optional[int] = 5_000_000) -> np.ndarray:
    """Optimal (minimum-gap) assignment nearest in Hamming distance to ``ref``.

    ``ref`` holds probabilities of each variable being true and is rounded
    (``> 0.5`` is true) before measuring distance.  Among equally close
    optima the one agreeing with the rounded reference on the earliest
    variables wins, i.e. the disagreement vector is lexicographically
    smallest.
    """
    ref = np.asarray(ref, dtype=float)
    if ref.shape != (f.num_vars,):
        raise ValueError(f"reference must have length {f.num_vars}")
    r = ref > 0.5
    if f.num_clauses == 0:
        return r.copy()
    if method == "auto":
        method = "enumerate" if f.num_vars <= ENUM_MAX_VARS else "bnb"
    if method == "enumerate":
        _, idx = _enumerated_optima(f)
        d = idx ^ assignment_index(r)
        ham = _popcount(d)
        cand = d[ham == ham.min()]
        return _index_to_assignment(int(cand.min()) ^ assignment_index(r), f.num_vars)
    if method != "bnb":
        raise ValueError(f"unknown method {method!r}")
    best_gap, _ = maxsat_optimum(f, method="bnb", max_nodes=max_nodes)
    return _BranchAndBound(f, max_nodes).closest(best_gap, r.astype(np.int64))


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.int64).copy()
    out = np.zeros_like(x)
    while np.any(x):
        out += x & 1
        x >>= 1
    return out


def hamming(a, b) -> int:
    return int(np.sum(as_assignment(a) != as_assignment(b)))
