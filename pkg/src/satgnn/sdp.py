"""MAX-2-SAT vector relaxation: objective matrix, sphere optimization and rounding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cnf import CnfFormula, batch_gaps
from .solvers import maxsat_optimum


@dataclass(frozen=True)
class SdpProblem:
    """Expected satisfied clauses equal ``offset + Tr(W Y)`` with ``Y = V V^T``.

    Row/column 0 belongs to the reference vector ``y_0``; variable ``i``
    (1-based) owns row ``i``.  ``W`` has a zero diagonal.
    """

    W: np.ndarray
    offset: float
    num_clauses: int

    @property
    def size(self) -> int:
        return int(self.W.shape[0])

    def objective(self, Y: np.ndarray) -> float:
        return float(self.offset + np.sum(self.W * Y))


def build_w(f: CnfFormula) -> SdpProblem:
    n = f.num_vars
    C = np.zeros((n + 1, n + 1))
    offset = 0.0

    def term(i, j, c):
        nonlocal offset
        if i == j:
            offset += c  # Y_ii = 1
        else:
            C[min(i, j), max(i, j)] += c

    for clause in f.clauses:
        if len(clause) > 2:
            raise ValueError(f"clause {clause} has width {len(clause)}; only MAX-2-SAT is supported")
        if len(clause) == 1:
            l = clause[0]
            offset += 0.5
            term(0, abs(l), 0.5 * np.sign(l))
        else:
            a, b = clause
            sa, sb = np.sign(a), np.sign(b)
            # 1 - (1 - sa Y0a)(1 - sb Y0b)/4 with Y0a Y0b lifted to Y_ab
            offset += 0.75
            term(0, abs(a), 0.25 * sa)
            term(0, abs(b), 0.25 * sb)
            term(abs(a), abs(b), -0.25 * sa * sb)
    W = (C + C.T) / 2.0
    return SdpProblem(W, float(offset), f.num_clauses)


@dataclass
class VectorState:
    V: np.ndarray  # (n+1, r) unit rows
    objective: float
    history: list[float] = field(default_factory=list)

    @property
    def Y(self) -> np.ndarray:
        return self.V @ self.V.T


def _normalize_rows(V: np.ndarray) -> np.ndarray:
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def optimize_vectors(p: SdpProblem, iters: int = 2000, lr: float = 0.1, seed: int = 0,
                     rank: Optional[int] = None, tol: float = 1e-12) -> VectorState:
    """Projected gradient ascent on the unit sphere with backtracking.

    A step is accepted only if the objective does not drop; rejected steps
    halve the step size and accepted ones grow it by 1.5x.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    r = rank or p.size
    rng = np.random.default_rng(seed)
    V = _normalize_rows(rng.standard_normal((p.size, r)))
    obj = p.objective(V @ V.T)
    history = [obj]
    step = lr
    for _ in range(iters):
        G = 2.0 * p.W @ V
        accepted = False
        for _ in range(40):
            cand = _normalize_rows(V + step * G)
            val = p.objective(cand @ cand.T)
            if val >= obj:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = val - obj
        V, obj = cand, val
        history.append(obj)
        step *= 1.5
        if gain <= tol:
            break
    return VectorState(V, obj, history)


def round_vectors(state: VectorState, f: CnfFormula | None = None, mode: str = "sign",
                  k: int = 64, seed: int = 0) -> np.ndarray:
    """Boolean assignment from the vectors; a zero margin means true.

    ``sign`` uses the side of each ``y_i`` relative to ``y_0``.  ``hyperplane``
    draws ``k`` random hyperplanes and keeps the one whose assignment has
    the smallest gap on ``f``.
    """
    V = state.V
    if mode == "sign":
        return V[1:] @ V[0] >= 0
    if mode != "hyperplane":
        raise ValueError(f"unknown rounding mode {mode!r}")
    if f is None:
        raise ValueError("hyperplane rounding needs the formula to score candidates")
    if k < 1:
        raise ValueError("k must be >= 1")
    R = np.random.default_rng(seed).standard_normal((k, V.shape[1]))
    proj = R @ V.T  # (k, n+1)
    side0 = np.where(proj[:, :1] >= 0, 1.0, -1.0)
    cands = proj[:, 1:] * side0 >= 0
    gaps = batch_gaps(f, cands)
    return cands[int(np.argmin(gaps))]


@dataclass
class SdpReport:
    relaxation: float
    rounded: int
    optimum: int
    ratio: float
    assignment: np.ndarray


def sdp_solve(f: CnfFormula, iters: int = 2000, k: int = 64, seed: int = 0,
              with_optimum: bool = True) -> SdpReport:
    p = build_w(f)
    st = optimize_vectors(p, iters=iters, seed=seed)
    a = round_vectors(st, f, "hyperplane", k=k, seed=seed)
    sat = f.num_clauses - int(batch_gaps(f, a[None])[0])
    opt = f.num_clauses - maxsat_optimum(f)[0] if with_optimum else -1
    ratio = sat / opt if opt > 0 else (1.0 if opt == 0 else float("nan"))
    return SdpReport(st.objective, sat, opt, float(ratio), a)


def random_max2sat(n: int, m: int, rng: np.random.Generator) -> CnfFormula:
    """Uniform random 2-CNF with distinct variables per clause."""
    if n < 2:
        raise ValueError("need at least 2 variables")
    clauses = []
    for _ in range(m):
        vs = rng.choice(n, size=2, replace=False) + 1
        signs = np.where(rng.random(2) < 0.5, -1, 1)
        clauses.append([int(v * s) for v, s in zip(vs, signs)])
    return CnfFormula(n, clauses)
