"""CNF formulas, DIMACS I/O and assignment evaluation.

Literals use the DIMACS convention at the API boundary (``3`` is x3,
``-3`` is its negation).  Internally every formula also carries flat,
0-based index arrays (``lit_var``, ``lit_pos``, ``lit_clause``) that the
numeric code works on.
"""
from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DimacsError(ValueError):
    """Raised for malformed DIMACS input."""


class DimacsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Literal:
    var: int
    positive: bool = True

    def __post_init__(self):
        if self.var < 1:
            raise ValueError(f"variable index must be >= 1, got {self.var}")

    def __neg__(self) -> "Literal":
        return Literal(self.var, not self.positive)

    def to_int(self) -> int:
        return self.var if self.positive else -self.var

    @classmethod
    def from_int(cls, lit: int) -> "Literal":
        if lit == 0:
            raise ValueError("0 is not a literal")
        return cls(abs(lit), lit > 0)


@dataclass(frozen=True, eq=False)
class CnfFormula:
    """An immutable CNF formula over variables ``1..num_vars``."""

    num_vars: int
    clauses: tuple[tuple[int, ...], ...]
    lit_var: np.ndarray = field(init=False, repr=False)
    lit_pos: np.ndarray = field(init=False, repr=False)
    lit_clause: np.ndarray = field(init=False, repr=False)

    def __init__(self, num_vars: int, clauses: Iterable[Sequence[int]]):
        clauses = tuple(tuple(int(l) for l in c) for c in clauses)
        if num_vars < 0:
            raise ValueError("num_vars must be non-negative")
        for i, c in enumerate(clauses):
            if not c:
                raise ValueError(f"clause {i} is empty")
            for lit in c:
                if lit == 0 or abs(lit) > num_vars:
                    raise ValueError(f"literal {lit} in clause {i} out of range for n={num_vars}")
        object.__setattr__(self, "num_vars", int(num_vars))
        object.__setattr__(self, "clauses", clauses)
        flat = np.fromiter((l for c in clauses for l in c), dtype=np.int64)
        sizes = np.fromiter((len(c) for c in clauses), dtype=np.int64, count=len(clauses))
        lit_var = np.abs(flat) - 1
        lit_pos = flat > 0
        lit_clause = np.repeat(np.arange(len(clauses), dtype=np.int64), sizes)
        for arr in (lit_var, lit_pos, lit_clause):
            arr.setflags(write=False)
        object.__setattr__(self, "lit_var", lit_var)
        object.__setattr__(self, "lit_pos", lit_pos)
        object.__setattr__(self, "lit_clause", lit_clause)

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    @property
    def num_literals(self) -> int:
        return int(self.lit_var.shape[0])

    def __len__(self) -> int:
        return len(self.clauses)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CnfFormula):
            return NotImplemented
        return self.num_vars == other.num_vars and self.clauses == other.clauses

    def __hash__(self) -> int:
        return hash((self.num_vars, self.clauses))

    def __repr__(self) -> str:
        return f"CnfFormula(num_vars={self.num_vars}, num_clauses={self.num_clauses})"

    def negated_literals(self) -> "CnfFormula":
        """Formula with every literal replaced by its complement."""
        return CnfFormula(self.num_vars, [[-l for l in c] for c in self.clauses])

    def rename(self, perm: Sequence[int]) -> "CnfFormula":
        """Rename variable ``i`` (0-based) to ``perm[i]``."""
        perm = list(perm)
        return CnfFormula(
            self.num_vars,
            [[(perm[abs(l) - 1] + 1) * (1 if l > 0 else -1) for l in c] for c in self.clauses],
        )

    def with_clauses(self, clauses) -> "CnfFormula":
        return CnfFormula(self.num_vars, clauses)


@dataclass(frozen=True)
class EvalReport:
    satisfied_count: int
    gap: int
    is_satisfying: bool


def as_assignment(values, num_vars: int | None = None) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != 1:
        raise ValueError(f"assignment must be 1-D, got shape {a.shape}")
    a = a.astype(bool)
    if num_vars is not None and a.shape[0] != num_vars:
        raise ValueError(f"assignment has length {a.shape[0]}, formula has {num_vars} variables")
    return a


def clause_satisfaction(f: CnfFormula, a) -> np.ndarray:
    """Boolean vector: which clauses have at least one true literal."""
    a = as_assignment(a, f.num_vars)
    lit_true = a[f.lit_var] == f.lit_pos
    sat = np.zeros(f.num_clauses, dtype=bool)
    np.logical_or.at(sat, f.lit_clause, lit_true)
    return sat


def gap(f: CnfFormula, a) -> int:
    return int(f.num_clauses - clause_satisfaction(f, a).sum())


def evaluate(f: CnfFormula, a) -> EvalReport:
    sat = int(clause_satisfaction(f, a).sum())
    g = f.num_clauses - sat
    return EvalReport(satisfied_count=sat, gap=g, is_satisfying=g == 0)


def batch_gaps(f: CnfFormula, assignments: np.ndarray) -> np.ndarray:
    """Gaps for a ``(k, n)`` stack of assignments."""
    A = np.asarray(assignments, dtype=bool)
    if A.ndim != 2 or A.shape[1] != f.num_vars:
        raise ValueError(f"expected shape (k, {f.num_vars}), got {A.shape}")
    lit_true = A[:, f.lit_var] == f.lit_pos[None, :]
    counts = np.zeros((A.shape[0], f.num_clauses), dtype=np.int64)
    np.add.at(counts.T, f.lit_clause, lit_true.T.astype(np.int64))
    return (counts == 0).sum(axis=1)


def random_gap_stats(f: CnfFormula, samples: int, seed=None) -> tuple[float, float]:
    """Mean and standard deviation of the gap under uniform random assignments."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    gaps = []
    chunk = 4096
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        A = rng.random((k, f.num_vars)) < 0.5
        gaps.append(batch_gaps(f, A))
        done += k
    g = np.concatenate(gaps).astype(float)
    return float(g.mean()), float(g.std())


# DIMACS ---------------------------------------------------------------------

def parse_dimacs(text, strict: bool = False) -> CnfFormula:
    """Parse DIMACS CNF from a string, bytes or text stream.

    A clause-count mismatch with the header warns; with ``strict=True``
    it raises :class:`DimacsError`.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    if not isinstance(text, str):
        text = text.read()
    n = m = None
    clauses: list[list[int]] = []
    current: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            # end marker used by the SATLIB uniform benchmarks
            break
        if line.startswith("p"):
            parts = line.split()
            if n is not None:
                raise DimacsError(f"line {lineno}: duplicate header")
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"line {lineno}: malformed header {line!r}")
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"line {lineno}: malformed header {line!r}") from None
            if n < 0 or m < 0:
                raise DimacsError(f"line {lineno}: negative counts in header")
            continue
        if n is None:
            raise DimacsError(f"line {lineno}: clause before header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(f"line {lineno}: bad token {tok!r}") from None
            if lit == 0:
                if not current:
                    raise DimacsError(f"line {lineno}: empty clause")
                clauses.append(current)
                current = []
            else:
                if abs(lit) > n:
                    raise DimacsError(f"line {lineno}: variable {abs(lit)} exceeds n={n}")
                current.append(lit)
    if n is None:
        raise DimacsError("missing 'p cnf' header")
    if current:
        # tolerate a missing final terminator
        clauses.append(current)
    if len(clauses) != m:
        msg = f"header declares {m} clauses, found {len(clauses)}"
        if strict:
            raise DimacsError(msg)
        warnings.warn(msg, DimacsWarning, stacklevel=2)
    return CnfFormula(n, clauses)


def write_dimacs(f: CnfFormula, out=None, comments: Sequence[str] = ()) -> str | None:
    """Serialize to DIMACS with LF line endings.

    Returns the text when ``out`` is None, otherwise writes to ``out``
    (a path or a text stream).
    """
    buf = io.StringIO()
    for c in comments:
        buf.write(f"c {c}\n")
    buf.write(f"p cnf {f.num_vars} {f.num_clauses}\n")
    for clause in f.clauses:
        buf.write(" ".join(map(str, clause)))
        buf.write(" 0\n")
    text = buf.getvalue()
    if out is None:
        return text
    if isinstance(out, (str, Path)):
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        out.write(text)
    return None


def read_dimacs(path, strict: bool = False) -> CnfFormula:
    return parse_dimacs(Path(path).read_bytes(), strict=strict)
