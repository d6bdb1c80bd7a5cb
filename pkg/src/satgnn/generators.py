"""Random instance generators (SR pairs, phase-transition 3-SAT) and datasets."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .cnf import CnfFormula, gap, random_gap_stats, read_dimacs, write_dimacs
from .solvers import dpll_solve

logger = logging.getLogger(__name__)

SR = "SR"
THREE_SAT = "3SAT"

# largest n the embedded DPLL is trusted with during generation
MAX_GENERATOR_VARS = 400


@dataclass
class LabeledInstance:
    formula: CnfFormula
    sat: bool
    witness: Optional[np.ndarray] = None
    id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        if self.sat and self.witness is None:
            raise ValueError("satisfiable instance needs a witness")
        if not self.sat:
            self.witness = None

    @property
    def num_vars(self) -> int:
        return self.formula.num_vars


@dataclass
class SRWidth:
    """Clause width ``base + Bernoulli(p_bernoulli) + Geometric(p_geometric)``.

    The defaults give a base width of 1 with probability 0.3 and 2
    otherwise, plus a geometric tail with success probability 0.4.
    """

    base: int = 1
    p_bernoulli: float = 0.7
    p_geometric: float = 0.4

    def sample(self, rng: np.random.Generator, n: int) -> int:
        k = self.base + rng.binomial(1, self.p_bernoulli) + rng.geometric(self.p_geometric)
        return int(min(max(k, 1), n))


def _random_clause(rng: np.random.Generator, n: int, k: int) -> list[int]:
    vs = rng.choice(n, size=k, replace=False) + 1
    signs = np.where(rng.random(k) < 0.5, -1, 1)
    return [int(v * s) for v, s in zip(vs, signs)]


def _check_n(n: int):
    if n < 3:
        raise ValueError(f"need at least 3 variables, got {n}")
    if n > MAX_GENERATOR_VARS:
        raise ValueError(f"n={n} exceeds the generator solver budget ({MAX_GENERATOR_VARS})")


def gen_sr_pair(n: int, rng: np.random.Generator, width: SRWidth | None = None
                ) -> tuple[LabeledInstance, LabeledInstance]:
    """Generate an (unsat, sat) pair differing in one literal of the last clause."""
    _check_n(n)
    width = width or SRWidth()
    clauses: list[list[int]] = []
    witness: Optional[np.ndarray] = None
    while True:
        clause = _random_clause(rng, n, width.sample(rng, n))
        clauses.append(clause)
        if witness is not None and any(witness[abs(l) - 1] == (l > 0) for l in clause):
            continue  # the current model still satisfies everything
        res = dpll_solve(CnfFormula(n, clauses))
        if res.sat:
            witness = res.assignment
            continue
        break
    unsat = CnfFormula(n, clauses)
    flipped = [-clauses[-1][0]] + clauses[-1][1:]
    sat_f = CnfFormula(n, clauses[:-1] + [flipped])
    res = dpll_solve(sat_f)
    assert res.sat, "flipping a literal of the final clause must restore satisfiability"
    return LabeledInstance(unsat, False), LabeledInstance(sat_f, True, res.assignment)


def gen_3sat(n: int, ratio: float, rng: np.random.Generator, label: bool = True) -> LabeledInstance:
    """Uniform random 3-SAT with ``round(ratio * n)`` clauses.

    With ``label=False`` the solver is skipped and the instance is marked
    unsatisfiable-unknown (``sat=False``); only use that for statistics.
    """
    _check_n(n)
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    m = int(round(ratio * n))
    f = CnfFormula(n, [_random_clause(rng, n, 3) for _ in range(m)])
    if not label:
        return LabeledInstance(f, False)
    res = dpll_solve(f)
    return LabeledInstance(f, res.sat, res.assignment)


@dataclass
class DatasetSpec:
    family: str
    n_range: tuple[int, int]
    count: int
    sat_only: bool = False
    clause_ratio: float = 4.26
    seed: int = 0
    width: SRWidth = field(default_factory=SRWidth)

    def __post_init__(self):
        lo, hi = self.n_range
        self.n_range = (int(lo), int(hi))
        if self.family not in (SR, THREE_SAT):
            raise ValueError(f"unknown family {self.family!r}")
        if lo < 3 or hi < lo:
            raise ValueError(f"bad n_range {self.n_range}")
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.family == SR and self.count % 2:
            raise ValueError("SR datasets are built from pairs; count must be even")
        if self.clause_ratio <= 0:
            raise ValueError("clause_ratio must be positive")


def instance_seed(root_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([root_seed, index]).generate_state(1, dtype=np.uint32)[0])


def generate(spec: DatasetSpec) -> Iterator[LabeledInstance]:
    """Yield the instances of ``spec`` in a seed-determined order."""
    lo, hi = spec.n_range
    if spec.family == SR:
        for p in range(spec.count // 2):
            s = instance_seed(spec.seed, p)
            rng = np.random.default_rng(s)
            n = int(rng.integers(lo, hi + 1))
            unsat, sat = gen_sr_pair(n, rng, spec.width)
            if not spec.sat_only:
                unsat.id, unsat.seed = f"sr-{p:06d}-unsat", s
                yield unsat
            sat.id, sat.seed = f"sr-{p:06d}-sat", s
            yield sat
    else:
        for i in range(spec.count):
            s = instance_seed(spec.seed, i)
            rng = np.random.default_rng(s)
            n = int(rng.integers(lo, hi + 1))
            inst = gen_3sat(n, spec.clause_ratio, rng)
            if spec.sat_only and not inst.sat:
                continue
            inst.id, inst.seed = f"3sat-{i:06d}", s
            yield inst


def witness_string(a: Optional[np.ndarray]) -> Optional[str]:
    if a is None:
        return None
    return "".join("1" if v else "0" for v in a)


def parse_witness(s: Optional[str]) -> Optional[np.ndarray]:
    if s is None:
        return None
    return np.array([c == "1" for c in s], dtype=bool)


def build_dataset(spec: DatasetSpec, out_dir) -> list[dict]:
    """Write one DIMACS file per instance plus ``manifest.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for inst in generate(spec):
        fname = f"{inst.id}.cnf"
        write_dimacs(inst.formula, out / fname)
        rows.append({
            "id": inst.id,
            "family": spec.family,
            "file": fname,
            "n": inst.formula.num_vars,
            "m": inst.formula.num_clauses,
            "sat": inst.sat,
            "witness": witness_string(inst.witness),
            "seed": inst.seed,
        })
    with open(out / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    logger.info("wrote %d instances to %s", len(rows), out)
    return rows


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_dataset(path, sat_only: bool = False, verify: bool = True) -> list[LabeledInstance]:
    """Load instances listed in a manifest (file or its directory)."""
    path = Path(path)
    manifest = path / "manifest.jsonl" if path.is_dir() else path
    rows = read_manifest(manifest)
    out = []
    for row in rows:
        if sat_only and not row["sat"]:
            continue
        f = read_dimacs(manifest.parent / row["file"])
        if f.num_vars != row["n"] or f.num_clauses != row["m"]:
            raise ValueError(f"manifest row {row['id']} disagrees with {row['file']}")
        w = parse_witness(row.get("witness"))
        if verify and w is not None and gap(f, w) != 0:
            raise ValueError(f"witness for {row['id']} does not satisfy the formula")
        out.append(LabeledInstance(f, bool(row["sat"]), w, row["id"], row.get("seed")))
    return out


def dataset_stats(instances: Sequence[LabeledInstance], samples: int = 1000, seed: int = 0) -> dict:
    """Benchmark statistics: SAT%, random-assignment gaps and mean clause count."""
    if not instances:
        raise ValueError("empty dataset")
    gaps = []
    for i, inst in enumerate(instances):
        mean, _ = random_gap_stats(inst.formula, samples, seed=instance_seed(seed, i))
        gaps.append(mean)
    gaps = np.array(gaps)
    sat = np.array([inst.sat for inst in instances])
    m = np.array([inst.formula.num_clauses for inst in instances], dtype=float)
    return {
        "instances": len(instances),
        "sat_pct": 100.0 * sat.mean(),
        "avg_gap": float(gaps.mean()),
        "sat_gap": float(gaps[sat].mean()) if sat.any() else float("nan"),
        "unsat_gap": float(gaps[~sat].mean()) if (~sat).any() else float("nan"),
        "avg_clauses": float(m.mean()),
    }


def spec_to_dict(spec: DatasetSpec) -> dict:
    d = asdict(spec)
    d["n_range"] = list(spec.n_range)
    return d
