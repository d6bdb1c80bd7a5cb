"""Test-time solving: early stopping, resampling, sweeps and embedding decoders."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .cnf import CnfFormula, gap as formula_gap
from .generators import LabeledInstance, instance_seed
from .model import Prediction, SatGNN

SAT_FOUND = "SatFound"
NO_WITNESS = "NoWitness"

ITER_LEVELS = (25, 50, 75, 100, 125)
SAMPLE_LEVELS = (1, 2, 3, 4, 5)


@dataclass
class SolveResult:
    status: str
    assignment: np.ndarray
    best_gap: int
    steps_used: int
    gap_trajectory: list[int]
    best_iter: int = 0
    sample: int = 0

    @property
    def found(self) -> bool:
        return self.status == SAT_FOUND


def sample_seeds(seed: int, k: int) -> list[int]:
    """Seed stream for resampling; the first ``j`` entries never depend on ``k``."""
    return [instance_seed(seed, j) for j in range(k)]


@torch.no_grad()
def solve_batch(model: SatGNN, formulas: Sequence[CnfFormula], max_iters: int,
                seeds: Sequence[int], early_stop: bool = True) -> list[SolveResult]:
    """Decode every iteration and keep the running-minimum gap per formula."""
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    formulas = list(formulas)
    tg = model.graph(formulas)
    state = model.init_state(tg, list(seeds))
    K = tg.num_graphs
    offs = tg.var_offsets
    best_gap = np.full(K, np.iinfo(np.int64).max, dtype=np.int64)
    best_iter = np.zeros(K, dtype=np.int64)
    best_assign = [None] * K
    steps = np.full(K, max_iters, dtype=np.int64)
    done = np.zeros(K, dtype=bool)
    traj: list[list[int]] = [[] for _ in range(K)]
    for t in range(1, max_iters + 1):
        state = model.mp_round(tg, state)
        hard = Prediction(model.readout_logits(tg, state)).hard
        gaps = tg.gaps(hard)
        # without early stopping solved formulas keep recording, so trajectories span max_iters
        for k in (np.flatnonzero(~done) if early_stop else range(K)):
            g = int(gaps[k])
            traj[k].append(g)
            if g < best_gap[k]:
                best_gap[k] = g
                best_iter[k] = t
                best_assign[k] = hard[offs[k]:offs[k + 1]].copy()
            if g == 0 and not done[k]:
                done[k] = True
                steps[k] = t
        if early_stop and done.all():
            break
    return [
        SolveResult(SAT_FOUND if best_gap[k] == 0 else NO_WITNESS, best_assign[k],
                    int(best_gap[k]), int(steps[k]), traj[k], int(best_iter[k]))
        for k in range(K)
    ]


def solve(f: CnfFormula, model: SatGNN, max_iters: int = 100, seed: int = 0) -> SolveResult:
    return solve_batch(model, [f], max_iters, [seed])[0]


def _best_of(results: Sequence[SolveResult]) -> SolveResult:
    best = min(range(len(results)), key=lambda j: (results[j].best_gap, j))
    r = results[best]
    r.sample = best
    return r


def resample_solve(f: CnfFormula, model: SatGNN, max_iters: int = 100, k: int = 1,
                   seed: int = 0) -> SolveResult:
    """Best result over ``k`` random initializations (ties go to the earliest)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _best_of(solve_batch(model, [f] * k, max_iters, sample_seeds(seed, k)))


# dataset evaluation ---------------------------------------------------------

@dataclass
class InstanceRecord:
    id: str
    n: int
    m: int
    sat: bool
    best_gap: int
    found: bool
    steps: int
    sample: int


@dataclass
class EvalSummary:
    records: list[InstanceRecord]
    metrics: dict = field(default_factory=dict)


def summarize(records: Sequence[InstanceRecord]) -> dict:
    """Aggregate metrics; percentages are fractions in [0, 1]."""
    if not records:
        raise ValueError("no records to summarize")
    gaps = np.array([r.best_gap for r in records], dtype=float)
    sat = np.array([r.sat for r in records])
    found = np.array([r.found for r in records])
    steps = np.array([r.steps for r in records], dtype=float)
    out = {
        "instances": len(records),
        "avg_gap": float(gaps.mean()),
        "sat_gap": float(gaps[sat].mean()) if sat.any() else float("nan"),
        "unsat_gap": float(gaps[~sat].mean()) if (~sat).any() else float("nan"),
        "sat_acc": float(found[sat].mean()) if sat.any() else float("nan"),
        # SAT is declared only on a verified witness, so UNSAT rows are always right
        "decision_acc": float(np.mean(found == sat)),
        "unsat_gap1": float((gaps[~sat] == 1).mean()) if (~sat).any() else float("nan"),
    }
    solved = found & sat
    out["sat_steps_avg"] = float(steps[solved].mean()) if solved.any() else float("nan")
    out["sat_steps_med"] = float(np.median(steps[solved])) if solved.any() else float("nan")
    unsat_opt = ~sat & (gaps == 1)
    out["unsat_steps_avg"] = float(steps[unsat_opt].mean()) if unsat_opt.any() else float("nan")
    out["unsat_steps_med"] = float(np.median(steps[unsat_opt])) if unsat_opt.any() else float("nan")
    return out


def _unsat_steps(r: SolveResult) -> int:
    # for formulas never solved, report the first iteration reaching the best gap
    return r.steps_used if r.found else r.best_iter


def evaluate(instances: Sequence[LabeledInstance], model: SatGNN, max_iters: int = 100,
             samples: int = 1, seed: int = 0, batch_size: int = 64) -> EvalSummary:
    """Best-of-``samples`` evaluation over a labelled set."""
    if not instances:
        raise ValueError("empty dataset")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    model.eval()
    per = max(1, batch_size // samples)
    records = []
    for lo in range(0, len(instances), per):
        chunk = instances[lo:lo + per]
        formulas, seeds = [], []
        for i, inst in enumerate(chunk):
            formulas += [inst.formula] * samples
            seeds += sample_seeds(instance_seed(seed, lo + i), samples)
        results = solve_batch(model, formulas, max_iters, seeds)
        for i, inst in enumerate(chunk):
            r = _best_of(results[i * samples:(i + 1) * samples])
            records.append(InstanceRecord(inst.id or f"inst-{lo + i}", inst.formula.num_vars,
                                          inst.formula.num_clauses, inst.sat, r.best_gap,
                                          r.found, _unsat_steps(r), r.sample))
    return EvalSummary(records, summarize(records))


def write_records_csv(records: Sequence[InstanceRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "n", "m", "sat", "best_gap", "found", "steps", "sample"])
        for r in records:
            w.writerow([r.id, r.n, r.m, int(r.sat), r.best_gap, int(r.found), r.steps, r.sample])


# iteration x sample sweep ---------------------------------------------------

@dataclass
class SweepGrid:
    iter_levels: tuple[int, ...]
    sample_levels: tuple[int, ...]
    cells: dict  # (iters, samples) -> metrics dict

    def rows(self) -> list[dict]:
        return [{"iters": i, "samples": s, **self.cells[(i, s)]}
                for i in self.iter_levels for s in self.sample_levels]

    def write_csv(self, path) -> None:
        cols = ["iters", "samples", "avg_gap", "sat_acc", "decision_acc"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in self.rows():
                w.writerow([row[c] if isinstance(row[c], int) else f"{row[c]:.6f}" for c in cols])


def sweep(instances: Sequence[LabeledInstance], model: SatGNN,
          iter_levels: Sequence[int] = ITER_LEVELS, sample_levels: Sequence[int] = SAMPLE_LEVELS,
          seed: int = 0, batch_size: int = 64) -> SweepGrid:
    """Metrics for every (iterations, samples) cell from one set of runs.

    Each instance gets ``max(sample_levels)`` runs of ``max(iter_levels)``
    iterations without early stopping; a cell takes the running minimum of
    the first ``iters`` gaps over the first ``samples`` runs, so the grid is
    monotone in both axes by construction.
    """
    iter_levels = tuple(sorted(set(int(i) for i in iter_levels)))
    sample_levels = tuple(sorted(set(int(s) for s in sample_levels)))
    if not iter_levels or not sample_levels or not instances:
        raise ValueError("sweep needs non-empty grids and data")
    if iter_levels[0] < 1 or sample_levels[0] < 1:
        raise ValueError("levels must be >= 1")
    T, S = iter_levels[-1], sample_levels[-1]
    model.eval()
    # prefix_min[i, s, t] = min gap over iterations <= t+1 for sample s
    prefix = np.zeros((len(instances), S, T), dtype=np.int64)
    per = max(1, batch_size // S)
    for lo in range(0, len(instances), per):
        chunk = instances[lo:lo + per]
        formulas, seeds = [], []
        for i, inst in enumerate(chunk):
            formulas += [inst.formula] * S
            seeds += sample_seeds(instance_seed(seed, lo + i), S)
        results = solve_batch(model, formulas, T, seeds, early_stop=False)
        for i in range(len(chunk)):
            for s in range(S):
                tr = results[i * S + s].gap_trajectory
                prefix[lo + i, s] = np.minimum.accumulate(tr)
    sat = np.array([inst.sat for inst in instances])
    cells = {}
    for it in iter_levels:
        for s in sample_levels:
            g = prefix[:, :s, it - 1].min(axis=1)
            found = g == 0
            cells[(it, s)] = {
                "avg_gap": float(g.mean()),
                "sat_acc": float(found[sat].mean()) if sat.any() else float("nan"),
                "decision_acc": float(np.mean(found == sat)),
            }
    return SweepGrid(iter_levels, sample_levels, cells)


# embedding-space decoding -----------------------------------------------------

def kmeans2(x: np.ndarray, seed: int = 0, iters: int = 50) -> np.ndarray:
    """Two-means labels with a deterministic farthest-point start."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    first = int(np.random.default_rng(seed).integers(n))
    d = ((x - x[first]) ** 2).sum(1)
    second = int(np.argmax(d))
    centers = np.stack([x[first], x[second]])
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(iters):
        dist = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new = np.argmin(dist, axis=1)
        for c in range(2):
            if (new == c).any():
                centers[c] = x[new == c].mean(0)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def cluster_decode(rows, f: CnfFormula, seed: int = 0, iters: int = 50) -> np.ndarray:
    """Split variable embeddings into two clusters; pick the better truth mapping."""
    rows = rows.detach().cpu().numpy() if isinstance(rows, torch.Tensor) else np.asarray(rows)
    n = f.num_vars
    if rows.shape[0] != n:
        raise ValueError(f"expected {n} embedding rows, got {rows.shape[0]}")
    if n == 1:
        cands = [np.array([True]), np.array([False])]
    else:
        labels = kmeans2(rows, seed, iters).astype(bool)
        cands = [labels, ~labels]
    gaps = [formula_gap(f, a) for a in cands]
    return cands[int(np.argmin(gaps))]


@torch.no_grad()
def cluster_solve(f: CnfFormula, model: SatGNN, t_steps: int = 25, seed: int = 0) -> np.ndarray:
    tg = model.graph([f])
    _, _, state = model(tg, t_steps, seeds=[seed])
    return cluster_decode(model.variable_rows(tg, state), f, seed)


def pca2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project rows to 2D; returns ``(coords, explained_variance)`` of the top two axes."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    k = min(2, vt.shape[0])
    coords = np.zeros((x.shape[0], 2))
    coords[:, :k] = xc @ vt[:k].T
    var = np.zeros(2)
    var[:k] = s[:k] ** 2 / max(x.shape[0] - 1, 1)
    return coords, var


@dataclass
class Trajectory:
    rows: list[tuple]  # (iter, node, x, y, cluster, gap)
    gaps: list[int]
    explained_variance: np.ndarray  # (t, 2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "node", "x", "y", "cluster", "gap"])
            for it, node, x, y, c, g in self.rows:
                w.writerow([it, node, f"{x:.6f}", f"{y:.6f}", c, g])


@torch.no_grad()
def export_trajectory(f: CnfFormula, model: SatGNN, t: int = 25, seed: int = 0) -> Trajectory:
    """Per-iteration PCA projection of the variable embeddings with decoded gaps."""
    if t < 2:
        raise ValueError("t must be >= 2")
    tg = model.graph([f])
    _, states, _ = model(tg, t, seeds=[seed], keep_states=True)
    rows, gaps, var = [], [], []
    for it, st in enumerate(states, start=1):
        hard = Prediction(model.readout_logits(tg, st)).hard
        g = int(formula_gap(f, hard))
        gaps.append(g)
        emb = model.variable_rows(tg, st).numpy()
        coords, ev = pca2(emb)
        var.append(ev)
        clusters = kmeans2(emb, seed) if f.num_vars > 1 else np.zeros(1, dtype=np.int64)
        for node in range(f.num_vars):
            rows.append((it, node, float(coords[node, 0]), float(coords[node, 1]),
                         int(clusters[node]), g))
    return Trajectory(rows, gaps, np.array(var))
