"""Categorical (binary) diffusion over assignments with a GNN denoiser."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from . import autodiff as ad
from .cnf import CnfFormula, gap as formula_gap
from .generators import LabeledInstance, instance_seed
from .inference import NO_WITNESS, SAT_FOUND, SolveResult
from .model import ModelConfig, SatGNN
from .solvers import UNASSIGNED, Propagation, unit_propagate

logger = logging.getLogger(__name__)

POSTERIOR_MODES = ("sample", "argmax", "round")


@dataclass(frozen=True)
class NoiseSchedule:
    """Symmetric two-state corruption chain.

    ``keep[t]`` is the product of ``1 - 2 beta_s`` for ``s <= t`` so the
    cumulative flip probability at ``t`` is ``(1 - keep[t]) / 2``.
    """

    betas: np.ndarray
    keep: np.ndarray  # length T + 1, keep[0] = 1

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def flip_prob(self, t: int, t_from: int = 0) -> float:
        """Probability that a bit differs between times ``t_from`` and ``t``."""
        self._check(t)
        if not 0 <= t_from <= t:
            raise ValueError("need 0 <= t_from <= t")
        return float((1.0 - self.keep[t] / self.keep[t_from]) / 2.0)

    def q(self, t: int) -> np.ndarray:
        b = float(self.betas[t - 1])
        return np.array([[1 - b, b], [b, 1 - b]])

    def qbar(self, t: int) -> np.ndarray:
        p = self.flip_prob(t)
        return np.array([[1 - p, p], [p, 1 - p]])

    def _check(self, t: int):
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")


def build_schedule(T: int = 50, beta_min: float = 0.02, beta_max: float = 0.35) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_min <= beta_max < 0.5:
        raise ValueError("need 0 < beta_min <= beta_max < 0.5")
    betas = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    keep = np.concatenate([[1.0], np.cumprod(1.0 - 2.0 * betas)])
    betas.setflags(write=False)
    keep.setflags(write=False)
    return NoiseSchedule(betas, keep)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def forward_corrupt(x0, t: int, schedule: NoiseSchedule, seed=None) -> np.ndarray:
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    x0 = np.asarray(x0, dtype=bool)
    flips = _rng(seed).random(x0.shape) < schedule.flip_prob(t)
    return x0 ^ flips


def posterior_probs(x_t, p0, t: int, schedule: NoiseSchedule, t_prev: Optional[int] = None) -> np.ndarray:
    """``p(x_prev = 1 | x_t)`` with ``x0`` marginalized under the predicted weights.

    For each candidate ``x0`` the exact two-state posterior
    ``q(x_prev | x0) q(x_t | x_prev) / q(x_t | x0)`` is formed and the two
    are mixed with weights ``p0`` (probability that ``x0 = 1``).
    """
    t_prev = t - 1 if t_prev is None else t_prev
    if not 1 <= t <= schedule.T or not 0 <= t_prev < t:
        raise ValueError("need 0 <= t_prev < t <= T")
    x_t = np.asarray(x_t, dtype=bool)
    p0 = np.asarray(p0, dtype=np.float64)
    if p0.ndim == 2:
        p0 = p0[:, 1]
    a = schedule.flip_prob(t_prev)  # x0 -> x_prev
    b = schedule.flip_prob(t, t_prev)  # x_prev -> x_t
    out = np.zeros(x_t.shape, dtype=np.float64)
    for x0 in (0, 1):
        w = p0 if x0 else 1.0 - p0
        # unnormalized q(x_prev=v | x0) * q(x_t | x_prev=v) for v = 0, 1
        num = []
        for v in (0, 1):
            prior = 1.0 - a if v == x0 else a
            like = np.where(x_t == v, 1.0 - b, b)
            num.append(prior * like)
        out += w * num[1] / (num[0] + num[1])
    return out


def posterior_step(x_t, p0, t: int, schedule: NoiseSchedule, seed=None,
                   mode: str = "sample", t_prev: Optional[int] = None) -> np.ndarray:
    """Draw ``x_{t_prev}``; ``round`` mode returns the predicted ``x0`` directly."""
    if mode not in POSTERIOR_MODES:
        raise ValueError(f"mode must be one of {POSTERIOR_MODES}")
    p0 = np.asarray(p0, dtype=np.float64)
    if p0.ndim == 2:
        p0 = p0[:, 1]
    if mode == "round":
        return p0 > 0.5
    probs = posterior_probs(x_t, p0, t, schedule, t_prev)
    if mode == "argmax":
        return probs > 0.5
    return _rng(seed).random(probs.shape) < probs


def inference_timesteps(T: int, steps: int) -> list[int]:
    """Descending timesteps ``T = t_0 > ... > t_k = 0`` with ``k <= steps``."""
    if steps < 1:
        raise ValueError("need at least one diffusion step")
    ts = np.rint(np.linspace(T, 0, min(steps, T) + 1)).astype(int)
    return sorted(set(ts.tolist()), reverse=True)


# denoiser -------------------------------------------------------------------

@dataclass
class DiffusionRun:
    gnn_steps: int = 25
    steps: int = 10
    thresholds: tuple[float, ...] = (0.6, 0.75, 0.9)
    max_depth: Optional[int] = None  # default: number of diffusion steps
    max_calls: int = 200
    mode: str = "sample"

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        th = self.thresholds
        if not th or any(not 0.5 < x < 1 for x in th) or any(a >= b for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly ascending inside (0.5, 1)")
        if self.gnn_steps < 1 or self.steps < 1 or self.max_calls < 1:
            raise ValueError("gnn_steps, steps and max_calls must be positive")
        if self.mode not in POSTERIOR_MODES:
            raise ValueError(f"mode must be one of {POSTERIOR_MODES}")

    @property
    def depth_limit(self) -> int:
        return self.steps if self.max_depth is None else self.max_depth


class Denoiser:
    """Runs the GNN from embedded assignments; clause states persist between calls."""

    def __init__(self, model: SatGNN, formulas: Sequence[CnfFormula], seeds):
        self.model = model
        self.tg = model.graph(list(formulas))
        self.state = model.init_state(self.tg, seeds)
        self.hard: Optional[np.ndarray] = None

    @torch.no_grad()
    def __call__(self, x, gnn_steps: int) -> np.ndarray:
        """Probability that each variable is true in ``x0``."""
        m = self.model
        st = self.state
        st.h_left = m.embed_assignment(self.tg, np.asarray(x, dtype=np.int64))
        for _ in range(gnn_steps):
            st = m.mp_round(self.tg, st)
        self.state = st
        logits = m.readout_logits(self.tg, st)
        self.hard = (logits[:, 1] > logits[:, 0]).numpy()
        return torch.softmax(logits, -1)[:, 1].double().numpy()


def diffusion_solve_batch(formulas: Sequence[CnfFormula], model: SatGNN, schedule: NoiseSchedule,
                          run: DiffusionRun, seeds: Sequence[int],
                          init: Optional[Sequence[np.ndarray]] = None) -> list[SolveResult]:
    formulas = list(formulas)
    den = Denoiser(model, formulas, seeds)
    offs = den.tg.var_offsets
    rngs = [np.random.default_rng([s, 1]) for s in seeds]
    if init is None:
        init = [r.random(f.num_vars) < 0.5 for r, f in zip(rngs, formulas)]
    x = np.concatenate([np.asarray(a, dtype=bool) for a in init])
    K = len(formulas)
    best_gap = np.full(K, np.iinfo(np.int64).max, dtype=np.int64)
    best = [None] * K
    steps_used = np.zeros(K, dtype=np.int64)
    done = np.zeros(K, dtype=bool)
    traj: list[list[int]] = [[] for _ in range(K)]
    ts = inference_timesteps(schedule.T, run.steps)
    for i, (t, t_prev) in enumerate(zip(ts, ts[1:]), start=1):
        p0 = den(x, run.gnn_steps)
        hard = den.hard
        gaps = den.tg.gaps(hard)
        for k in np.flatnonzero(~done):
            g = int(gaps[k])
            traj[k].append(g)
            steps_used[k] = i
            if g < best_gap[k]:
                best_gap[k], best[k] = g, hard[offs[k]:offs[k + 1]].copy()
            if g == 0:
                done[k] = True
        if done.all():
            break
        parts = []
        for k in range(K):
            sl = slice(offs[k], offs[k + 1])
            parts.append(posterior_step(x[sl], p0[sl], t, schedule, rngs[k], run.mode, t_prev))
        x = np.concatenate(parts)
    return [SolveResult(SAT_FOUND if best_gap[k] == 0 else NO_WITNESS, best[k], int(best_gap[k]),
                        int(steps_used[k]), traj[k]) for k in range(K)]


def diffusion_solve(f: CnfFormula, model: SatGNN, schedule: NoiseSchedule,
                    run: DiffusionRun | None = None, seed: int = 0,
                    init: Optional[np.ndarray] = None) -> SolveResult:
    """Reverse diffusion from a random assignment, decoding after every step."""
    run = run or DiffusionRun()
    return diffusion_solve_batch([f], model, schedule, run, [seed],
                                 None if init is None else [init])[0]


def periodic_rounding_inference(f: CnfFormula, model: SatGNN, gnn_steps: int, steps: int,
                                seed: int = 0, init_assignment=None) -> list[np.ndarray]:
    """Assignment-model run that re-embeds its rounded decode every ``gnn_steps`` rounds.

    Returns the hard decode at every rounding boundary.
    """
    tg = model.graph([f])
    if init_assignment is None:
        init_assignment = np.random.default_rng([seed, 1]).random(f.num_vars) < 0.5
    with torch.no_grad():
        state = model.init_from_assignment(tg, np.asarray(init_assignment, dtype=np.int64), [seed])
        _, traj, _ = model(tg, gnn_steps * steps, state=state, round_every=gnn_steps)
    return [(traj[i - 1][:, 1] > traj[i - 1][:, 0]).numpy()
            for i in range(gnn_steps, gnn_steps * steps + 1, gnn_steps)]


def deterministic_diffusion_trajectory(f: CnfFormula, model: SatGNN, gnn_steps: int, steps: int,
                                       seed: int = 0, init_assignment=None) -> list[np.ndarray]:
    """Decodes of a rounding-mode diffusion run, one per diffusion step (no early stop)."""
    den = Denoiser(model, [f], [seed])
    x = (np.random.default_rng([seed, 1]).random(f.num_vars) < 0.5
         if init_assignment is None else np.asarray(init_assignment, dtype=bool))
    out = []
    for _ in range(steps):
        den(x, gnn_steps)
        # rounding-mode posterior: the next input is the predicted x0
        x = den.hard.copy()
        out.append(x.copy())
    return out


# unit-propagation guided search ------------------------------------------------

@dataclass
class UpResult:
    result: SolveResult
    calls: int


def _compact(residual: CnfFormula) -> tuple[CnfFormula, np.ndarray]:
    """Renumber the variables occurring in ``residual`` densely; returns the var map."""
    used = np.unique(residual.lit_var)
    remap = {int(v): i + 1 for i, v in enumerate(used)}
    clauses = [[(1 if l > 0 else -1) * remap[abs(l) - 1] for l in c] for c in residual.clauses]
    return CnfFormula(len(used), clauses), used


def up_guided_solve(f: CnfFormula, model: SatGNN, schedule: NoiseSchedule,
                    run: DiffusionRun | None = None, seed: int = 0) -> UpResult:
    """Diffusion interleaved with unit propagation over high-belief partial assignments.

    Every call spends one diffusion step on its (sub)formula.  For each
    threshold in ascending order the confident variables are fixed and
    propagated; a conflict or a failed child moves to the next threshold.
    When all thresholds fail the call recurses with a fresh diffusion step
    on the same formula.  Depth is bounded by ``run.depth_limit`` and the
    total work by ``run.max_calls``.
    """
    run = run or DiffusionRun()
    rng = np.random.default_rng([seed, 1])
    ts = inference_timesteps(schedule.T, run.steps)
    calls = 0
    best = {"gap": f.num_clauses + 1, "assign": np.ones(f.num_vars, dtype=bool)}

    def consider(full: np.ndarray):
        g = formula_gap(f, full)
        if g < best["gap"]:
            best["gap"], best["assign"] = g, full.copy()
        return g

    def recurse(sub: CnfFormula, var_map: np.ndarray, base: np.ndarray, x: np.ndarray,
                depth: int) -> Optional[np.ndarray]:
        # base: full assignment carrying the values fixed by ancestors
        nonlocal calls
        if depth >= run.depth_limit or calls >= run.max_calls:
            return None
        calls += 1
        step = min(depth, len(ts) - 2)
        t, t_prev = ts[step], ts[step + 1]
        den = Denoiser(model, [sub], [instance_seed(seed, calls)])
        p0 = den(x, run.gnn_steps)
        hard = den.hard
        full = base.copy()
        full[var_map] = hard
        if consider(full) == 0:
            return full
        belief = np.maximum(p0, 1.0 - p0)
        for th in run.thresholds:
            if calls >= run.max_calls:
                return None
            partial = np.where(belief >= th, hard.astype(np.int8), np.int8(UNASSIGNED))
            out = unit_propagate(sub, partial)
            if out.kind == Propagation.CONFLICT:
                continue
            ext = out.extended
            full = base.copy()
            full[var_map] = np.where(ext == UNASSIGNED, hard, ext == 1)
            if out.kind == Propagation.SOLVED:
                consider(full)
                return full
            child, used = _compact(out.residual)
            x_child = posterior_step(x, p0, t, schedule, rng, run.mode, t_prev)[used]
            res = recurse(child, var_map[used], full, x_child, depth + 1)
            if res is not None:
                return res
        x_next = posterior_step(x, p0, t, schedule, rng, run.mode, t_prev)
        return recurse(sub, var_map, base, x_next, depth + 1)

    x0 = rng.random(f.num_vars) < 0.5
    found = recurse(f, np.arange(f.num_vars), np.ones(f.num_vars, dtype=bool), x0, 0)
    if found is not None:
        assert formula_gap(f, found) == 0
        res = SolveResult(SAT_FOUND, found, 0, calls, [])
    else:
        res = SolveResult(NO_WITNESS, best["assign"], int(best["gap"]), calls, [])
    return UpResult(res, calls)


def up_call_report(instances: Sequence[LabeledInstance], results: Sequence[UpResult]) -> dict:
    """Average recursive calls overall and split by solved/unsolved."""
    calls = np.array([r.calls for r in results], dtype=float)
    solved = np.array([r.result.found for r in results])
    return {
        "total_calls": float(calls.mean()) if calls.size else float("nan"),
        "solved_calls": float(calls[solved].mean()) if solved.any() else float("nan"),
        "unsolved_calls": float(calls[~solved].mean()) if (~solved).any() else float("nan"),
    }


# training -------------------------------------------------------------------

@dataclass
class DenoiserConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-3
    lr_min: float = 1e-5
    ema_beta: float = 0.999
    grad_clip: Optional[float] = 1.0
    T: int = 50
    beta_min: float = 0.02
    beta_max: float = 0.35
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.T, self.beta_min, self.beta_max)


@dataclass
class DenoiserResult:
    model: SatGNN
    store: ad.ParamStore
    schedule: NoiseSchedule
    log: list[dict]


def denoiser_loss(model: SatGNN, batch: Sequence[LabeledInstance], schedule: NoiseSchedule,
                  rng: np.random.Generator, seeds, gnn_steps: int, t=None):
    """Cross-entropy of the predicted ``x0`` from corrupted witnesses."""
    formulas, xs, x0s = [], [], []
    for inst in batch:
        if inst.witness is None:
            raise ValueError(f"instance {inst.id or '?'} has no witness")
        tt = int(rng.integers(1, schedule.T + 1)) if t is None else t
        formulas.append(inst.formula)
        xs.append(forward_corrupt(inst.witness, tt, schedule, rng))
        x0s.append(inst.witness)
    tg = model.graph(formulas)
    state = model.init_from_assignment(tg, np.concatenate(xs).astype(np.int64), seeds)
    for _ in range(gnn_steps):
        state = model.mp_round(tg, state)
    logits = model.readout_logits(tg, state)
    return ad.cross_entropy(logits, np.concatenate(x0s).astype(np.int64)), logits


def train_denoiser(instances: Sequence[LabeledInstance], cfg: DenoiserConfig | None = None,
                   model: SatGNN | None = None) -> DenoiserResult:
    """Fit a denoiser on satisfiable instances; the returned model holds EMA weights."""
    cfg = cfg or DenoiserConfig()
    data = [i for i in instances if i.sat]
    if not data:
        raise ValueError("denoiser training needs satisfiable instances with witnesses")
    torch.manual_seed(cfg.seed)
    model = model or SatGNN(cfg.model)
    schedule = cfg.schedule()
    store = ad.ParamStore(model.parameters_for("diffusion"))
    rng = np.random.default_rng(cfg.seed)
    log, step = [], 0
    model.train()
    for epoch in range(cfg.epochs):
        lr = ad.lr_schedule(epoch, cfg.epochs, cfg.lr, min(cfg.lr_min, cfg.lr))
        order = rng.permutation(len(data))
        losses = []
        for lo in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[lo:lo + cfg.batch_size]]
            seeds = [instance_seed(cfg.seed, epoch * 1_000_003 + lo + j) for j in range(len(batch))]
            loss, _ = denoiser_loss(model, batch, schedule, rng, seeds, cfg.model.t_train)
            store.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(list(store.params.values()), cfg.grad_clip)
            ad.adam_step(store, lr)
            ad.ema_update(store, min(cfg.ema_beta, (1 + step) / (10 + step)))
            step += 1
            losses.append(float(loss.detach()))
        log.append({"epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr})
        logger.info("denoiser epoch %d loss %.4f", epoch + 1, log[-1]["loss"])
    with torch.no_grad():
        for k, p in store.params.items():
            p.copy_(store.ema[k])
    model.eval()
    return DenoiserResult(model, store, schedule, log)
