"""Training loop with curriculum, EMA-validated model selection and metric logs."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import autodiff as ad
from .cnf import batch_gaps
from .generators import LabeledInstance, instance_seed, load_dataset
from .inference import evaluate
from .model import (ModelConfig, SatGNN, loss_assignment, loss_closest, loss_sat,
                    loss_unsupervised)
from .solvers import maxsat_optimum

logger = logging.getLogger(__name__)

LOSS_MODES = ("sat", "assignment", "unsupervised", "closest")
# closest targets come from an exact search; keep formulas small enough for it
CLOSEST_MAX_VARS = 60
# closest targets are re-verified by enumeration on every SPOT_CHECK_EVERY-th batch
SPOT_CHECK_EVERY = 100
SPOT_CHECK_MAX_VARS = 12


@dataclass
class TrainConfig:
    dataset: Optional[str] = None
    val_dataset: Optional[str] = None
    loss: str = "assignment"
    assignment_loss: str = "CE"
    sat_only: bool = False
    curriculum: Optional[bool] = None  # None: on for sat mode only
    curriculum_start: int = 5
    curriculum_step: int = 2
    curriculum_thresholds: tuple[float, float] = (0.65, 0.85)
    curriculum_max_epochs: int = 100
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-4
    lr_min: float = 1e-5
    ema_beta: float = 0.999
    ema_warmup: bool = True
    grad_clip: Optional[float] = 1.0
    eval_every: int = 1
    val_iters: int = 25
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        self.curriculum_thresholds = tuple(self.curriculum_thresholds)
        if self.loss not in LOSS_MODES:
            raise ValueError(f"loss must be one of {LOSS_MODES}, got {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be positive")

    @property
    def use_curriculum(self) -> bool:
        return self.loss == "sat" if self.curriculum is None else bool(self.curriculum)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["curriculum_thresholds"] = list(self.curriculum_thresholds)
        return d


# curriculum -----------------------------------------------------------------

@dataclass
class CurriculumState:
    size: int
    max_size: int
    start: int = 5
    step: int = 2
    thresholds: tuple[float, float] = (0.65, 0.85)
    max_epochs: int = 100
    epochs_at_size: int = 0

    @property
    def threshold(self) -> float:
        lo, hi = self.thresholds
        if self.max_size <= self.start:
            return lo
        frac = min(1.0, (self.size - self.start) / (self.max_size - self.start))
        return lo + (hi - lo) * frac

    def pool_bounds(self) -> tuple[int, int]:
        """Variable counts in the active pool: current size and the four sizes before it."""
        return self.size - 4 * self.step, self.size

    def in_pool(self, n: int) -> bool:
        lo, hi = self.pool_bounds()
        return lo <= n <= hi


def start_curriculum(max_size: int, cfg: TrainConfig | None = None) -> CurriculumState:
    cfg = cfg or TrainConfig()
    start = min(cfg.curriculum_start, max_size)
    return CurriculumState(start, max_size, start, cfg.curriculum_step,
                           cfg.curriculum_thresholds, cfg.curriculum_max_epochs)


def curriculum_step(state: CurriculumState, val_acc: float) -> CurriculumState:
    epochs = state.epochs_at_size + 1
    if val_acc >= state.threshold or epochs >= state.max_epochs:
        size = min(state.size + state.step, state.max_size)
        if size != state.size:
            return CurriculumState(size, state.max_size, state.start, state.step,
                                   state.thresholds, state.max_epochs, 0)
    return CurriculumState(state.size, state.max_size, state.start, state.step,
                           state.thresholds, state.max_epochs, epochs)


# training -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: SatGNN
    store: ad.ParamStore
    log: list[dict]
    best_metric: float
    best_epoch: int
    config: TrainConfig

    def best_model(self) -> SatGNN:
        """The model carrying the selected (best EMA) weights."""
        return self.model


def ema_beta(cfg: TrainConfig, step: int) -> float:
    if cfg.ema_warmup:
        return min(cfg.ema_beta, (1 + step) / (10 + step))
    return cfg.ema_beta


@lru_cache(maxsize=None)
def _maxsat_target(f) -> np.ndarray:
    return maxsat_optimum(f)[1]


def _precalculated_target(inst: LabeledInstance) -> np.ndarray:
    if inst.witness is not None:
        return inst.witness
    # unsatisfiable: an optimal MaxSAT assignment stands in for the witness
    return _maxsat_target(inst.formula)


def check_closest_targets(formulas, preds: np.ndarray, targets: np.ndarray) -> int:
    """Verify closest targets against full enumeration; returns the number checked."""
    checked, lo = 0, 0
    for f in formulas:
        n = f.num_vars
        ref, target = preds[lo:lo + n] > 0.5, targets[lo:lo + n]
        lo += n
        if n > SPOT_CHECK_MAX_VARS:
            continue
        table = ((np.arange(2 ** n)[:, None] >> np.arange(n)[::-1]) & 1).astype(bool)
        gaps = batch_gaps(f, table)
        best = gaps.min()
        dist = (table[gaps == best] != ref).sum(1).min()
        if batch_gaps(f, target[None])[0] != best or (target != ref).sum() != dist:
            raise RuntimeError(f"closest target is not optimal for a formula with n={n}")
        checked += 1
    return checked


def batch_loss(model: SatGNN, cfg: TrainConfig, batch: Sequence[LabeledInstance], seeds,
               spot_check: bool = False):
    formulas = [inst.formula for inst in batch]
    tg = model.graph(formulas)
    pred, _, state = model(tg, cfg.model.t_train, seeds=seeds)
    if cfg.loss == "sat":
        return loss_sat(model.sat_logit(tg, state), [float(i.sat) for i in batch])
    if cfg.loss == "assignment":
        target = np.concatenate([_precalculated_target(i) for i in batch])
        return loss_assignment(pred, target, cfg.assignment_loss)
    if cfg.loss == "unsupervised":
        return loss_unsupervised(pred, tg, model.kind)
    loss, target = loss_closest(pred, tg, model.kind)
    if spot_check:
        check_closest_targets(formulas, pred.p_true.detach().numpy(), target)
    return loss


def validation_metric(model: SatGNN, cfg: TrainConfig, val: Sequence[LabeledInstance]) -> dict:
    """Decision accuracy for the classifier, SAT accuracy for assignment modes."""
    if cfg.loss == "sat":
        with torch.no_grad():
            accs = []
            for lo in range(0, len(val), cfg.batch_size):
                chunk = val[lo:lo + cfg.batch_size]
                tg = model.graph([i.formula for i in chunk])
                seeds = [instance_seed(cfg.seed + 7, lo + j) for j in range(len(chunk))]
                _, _, st = model(tg, cfg.model.t_train, seeds=seeds)
                pred = (model.sat_logit(tg, st) > 0).numpy()
                accs.extend(pred == np.array([i.sat for i in chunk]))
        return {"metric": float(np.mean(accs)), "decision_acc": float(np.mean(accs))}
    summ = evaluate(val, model, cfg.val_iters, samples=1, seed=cfg.seed + 7,
                    batch_size=cfg.batch_size).metrics
    metric = summ["sat_acc"] if not np.isnan(summ["sat_acc"]) else summ["decision_acc"]
    return {"metric": float(metric), "avg_gap": summ["avg_gap"], "sat_acc": summ["sat_acc"],
            "decision_acc": summ["decision_acc"]}


def _split_validation(data, seed, frac=0.1):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(data))
    k = max(1, int(len(data) * frac))
    return [data[i] for i in idx[k:]], [data[i] for i in idx[:k]]


def train(cfg: TrainConfig, train_set: Optional[Sequence[LabeledInstance]] = None,
          val_set: Optional[Sequence[LabeledInstance]] = None, out_dir=None,
          time_budget: Optional[float] = None, track_raw: bool = False) -> TrainResult:
    """Train a model; returns it loaded with the best EMA weights.

    ``time_budget`` (seconds) stops after the epoch that exceeds it.  With
    ``track_raw`` the raw (non-EMA) weights are also validated each epoch.
    """
    torch.manual_seed(cfg.seed)
    if train_set is None:
        if cfg.dataset is None:
            raise ValueError("no training data: set dataset or pass train_set")
        train_set = load_dataset(cfg.dataset, sat_only=cfg.sat_only)
    if val_set is None and cfg.val_dataset is not None:
        val_set = load_dataset(cfg.val_dataset)
    train_set = [i for i in train_set if i.sat or not cfg.sat_only]
    if not train_set:
        raise ValueError("empty training set")
    if val_set is None:
        train_set, val_set = _split_validation(train_set, cfg.seed)
    if not val_set:
        raise ValueError("empty validation set")
    if cfg.loss == "closest":
        big = max(i.formula.num_vars for i in train_set)
        if big > CLOSEST_MAX_VARS:
            raise ValueError(f"closest mode needs n <= {CLOSEST_MAX_VARS}, dataset has n={big}")

    model = SatGNN(cfg.model)
    store = ad.ParamStore(model.parameters_for(cfg.loss))
    max_n = max(i.formula.num_vars for i in train_set)
    cur = start_curriculum(max_n, cfg) if cfg.use_curriculum else None
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []
    best_metric, best_epoch, best_arrays = -np.inf, -1, None
    t0 = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        lr = ad.lr_schedule(epoch, cfg.epochs, cfg.lr, min(cfg.lr_min, cfg.lr))
        pool = train_set if cur is None else [i for i in train_set if cur.in_pool(i.formula.num_vars)]
        if not pool:
            pool = train_set
        order = rng.permutation(len(pool))
        model.train()
        losses = []
        for b, lo in enumerate(range(0, len(pool), cfg.batch_size)):
            batch = [pool[i] for i in order[lo:lo + cfg.batch_size]]
            seeds = [instance_seed(cfg.seed, epoch * 1_000_003 + lo + j) for j in range(len(batch))]
            loss = batch_loss(model, cfg, batch, seeds, spot_check=b % SPOT_CHECK_EVERY == 0)
            store.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(list(store.params.values()), cfg.grad_clip)
            ad.adam_step(store, lr)
            ad.ema_update(store, ema_beta(cfg, step))
            step += 1
            losses.append(float(loss.detach()))
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "lr": lr}
        if cur is not None:
            row["curriculum_size"] = cur.size
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            model.eval()
            val = val_set if cur is None else [i for i in val_set if i.formula.num_vars <= cur.size] or val_set
            if track_raw:
                raw = validation_metric(model, cfg, val)
                row["raw_metric"] = raw["metric"]
            with store.swap_ema():
                vm = validation_metric(model, cfg, val)
            row.update({f"val_{k}": v for k, v in vm.items()})
            # with a curriculum only full-size validation is comparable
            selectable = cur is None or cur.size == cur.max_size
            if selectable and vm["metric"] > best_metric:
                best_metric, best_epoch = vm["metric"], epoch + 1
                best_arrays = {k: v.clone() for k, v in store.ema.items()}
            if cur is not None:
                cur = curriculum_step(cur, vm["metric"])
        log.append(row)
        logger.info("epoch %d %s", epoch + 1, row)
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            break

    if best_arrays is None:
        best_arrays = {k: v.clone() for k, v in store.ema.items()}
        best_epoch = log[-1]["epoch"]
        best_metric = log[-1].get("val_metric", float("nan"))
    with torch.no_grad():
        for k, p in store.params.items():
            p.copy_(best_arrays[k])
    model.eval()
    result = TrainResult(model, store, log, float(best_metric), best_epoch, cfg)
    if out_dir is not None:
        save_run(result, out_dir)
    return result


def write_log_csv(log: Sequence[dict], path) -> None:
    cols: list[str] = []
    for row in log:
        cols += [k for k in row if k not in cols]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in log:
            w.writerow([_fmt(row.get(c, "")) for c in cols])


def _fmt(v):
    return f"{v:.8g}" if isinstance(v, float) else v


def save_run(result: TrainResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.npz"
    save_model(result.model, ckpt, result.config, result.store,
               {"best_epoch": result.best_epoch, "best_metric": result.best_metric})
    write_log_csv(result.log, out / "metrics.csv")
    return ckpt


def save_model(model: SatGNN, path, train_cfg: TrainConfig | None = None,
               store: ad.ParamStore | None = None, extra: dict | None = None) -> None:
    config = {"model": model.config.to_dict()}
    if train_cfg is not None:
        config["train"] = train_cfg.to_dict()
    store = store or ad.ParamStore(model)
    full = ad.ParamStore(model)
    # keep optimizer/EMA state for trained parameters, plain weights for the rest
    for k in full.params:
        if k in store.params:
            full.ema[k], full.m[k], full.v[k] = store.ema[k], store.m[k], store.v[k]
    full.step = store.step
    ad.save_checkpoint(path, full, config, extra)


def load_model(path) -> tuple[SatGNN, dict]:
    meta, arrays = ad.read_checkpoint(path)
    model = SatGNN(ModelConfig(**meta["config"]["model"]))
    ad.ParamStore(model).load_arrays(arrays)
    model.eval()
    return model, meta
