"""scikit-learn style wrappers around the solvers."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cnf import CnfFormula, gap
from .diffusion import DenoiserConfig, DiffusionRun, diffusion_solve_batch, train_denoiser
from .generators import LabeledInstance, instance_seed
from .inference import evaluate, sample_seeds, solve_batch
from .model import ModelConfig
from .sdp import sdp_solve
from .solvers import dpll_solve
from .training import TrainConfig, train


def check_formulas(X) -> list[CnfFormula]:
    """Accept formulas or labelled instances; return plain formulas."""
    if isinstance(X, (CnfFormula, LabeledInstance)):
        X = [X]
    out = []
    for x in X:
        if isinstance(x, LabeledInstance):
            x = x.formula
        if not isinstance(x, CnfFormula):
            raise TypeError(f"expected CnfFormula or LabeledInstance, got {type(x).__name__}")
        out.append(x)
    if not out:
        raise ValueError("empty input")
    return out


def check_instances(X, y=None) -> list[LabeledInstance]:
    """Labelled instances; bare formulas get labels and witnesses from DPLL.

    When ``y`` is given it must agree with the solver verdicts.
    """
    if isinstance(X, (CnfFormula, LabeledInstance)):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("empty input")
    if y is not None and len(y) != len(X):
        raise ValueError(f"{len(X)} formulas but {len(y)} labels")
    out = []
    for i, x in enumerate(X):
        if isinstance(x, CnfFormula):
            res = dpll_solve(x)
            x = LabeledInstance(x, res.sat, res.assignment, id=f"inst-{i}")
        elif not isinstance(x, LabeledInstance):
            raise TypeError(f"expected CnfFormula or LabeledInstance, got {type(x).__name__}")
        if y is not None and bool(y[i]) != x.sat:
            raise ValueError(f"label {bool(y[i])} for item {i} contradicts its satisfiability")
        out.append(x)
    return out


class NeuralSatSolver(ClassifierMixin, BaseEstimator):
    """Recurrent GNN trained on labelled formulas; predicts SAT by finding a witness."""

    def __init__(self, graph_kind="VCG", cell="RNN", d_model=64, t_train=25, loss="assignment",
                 assignment_loss="CE", sat_only=False, epochs=10, batch_size=64, lr=2e-4,
                 max_iters=100, samples=1, random_state=0):
        self.graph_kind = graph_kind
        self.cell = cell
        self.d_model = d_model
        self.t_train = t_train
        self.loss = loss
        self.assignment_loss = assignment_loss
        self.sat_only = sat_only
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.max_iters = max_iters
        self.samples = samples
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        mc = ModelConfig(graph_kind=self.graph_kind, cell=self.cell, d_model=self.d_model,
                         mlp_hidden=(self.d_model,), t_train=self.t_train)
        return TrainConfig(loss=self.loss, assignment_loss=self.assignment_loss,
                           sat_only=self.sat_only, epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, seed=self.random_state, model=mc)

    def fit(self, X, y=None, validation=None):
        data = check_instances(X, y)
        val = check_instances(validation) if validation is not None else None
        result = train(self._train_config(), data, val)
        self.model_ = result.model
        self.log_ = result.log
        self.classes_ = np.array([False, True])
        return self

    def solve(self, X) -> list:
        check_is_fitted(self, "model_")
        fs = check_formulas(X)
        out = []
        per = max(1, self.batch_size // self.samples)
        for lo in range(0, len(fs), per):
            chunk = fs[lo:lo + per]
            formulas, seeds = [], []
            for i, f in enumerate(chunk):
                formulas += [f] * self.samples
                seeds += sample_seeds(instance_seed(self.random_state, lo + i), self.samples)
            res = solve_batch(self.model_, formulas, self.max_iters, seeds)
            for i in range(len(chunk)):
                group = res[i * self.samples:(i + 1) * self.samples]
                out.append(min(group, key=lambda r: r.best_gap))
        return out

    def predict_assignments(self, X) -> list[np.ndarray]:
        return [r.assignment for r in self.solve(X)]

    def predict(self, X) -> np.ndarray:
        """SAT iff a verified witness was decoded (classifier head for sat-mode models)."""
        if self.loss == "sat":
            return self.predict_proba(X)[:, 1] > 0.5
        return np.array([r.found for r in self.solve(X)])

    @torch.no_grad()
    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.loss != "sat":
            found = self.predict(X).astype(float)
            return np.stack([1 - found, found], axis=1)
        fs = check_formulas(X)
        m = self.model_
        probs = []
        for lo in range(0, len(fs), self.batch_size):
            chunk = fs[lo:lo + self.batch_size]
            tg = m.graph(chunk)
            seeds = [instance_seed(self.random_state, lo + j) for j in range(len(chunk))]
            _, _, st = m(tg, self.t_train, seeds=seeds)
            probs.append(torch.sigmoid(m.sat_logit(tg, st)).numpy())
        p = np.concatenate(probs)
        return np.stack([1 - p, p], axis=1)

    def evaluate(self, instances, **kw):
        check_is_fitted(self, "model_")
        return evaluate(check_instances(instances), self.model_, self.max_iters,
                        self.samples, self.random_state, self.batch_size, **kw)


class DiffusionSatSolver(BaseEstimator):
    """Denoising-diffusion sampler over assignments."""

    def __init__(self, d_model=64, t_train=25, epochs=10, batch_size=64, lr=2e-3, T=50,
                 beta_min=0.02, beta_max=0.35, gnn_steps=25, steps=10, mode="sample",
                 random_state=0):
        self.d_model = d_model
        self.t_train = t_train
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.T = T
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.gnn_steps = gnn_steps
        self.steps = steps
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        data = check_instances(X, y)
        cfg = DenoiserConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, T=self.T,
                             beta_min=self.beta_min, beta_max=self.beta_max, seed=self.random_state,
                             model=ModelConfig(d_model=self.d_model, mlp_hidden=(self.d_model,),
                                               t_train=self.t_train))
        res = train_denoiser(data, cfg)
        self.model_, self.schedule_, self.log_ = res.model, res.schedule, res.log
        return self

    def solve(self, X) -> list:
        check_is_fitted(self, "model_")
        fs = check_formulas(X)
        run = DiffusionRun(gnn_steps=self.gnn_steps, steps=self.steps, mode=self.mode)
        out = []
        for lo in range(0, len(fs), self.batch_size):
            chunk = fs[lo:lo + self.batch_size]
            seeds = [instance_seed(self.random_state, lo + j) for j in range(len(chunk))]
            out += diffusion_solve_batch(chunk, self.model_, self.schedule_, run, seeds)
        return out

    def predict(self, X) -> np.ndarray:
        return np.array([r.found for r in self.solve(X)])

    def score(self, X, y=None) -> float:
        inst = check_instances(X, y)
        return float(np.mean(self.predict(inst) == np.array([i.sat for i in inst])))


class SdpMaxSat(BaseEstimator):
    """Vector relaxation with hyperplane rounding for 2-CNF formulas."""

    def __init__(self, iters=2000, k=64, random_state=0):
        self.iters = iters
        self.k = k
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> list[np.ndarray]:
        return [sdp_solve(f, self.iters, self.k, instance_seed(self.random_state, i),
                          with_optimum=False).assignment
                for i, f in enumerate(check_formulas(X))]

    def score(self, X, y=None) -> float:
        """Mean ratio of rounded satisfied clauses to the exact optimum."""
        fs = check_formulas(X)
        return float(np.mean([sdp_solve(f, self.iters, self.k, instance_seed(self.random_state, i)).ratio
                              for i, f in enumerate(fs)]))


def satisfied_fraction(f: CnfFormula, a: Sequence[bool]) -> float:
    return 1.0 - gap(f, np.asarray(a, dtype=bool)) / max(f.num_clauses, 1)
