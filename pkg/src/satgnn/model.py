"""Recurrent message-passing network over formula graphs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import autodiff as ad
from .cnf import CnfFormula
from .graph import LCG, VCG, GraphBatch, batch_graphs, build_graph
from .solvers import closest_assignment

RNN = "RNN"
LSTM = "LSTM"

PROB_CLAMP = 1e-6


@dataclass
class ModelConfig:
    graph_kind: str = VCG
    cell: str = RNN
    d_model: int = 64
    mlp_hidden: tuple[int, ...] = (64,)
    t_train: int = 25
    lcg_message_mlp: bool = False

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        if self.graph_kind not in (LCG, VCG):
            raise ValueError(f"graph_kind must be LCG or VCG, got {self.graph_kind!r}")
        if self.cell not in (RNN, LSTM):
            raise ValueError(f"cell must be RNN or LSTM, got {self.cell!r}")
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2")
        if self.t_train < 1:
            raise ValueError("t_train must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d


def mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.Tanh())
    return nn.Sequential(*layers)


@dataclass
class MpState:
    h_left: torch.Tensor
    h_clause: torch.Tensor
    c_left: Optional[torch.Tensor] = None
    c_clause: Optional[torch.Tensor] = None


@dataclass
class Prediction:
    logits: torch.Tensor

    @property
    def probs(self) -> torch.Tensor:
        return ad.softmax(self.logits)

    @property
    def p_true(self) -> torch.Tensor:
        return self.probs[:, 1]

    @property
    def hard(self) -> np.ndarray:
        # class 1 is "true"; ties go to false
        return (self.logits[:, 1] > self.logits[:, 0]).detach().cpu().numpy()


class TorchGraph:
    """Index tensors for one batch of formulas (a disjoint union)."""

    def __init__(self, formulas: Sequence[CnfFormula], kind: str):
        self.formulas = list(formulas)
        self.kind = kind
        batch: GraphBatch = batch_graphs([build_graph(f, kind) for f in self.formulas])
        g = batch.graph
        self.batch = batch
        self.num_graphs = batch.size
        self.num_vars = g.num_vars
        self.num_left = g.num_left
        self.num_clauses = g.num_clauses
        self.edge_left = torch.as_tensor(g.edge_left, dtype=torch.long)
        self.edge_clause = torch.as_tensor(g.edge_clause, dtype=torch.long)
        if kind == VCG:
            self.edge_var = self.edge_left
            self.edge_pos = torch.as_tensor(g.edge_polarity > 0)
        else:
            self.edge_var = self.edge_left % self.num_vars if self.num_vars else self.edge_left
            self.edge_pos = self.edge_left < self.num_vars
        self.flip = None if batch.flip is None else torch.as_tensor(batch.flip, dtype=torch.long)
        self.var_offsets = batch.var_offsets
        self.clause_offsets = batch.clause_offsets
        self.var_graph = torch.as_tensor(batch.var_graph, dtype=torch.long)
        self.clause_graph = torch.as_tensor(batch.clause_graph, dtype=torch.long)
        if kind == VCG:
            self.left_graph = self.var_graph
        else:
            self.left_graph = torch.cat([self.var_graph, self.var_graph])

    def split_vars(self, arr) -> list:
        return [arr[self.var_offsets[k]:self.var_offsets[k + 1]] for k in range(self.num_graphs)]

    def gaps(self, hard) -> np.ndarray:
        """Per-formula unsatisfied clause counts for a batched hard assignment."""
        hard = torch.as_tensor(np.asarray(hard), dtype=torch.bool)
        lit_true = (hard[self.edge_var] == self.edge_pos).to(torch.int64)
        sat = torch.zeros(self.num_clauses, dtype=torch.int64).index_add(0, self.edge_clause, lit_true) > 0
        unsat = (~sat).to(torch.int64)
        return torch.zeros(self.num_graphs, dtype=torch.int64).index_add(
            0, self.clause_graph, unsat).numpy()


def as_torch_graph(formulas, kind: str) -> TorchGraph:
    if isinstance(formulas, TorchGraph):
        if formulas.kind != kind:
            raise ValueError(f"graph batch is {formulas.kind}, model expects {kind}")
        return formulas
    if isinstance(formulas, CnfFormula):
        formulas = [formulas]
    return TorchGraph(formulas, kind)


def _seed_list(seeds, k: int) -> list[int]:
    if seeds is None:
        seeds = 0
    if isinstance(seeds, (int, np.integer)):
        ss = np.random.SeedSequence(int(seeds))
        return [int(s.generate_state(1)[0]) for s in ss.spawn(k)]
    seeds = [int(s) for s in seeds]
    if len(seeds) != k:
        raise ValueError(f"need {k} seeds, got {len(seeds)}")
    return seeds


class SatGNN(nn.Module):
    def __init__(self, config: ModelConfig | None = None, **kwargs):
        super().__init__()
        self.config = config or ModelConfig(**kwargs)
        cfg = self.config
        d = cfg.d_model
        hidden = list(cfg.mlp_hidden)
        cell = nn.RNNCell if cfg.cell == RNN else nn.LSTMCell
        if cfg.graph_kind == VCG:
            self.msg_vc_pos = mlp([d, *hidden, d])
            self.msg_vc_neg = mlp([d, *hidden, d])
            self.msg_cv_pos = mlp([d, *hidden, d])
            self.msg_cv_neg = mlp([d, *hidden, d])
            self.clause_cell = cell(d, d)
            self.left_cell = cell(d, d)
        else:
            if cfg.lcg_message_mlp:
                self.msg_lc = mlp([d, *hidden, d])
                self.msg_cl = mlp([d, *hidden, d])
            self.clause_cell = cell(d, d)
            self.left_cell = cell(2 * d, d)
        self.readout = nn.Linear(d, 2)
        self.sat_head = mlp([2 * d, d, 1])
        self.value_embedding = nn.Embedding(2, d)

    @property
    def d(self) -> int:
        return self.config.d_model

    @property
    def kind(self) -> str:
        return self.config.graph_kind

    @property
    def is_lstm(self) -> bool:
        return self.config.cell == LSTM

    def parameters_for(self, mode: str):
        """Named parameters that receive gradients under a loss mode."""
        skip = set()
        if mode == "sat":
            skip |= {"readout", "value_embedding"}
        elif mode == "diffusion":
            skip |= {"sat_head"}
        else:
            skip |= {"sat_head", "value_embedding"}
        return [(k, p) for k, p in self.named_parameters() if k.split(".")[0] not in skip]

    def graph(self, formulas) -> TorchGraph:
        return as_torch_graph(formulas, self.kind)

    # state construction ---------------------------------------------------

    def _dtype(self):
        return self.readout.weight.dtype

    def _random_rows(self, tg: TorchGraph, seeds) -> tuple[torch.Tensor, torch.Tensor]:
        seeds = _seed_list(seeds, tg.num_graphs)
        dtype = self._dtype()
        N = tg.num_vars
        left = torch.empty(tg.num_left, self.d, dtype=dtype)
        clause = torch.empty(tg.num_clauses, self.d, dtype=dtype)
        for k, s in enumerate(seeds):
            gen = torch.Generator().manual_seed(s)
            v0, v1 = int(tg.var_offsets[k]), int(tg.var_offsets[k + 1])
            c0, c1 = int(tg.clause_offsets[k]), int(tg.clause_offsets[k + 1])
            n = v1 - v0
            rows = torch.randn(n if self.kind == VCG else 2 * n, self.d, generator=gen, dtype=torch.float64)
            if self.kind == VCG:
                left[v0:v1] = rows.to(dtype)
            else:
                left[v0:v1] = rows[:n].to(dtype)
                left[N + v0:N + v1] = rows[n:].to(dtype)
            clause[c0:c1] = torch.randn(c1 - c0, self.d, generator=gen, dtype=torch.float64).to(dtype)
        return left, clause

    def _fresh_cells(self, state: MpState) -> MpState:
        if self.is_lstm:
            state.c_left = torch.zeros_like(state.h_left)
            state.c_clause = torch.zeros_like(state.h_clause)
        return state

    def init_state(self, formulas, seeds=0) -> MpState:
        """Standard-normal rows, unit-normalized; deterministic per seed."""
        tg = self.graph(formulas)
        left, clause = self._random_rows(tg, seeds)
        return self._fresh_cells(MpState(ad.l2_normalize(left), ad.l2_normalize(clause)))

    def embed_assignment(self, tg: TorchGraph, x) -> torch.Tensor:
        """Left-node rows embedding a batched Boolean assignment."""
        x = torch.as_tensor(np.asarray(x, dtype=np.int64))
        emb = self.value_embedding(x)
        if self.kind == LCG:
            emb = torch.cat([emb, self.value_embedding(1 - x)])
        return ad.l2_normalize(emb)

    def init_from_assignment(self, formulas, x, seeds=0) -> MpState:
        tg = self.graph(formulas)
        _, clause = self._random_rows(tg, seeds)
        return self._fresh_cells(MpState(self.embed_assignment(tg, x), ad.l2_normalize(clause)))

    # message passing -------------------------------------------------------

    def _cell(self, cell, x, h, c):
        if self.is_lstm:
            h, c = cell(x, (h, c))
            return h, c
        return cell(x, h), None

    def mp_round(self, formulas, state: MpState) -> MpState:
        tg = self.graph(formulas)
        if state.h_left.shape[0] != tg.num_left or state.h_clause.shape[0] != tg.num_clauses:
            raise ad.ShapeError("state does not match graph")
        hl, hc = state.h_left, state.h_clause
        if self.kind == VCG:
            pos = tg.edge_pos.unsqueeze(1)
            m_pos, m_neg = self.msg_vc_pos(hl), self.msg_vc_neg(hl)
            msg = torch.where(pos, ad.gather(m_pos, tg.edge_left), ad.gather(m_neg, tg.edge_left))
            agg_c = ad.segment_sum(msg, tg.edge_clause, tg.num_clauses)
            hc_new, cc_new = self._cell(self.clause_cell, agg_c, hc, state.c_clause)
            hc_new = ad.l2_normalize(hc_new)
            m_pos, m_neg = self.msg_cv_pos(hc_new), self.msg_cv_neg(hc_new)
            msg = torch.where(pos, ad.gather(m_pos, tg.edge_clause), ad.gather(m_neg, tg.edge_clause))
            agg_v = ad.segment_sum(msg, tg.edge_left, tg.num_left)
            hl_new, cl_new = self._cell(self.left_cell, agg_v, hl, state.c_left)
        else:
            src = self.msg_lc(hl) if self.config.lcg_message_mlp else hl
            agg_c = ad.segment_sum(ad.gather(src, tg.edge_left), tg.edge_clause, tg.num_clauses)
            hc_new, cc_new = self._cell(self.clause_cell, agg_c, hc, state.c_clause)
            hc_new = ad.l2_normalize(hc_new)
            src = self.msg_cl(hc_new) if self.config.lcg_message_mlp else hc_new
            agg_l = ad.segment_sum(ad.gather(src, tg.edge_clause), tg.edge_left, tg.num_left)
            inp = ad.concat([agg_l, ad.gather(hl, tg.flip)], dim=1)
            hl_new, cl_new = self._cell(self.left_cell, inp, hl, state.c_left)
        return MpState(ad.l2_normalize(hl_new), hc_new, cl_new, cc_new)

    def variable_rows(self, tg: TorchGraph, state: MpState) -> torch.Tensor:
        """Embeddings that stand for variables (positive literals under LCG)."""
        return state.h_left[: tg.num_vars]

    def readout_logits(self, tg: TorchGraph, state: MpState) -> torch.Tensor:
        return self.readout(self.variable_rows(tg, state))

    def sat_logit(self, tg: TorchGraph, state: MpState) -> torch.Tensor:
        pooled = ad.concat([
            ad.segment_mean(state.h_left, tg.left_graph, tg.num_graphs),
            ad.segment_mean(state.h_clause, tg.clause_graph, tg.num_graphs),
        ], dim=1)
        return self.sat_head(pooled).squeeze(1)

    def round_state(self, tg: TorchGraph, state: MpState) -> MpState:
        """Replace left embeddings by the embedding of the current hard decode."""
        hard = Prediction(self.readout_logits(tg, state)).hard
        return MpState(self.embed_assignment(tg, hard), state.h_clause, state.c_left, state.c_clause)

    def forward(self, formulas, t_steps: Optional[int] = None, seeds=0,
                state: Optional[MpState] = None, keep_states: bool = False,
                round_every: Optional[int] = None):
        """Run ``t_steps`` rounds; returns ``(Prediction, trajectory, final_state)``.

        The trajectory holds per-iteration logits (or full states with
        ``keep_states``).  ``round_every=s`` re-embeds the hard decode into
        the left nodes after every ``s`` rounds.
        """
        tg = self.graph(formulas)
        t_steps = self.config.t_train if t_steps is None else t_steps
        if t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if state is None:
            state = self.init_state(tg, seeds)
        traj = []
        for t in range(1, t_steps + 1):
            state = self.mp_round(tg, state)
            if keep_states:
                traj.append(state)
            else:
                traj.append(self.readout_logits(tg, state))
            if round_every and t % round_every == 0 and t < t_steps:
                state = self.round_state(tg, state)
        return Prediction(self.readout_logits(tg, state)), traj, state


# losses ---------------------------------------------------------------------

def loss_sat(sat_logit: torch.Tensor, label) -> torch.Tensor:
    """Binary cross-entropy of the satisfiability classifier."""
    return ad.binary_cross_entropy(torch.sigmoid(sat_logit), label)


def loss_assignment(pred: Prediction, target, mode: str = "CE") -> torch.Tensor:
    target = np.asarray(target).astype(np.int64)
    if target.shape[0] != pred.logits.shape[0]:
        raise ad.ShapeError(f"target length {target.shape[0]} != {pred.logits.shape[0]} variables")
    if mode == "CE":
        return ad.cross_entropy(pred.logits, target)
    if mode == "MSE":
        return ad.mse(pred.p_true, target.astype(np.float64))
    raise ValueError(f"unknown assignment loss mode {mode!r}")


def clause_log_unsat(p_true: torch.Tensor, tg: TorchGraph) -> torch.Tensor:
    """log of the probability each clause is violated under independent bits."""
    x = p_true.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    xe = ad.gather(x.unsqueeze(1), tg.edge_var).squeeze(1)
    factor = torch.where(tg.edge_pos, torch.log1p(-xe), torch.log(xe))
    return ad.segment_sum(factor.unsqueeze(1), tg.edge_clause, tg.num_clauses).squeeze(1)


def loss_unsupervised(pred: Prediction, formulas, kind: str = VCG) -> torch.Tensor:
    """Sum over clauses of ``-log V_c``, averaged over the formulas in a batch."""
    tg = as_torch_graph(formulas, kind)
    log_unsat = clause_log_unsat(pred.p_true, tg)
    # V_c = 1 - exp(log_unsat); -log(-expm1(.)) is the stable form
    per_clause = -torch.log(-torch.expm1(log_unsat))
    per_graph = ad.segment_sum(per_clause.unsqueeze(1), tg.clause_graph, tg.num_graphs).squeeze(1)
    return per_graph.mean()


def closest_targets(pred: Prediction, tg: TorchGraph, method: str = "auto") -> np.ndarray:
    p = pred.p_true.detach().cpu().numpy().astype(np.float64)
    parts = [closest_assignment(f, ref, method=method)
             for f, ref in zip(tg.formulas, tg.split_vars(p))]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def loss_closest(pred: Prediction, formulas, kind: str = VCG, method: str = "auto"):
    """Cross-entropy against the optimal assignment nearest to the prediction.

    Returns ``(loss, targets)``; targets are recomputed on every call.
    """
    tg = as_torch_graph(formulas, kind)
    target = closest_targets(pred, tg, method)
    return loss_assignment(pred, target, "CE"), target
