"""Differentiable building blocks, parameter store, optimizer and schedules.

Tensors are torch tensors; the reverse-mode machinery is torch's.  This
module adds the graph-specific ops (gather/segment reductions, row
normalization), losses with explicit clamping, a parameter store with
Adam moments and an EMA shadow, and checkpoint I/O.
"""
from __future__ import annotations

import contextlib
import hashlib
import io
import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F

NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


# ops ------------------------------------------------------------------------

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as e:
        raise ShapeError(str(e)) from None
    return a + b


def concat(tensors: Iterable[torch.Tensor], dim: int = -1) -> torch.Tensor:
    return torch.cat(list(tensors), dim=dim)


def gather(values: torch.Tensor, index) -> torch.Tensor:
    """Node rows -> edge rows."""
    index = torch.as_tensor(index, dtype=torch.long)
    if index.numel() and int(index.max()) >= values.shape[0]:
        raise ShapeError("gather index out of range")
    return values.index_select(0, index)


def segment_sum(values: torch.Tensor, segment_ids, num_segments: int) -> torch.Tensor:
    """Edge rows -> node sums (empty segments give zero rows)."""
    segment_ids = torch.as_tensor(segment_ids, dtype=torch.long)
    if segment_ids.shape[0] != values.shape[0]:
        raise ShapeError("one segment id per row required")
    out = values.new_zeros((num_segments,) + tuple(values.shape[1:]))
    return out.index_add(0, segment_ids, values)


def segment_mean(values: torch.Tensor, segment_ids, num_segments: int) -> torch.Tensor:
    segment_ids = torch.as_tensor(segment_ids, dtype=torch.long)
    sums = segment_sum(values, segment_ids, num_segments)
    counts = torch.bincount(segment_ids, minlength=num_segments).clamp(min=1).to(values.dtype)
    return sums / counts.view(-1, *([1] * (values.dim() - 1)))


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def l2_normalize(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Scale every row to unit Euclidean norm; zero rows stay zero."""
    return x / (x.norm(dim=-1, keepdim=True) + eps)


def softmax(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)


def cross_entropy(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean categorical cross-entropy of ``(k, c)`` logits against class ids."""
    target = torch.as_tensor(target, dtype=torch.long)
    if target.shape[0] != logits.shape[0]:
        raise ShapeError("target length does not match logits")
    return F.cross_entropy(logits, target)


def binary_cross_entropy(prob: torch.Tensor, target, eps: float = 1e-7) -> torch.Tensor:
    target = torch.as_tensor(target, dtype=prob.dtype)
    p = prob.clamp(eps, 1 - eps)
    return -(target * torch.log(p) + (1 - target) * torch.log1p(-p)).mean()


def mse(pred: torch.Tensor, target) -> torch.Tensor:
    target = torch.as_tensor(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"mse shapes {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


# parameters -----------------------------------------------------------------

class ParamStore:
    """Named trainable tensors with Adam moments and an EMA shadow copy."""

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8):
        if isinstance(params, torch.nn.Module):
            params = params.named_parameters()
        self.params: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        for name, p in params:
            if name in self.params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.params[name] = p
        self.betas = betas
        self.eps = eps
        self.step = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.ema = {k: p.detach().clone() for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @contextlib.contextmanager
    def swap_ema(self):
        """Temporarily load the EMA weights into the live parameters."""
        saved = {k: p.detach().clone() for k, p in self.params.items()}
        with torch.no_grad():
            for k, p in self.params.items():
                p.copy_(self.ema[k])
        try:
            yield self
        finally:
            with torch.no_grad():
                for k, p in self.params.items():
                    p.copy_(saved[k])

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, p in self.params.items():
            out[f"param/{k}"] = p.detach().cpu().numpy()
            out[f"ema/{k}"] = self.ema[k].cpu().numpy()
            out[f"adam_m/{k}"] = self.m[k].cpu().numpy()
            out[f"adam_v/{k}"] = self.v[k].cpu().numpy()
        return out

    def load_arrays(self, arrays: dict, strict: bool = True) -> None:
        with torch.no_grad():
            for k, p in self.params.items():
                key = f"param/{k}"
                if key not in arrays:
                    if strict:
                        raise KeyError(f"checkpoint lacks {key}")
                    continue
                p.copy_(torch.as_tensor(arrays[key], dtype=p.dtype))
                for prefix, dst in (("ema", self.ema), ("adam_m", self.m), ("adam_v", self.v)):
                    if f"{prefix}/{k}" in arrays:
                        dst[k] = torch.as_tensor(arrays[f"{prefix}/{k}"], dtype=p.dtype).clone()


def adam_step(store: ParamStore, lr: float) -> ParamStore:
    """One bias-corrected Adam update; clears gradients afterwards."""
    b1, b2 = store.betas
    for name, p in store.params.items():
        if p.grad is None:
            raise RuntimeError(f"missing gradient for trainable parameter {name!r}")
    store.step += 1
    c1 = 1 - b1 ** store.step
    c2 = 1 - b2 ** store.step
    with torch.no_grad():
        for name, p in store.params.items():
            g = p.grad
            m, v = store.m[name], store.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + store.eps))
    store.zero_grad()
    return store


def ema_update(store: ParamStore, beta: float) -> ParamStore:
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    with torch.no_grad():
        for name, p in store.params.items():
            store.ema[name].mul_(beta).add_(p.detach(), alpha=1 - beta)
    return store


def lr_schedule(epoch: int, total_epochs: int, eta0: float, eta_min: float = 1e-5) -> float:
    """Cosine decay from ``eta0`` to ``eta_min`` over the first half, then flat."""
    if eta_min > eta0:
        raise ValueError("eta_min must not exceed eta0")
    half = total_epochs / 2
    if half <= 0 or epoch >= half:
        return eta_min
    return eta_min + (eta0 - eta_min) * (1 + math.cos(math.pi * epoch / half)) / 2


# checkpoints ----------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, store: ParamStore, config: dict, extra: Optional[dict] = None) -> None:
    """Write an ``.npz`` holding named arrays and a JSON metadata record."""
    meta = {
        "config": config,
        "config_hash": config_hash(config),
        "step": store.step,
        "extra": extra or {},
    }
    arrays = store.state_arrays()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(meta, arrays)`` after verifying the config hash."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} is not a checkpoint")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if config_hash(meta["config"]) != meta["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    return meta, arrays
