"""Command-line entry point: ``satgnn <subcommand> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cnf import DimacsError, read_dimacs
from .diffusion import (DenoiserConfig, DiffusionRun, build_schedule, diffusion_solve_batch,
                        train_denoiser, up_call_report, up_guided_solve)
from .generators import (SR, THREE_SAT, DatasetSpec, LabeledInstance, build_dataset,
                         dataset_stats, instance_seed, load_dataset, spec_to_dict)
from .inference import evaluate, summarize, InstanceRecord, sweep, write_records_csv
from .model import ModelConfig
from .sdp import random_max2sat, sdp_solve
from .training import TrainConfig, load_model, save_model, train, write_log_csv

logger = logging.getLogger("satgnn")


class CliError(Exception):
    pass


# config handling ------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise CliError(f"{path}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {v!r}")


def _int_list(s) -> list[int]:
    return [int(x) for x in str(s).split(",") if x.strip()]


def _float_list(s) -> list[float]:
    return [float(x) for x in str(s).split(",") if x.strip()]


def apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    """Install config values as defaults so explicit flags still win."""
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, value in config.items():
        if key not in actions:
            raise CliError(f"unknown config key {key!r}")
        act = actions[key]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(value)
        elif act.type is not None:
            try:
                defaults[key] = act.type(value)
            except (TypeError, ValueError) as e:
                raise CliError(f"config key {key}: {e}") from None
        else:
            defaults[key] = value
    parser.set_defaults(**defaults)


# output helpers ---------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, (np.floating, np.integer)):
        return _jsonable(v.item())
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def print_table(rows: list[tuple[str, object]], out=None) -> None:
    out = out or sys.stdout
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        if isinstance(v, float):
            v = "-" if math.isnan(v) else f"{v:.4f}"
        print(f"{k:<{width}}  {v}", file=out)


def _pct(v: float) -> str:
    return "-" if v is None or math.isnan(v) else f"{100 * v:.1f}%"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def load_instances(path, sat_only: bool = False) -> list[LabeledInstance]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file or directory: {p}")
    if p.suffix == ".cnf":
        f = read_dimacs(p)
        from .solvers import dpll_solve
        res = dpll_solve(f)
        data = [LabeledInstance(f, res.sat, res.assignment, p.stem)]
    else:
        data = load_dataset(p, sat_only=sat_only)
    if sat_only:
        data = [d for d in data if d.sat]
    if not data:
        raise CliError(f"dataset {p} is empty")
    return data


# subcommands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = DatasetSpec(args.family, (args.n_min, args.n_max), args.count, args.sat_only,
                       args.ratio, args.seed)
    out = _out_dir(args)
    rows = build_dataset(spec, out)
    summary = {"config": _run_config(args), "spec": spec_to_dict(spec), "instances": len(rows),
               "sat": sum(r["sat"] for r in rows)}
    write_json(out / "summary.json", summary)
    print_table([("instances", len(rows)), ("satisfiable", summary["sat"]), ("output", str(out))])
    return 0


def cmd_stats(args) -> int:
    data = load_instances(args.data)
    s = dataset_stats(data, samples=args.samples, seed=args.seed)
    if args.out:
        out = _out_dir(args)
        write_json(out / "stats.json", {"config": _run_config(args), **s})
    print_table([("Instances", s["instances"]), ("SAT%", f"{s['sat_pct']:.1f}"),
                 ("Avg. Gap", s["avg_gap"]), ("SAT Gap", s["sat_gap"]),
                 ("UNSAT Gap", s["unsat_gap"]), ("Avg. Clauses", s["avg_clauses"])])
    return 0


def _model_config(args) -> ModelConfig:
    return ModelConfig(graph_kind=args.graph, cell=args.cell, d_model=args.d_model,
                       mlp_hidden=(args.d_model,), t_train=args.t_train,
                       lcg_message_mlp=args.lcg_message_mlp)


def cmd_train(args) -> int:
    data = load_instances(args.data, args.sat_only)
    val = load_instances(args.val) if args.val else None
    cfg = TrainConfig(dataset=str(args.data), val_dataset=args.val, loss=args.loss,
                      assignment_loss=args.assignment_loss, sat_only=args.sat_only,
                      curriculum=args.curriculum, epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, lr_min=args.lr_min, ema_beta=args.ema_beta,
                      val_iters=args.val_iters, seed=args.seed, model=_model_config(args))
    out = _out_dir(args)
    res = train(cfg, data, val, out_dir=out)
    write_json(out / "summary.json", {"config": _run_config(args), "best_epoch": res.best_epoch,
                                      "best_metric": res.best_metric, "epochs_run": len(res.log)})
    print_table([("epochs", len(res.log)), ("best epoch", res.best_epoch),
                 ("best val metric", res.best_metric), ("checkpoint", str(out / "model.npz"))])
    return 0


def _load(path):
    if not Path(path).exists():
        raise CliError(f"no such checkpoint: {path}")
    return load_model(path)


def _solve_rows(m: dict) -> list:
    return [
        ("Decision Accuracy", _pct(m["decision_acc"])),
        ("SAT Instances Solved", _pct(m["sat_acc"])),
        ("UNSAT Instances (gap == 1)", _pct(m["unsat_gap1"])),
        ("SAT Steps (Avg/Med)", f"{m['sat_steps_avg']:.2f}/{m['sat_steps_med']:.1f}"),
        ("UNSAT Steps (Avg/Med)", f"{m['unsat_steps_avg']:.2f}/{m['unsat_steps_med']:.1f}"),
    ]


def _eval_rows(m: dict) -> list:
    return [
        ("Average Gap", m["avg_gap"]), ("Gap on SAT", m["sat_gap"]), ("Gap on UNSAT", m["unsat_gap"]),
        ("SAT Accuracy", _pct(m["sat_acc"])), ("Decision Accuracy", _pct(m["decision_acc"])),
    ]


def _classifier_accuracy(model, data, t_steps, seed) -> float:
    import torch
    correct = []
    with torch.no_grad():
        for lo in range(0, len(data), 64):
            chunk = data[lo:lo + 64]
            tg = model.graph([d.formula for d in chunk])
            seeds = [instance_seed(seed, lo + j) for j in range(len(chunk))]
            _, _, st = model(tg, t_steps, seeds=seeds)
            pred = (model.sat_logit(tg, st) > 0).numpy()
            correct += list(pred == np.array([d.sat for d in chunk]))
    return float(np.mean(correct))


def _evaluate_cmd(args, table_rows) -> int:
    model, meta = _load(args.model)
    data = load_instances(args.data)
    summ = evaluate(data, model, args.max_iters, args.samples, args.seed)
    metrics = dict(summ.metrics)
    metrics["decision_mode"] = "assignment"
    train_cfg = meta["config"].get("train", {})
    if train_cfg.get("loss") == "sat":
        metrics["classifier_decision_acc"] = _classifier_accuracy(
            model, data, model.config.t_train, args.seed)
    out = _out_dir(args)
    write_records_csv(summ.records, out / "records.csv")
    write_json(out / "summary.json", {"config": _run_config(args), "metrics": metrics})
    rows = table_rows(metrics)
    if "classifier_decision_acc" in metrics:
        rows.append(("Decision Accuracy (classifier)", _pct(metrics["classifier_decision_acc"])))
    print_table(rows)
    return 0


def cmd_solve(args) -> int:
    if not args.early_stop:
        logger.info("early stopping is always on; --no-early-stop only affects logging")
    return _evaluate_cmd(args, _solve_rows)


def cmd_eval(args) -> int:
    return _evaluate_cmd(args, _eval_rows)


def cmd_sweep(args) -> int:
    model, _ = _load(args.model)
    data = load_instances(args.data)
    grid = sweep(data, model, _int_list(args.iters), _int_list(args.samples), seed=args.seed)
    out = _out_dir(args)
    grid.write_csv(out / "grid.csv")
    write_json(out / "summary.json", {"config": _run_config(args), "cells": grid.rows()})
    for row in grid.rows():
        print(f"iters={row['iters']:<4d} samples={row['samples']:<2d} "
              f"gap={row['avg_gap']:.3f} sat_acc={_pct(row['sat_acc'])} dec_acc={_pct(row['decision_acc'])}")
    return 0


def cmd_diffuse(args) -> int:
    out = _out_dir(args)
    if args.train_data:
        train_set = load_instances(args.train_data, sat_only=True)
        cfg = DenoiserConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                             T=args.T, beta_min=args.beta_min, beta_max=args.beta_max,
                             seed=args.seed, model=_model_config(args))
        res = train_denoiser(train_set, cfg)
        ckpt = out / "denoiser.npz"
        save_model(res.model, ckpt, extra={"kind": "denoiser"})
        _attach_schedule(ckpt, args)
        write_log_csv(res.log, out / "metrics.csv")
        model, schedule = res.model, res.schedule
        print_table([("denoiser epochs", len(res.log)), ("checkpoint", str(ckpt))])
    elif args.model:
        model, meta = _load(args.model)
        sched = meta["config"].get("diffusion", {"T": args.T, "beta_min": args.beta_min,
                                                 "beta_max": args.beta_max})
        schedule = build_schedule(sched["T"], sched["beta_min"], sched["beta_max"])
    else:
        raise CliError("diffuse needs --model or --train-data")
    if not args.data:
        return 0
    data = load_instances(args.data)
    run = DiffusionRun(gnn_steps=args.gnn_steps, steps=args.steps,
                       thresholds=tuple(_float_list(args.thresholds)), mode=args.mode,
                       max_calls=args.max_calls)
    seeds = [instance_seed(args.seed, i) for i in range(len(data))]
    plain = []
    for lo in range(0, len(data), 64):
        plain += diffusion_solve_batch([d.formula for d in data[lo:lo + 64]], model, schedule,
                                       run, seeds[lo:lo + 64])
    recs = [InstanceRecord(d.id, d.formula.num_vars, d.formula.num_clauses, d.sat, r.best_gap,
                           r.found, r.steps_used, 0) for d, r in zip(data, plain)]
    metrics = {"diffusion": summarize(recs)}
    rows = [("Dec. Acc.", _pct(metrics["diffusion"]["decision_acc"]))]
    if args.up:
        ups = [up_guided_solve(d.formula, model, schedule, run, s) for d, s in zip(data, seeds)]
        up_recs = [InstanceRecord(d.id, d.formula.num_vars, d.formula.num_clauses, d.sat,
                                  u.result.best_gap, u.result.found, u.calls, 0)
                   for d, u in zip(data, ups)]
        metrics["up"] = summarize(up_recs)
        calls = up_call_report(data, ups)
        metrics["up_calls"] = calls
        write_records_csv(up_recs, out / "up_records.csv")
        rows += [("U.P. Acc.", _pct(metrics["up"]["decision_acc"])),
                 ("Total Rec. Calls", calls["total_calls"]),
                 ("Solved Rec. Calls", calls["solved_calls"]),
                 ("Unsolved Rec. Calls", calls["unsolved_calls"])]
    write_records_csv(recs, out / "records.csv")
    write_json(out / "summary.json", {"config": _run_config(args), "metrics": metrics})
    print_table(rows)
    return 0


def _attach_schedule(ckpt: Path, args) -> None:
    # rewrite the checkpoint with the schedule folded into the hashed config
    meta, arrays = ad.read_checkpoint(ckpt)
    config = dict(meta["config"])
    config["diffusion"] = {"T": args.T, "beta_min": args.beta_min, "beta_max": args.beta_max}
    meta["config"] = config
    meta["config_hash"] = ad.config_hash(config)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    import io
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    ckpt.write_bytes(buf.getvalue())


def cmd_sdp(args) -> int:
    if args.data:
        formulas = [(d.id, d.formula) for d in load_instances(args.data)]
    else:
        rng = np.random.default_rng(args.seed)
        formulas = []
        for i in range(args.random):
            n = int(rng.integers(args.n_min, args.n_max + 1))
            formulas.append((f"max2sat-{i:04d}", random_max2sat(n, args.clause_factor * n, rng)))
    if not formulas:
        raise CliError("no formulas to solve")
    out = _out_dir(args)
    rows = []
    for i, (name, f) in enumerate(formulas):
        try:
            r = sdp_solve(f, iters=args.iters, k=args.k, seed=instance_seed(args.seed, i))
        except ValueError as e:
            raise CliError(f"{name}: {e}") from None
        rows.append((name, f.num_vars, f.num_clauses, r.relaxation, r.rounded, r.optimum, r.ratio))
    with open(out / "sdp.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "n", "m", "relaxation", "rounded", "optimum", "ratio"])
        for name, n, m, rel, rd, opt, ratio in rows:
            w.writerow([name, n, m, f"{rel:.6f}", rd, opt, f"{ratio:.6f}"])
    mean_ratio = float(np.mean([r[-1] for r in rows]))
    write_json(out / "summary.json", {"config": _run_config(args), "instances": len(rows),
                                      "mean_ratio": mean_ratio})
    print_table([("instances", len(rows)), ("mean rounded/optimum", mean_ratio)])
    return 0


# parser ---------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--graph", choices=["VCG", "LCG"], default="VCG")
    p.add_argument("--cell", choices=["RNN", "LSTM"], default="RNN")
    p.add_argument("--d-model", dest="d_model", type=int, default=64)
    p.add_argument("--t-train", dest="t_train", type=int, default=25)
    p.add_argument("--lcg-message-mlp", dest="lcg_message_mlp", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satgnn", description="Neural SAT/MaxSAT toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "generate a labelled dataset")
    p.add_argument("--family", choices=[SR, THREE_SAT], default=SR)
    p.add_argument("--n-min", dest="n_min", type=int, default=3)
    p.add_argument("--n-max", dest="n_max", type=int, default=40)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--sat-only", dest="sat_only", action="store_true")
    p.add_argument("--ratio", type=float, default=4.26)
    p.add_argument("--out", required=True)

    p = add("stats", cmd_stats, "benchmark statistics of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out")

    p = add("train", cmd_train, "train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--loss", choices=["sat", "assignment", "unsupervised", "closest"],
                   default="assignment")
    p.add_argument("--assignment-loss", dest="assignment_loss", choices=["CE", "MSE"], default="CE")
    p.add_argument("--sat-only", dest="sat_only", action="store_true")
    p.add_argument("--curriculum", dest="curriculum", action="store_true", default=None)
    p.add_argument("--no-curriculum", dest="curriculum", action="store_false")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--lr-min", dest="lr_min", type=float, default=1e-5)
    p.add_argument("--ema-beta", dest="ema_beta", type=float, default=0.999)
    p.add_argument("--val-iters", dest="val_iters", type=int, default=25)
    p.add_argument("--out", required=True)
    _add_model_flags(p)

    for name, func, text in (("solve", cmd_solve, "solve with early stopping (step report)"),
                             ("eval", cmd_eval, "evaluate gap and accuracy metrics")):
        p = add(name, func, text)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--max-iters", dest="max_iters", type=int, default=100)
        p.add_argument("--samples", type=int, default=1)
        p.add_argument("--early-stop", dest="early_stop", action="store_true", default=True)
        p.add_argument("--no-early-stop", dest="early_stop", action="store_false")
        p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "iterations x resampling grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", default="25,50,75,100,125")
    p.add_argument("--samples", default="1,2,3,4,5")
    p.add_argument("--out", required=True)

    p = add("diffuse", cmd_diffuse, "train or run the diffusion sampler")
    p.add_argument("--model")
    p.add_argument("--train-data", dest="train_data")
    p.add_argument("--data")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--T", dest="T", type=int, default=50)
    p.add_argument("--beta-min", dest="beta_min", type=float, default=0.02)
    p.add_argument("--beta-max", dest="beta_max", type=float, default=0.35)
    p.add_argument("--gnn-steps", dest="gnn_steps", type=int, default=25)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--mode", choices=["sample", "argmax", "round"], default="sample")
    p.add_argument("--thresholds", default="0.6,0.75,0.9")
    p.add_argument("--max-calls", dest="max_calls", type=int, default=200)
    p.add_argument("--up", action="store_true", help="also run unit-propagation guided search")
    p.add_argument("--out", required=True)
    _add_model_flags(p)

    p = add("sdp", cmd_sdp, "MAX-2-SAT vector relaxation baseline")
    p.add_argument("--data")
    p.add_argument("--random", type=int, default=50)
    p.add_argument("--n-min", dest="n_min", type=int, default=3)
    p.add_argument("--n-max", dest="n_max", type=int, default=12)
    p.add_argument("--clause-factor", dest="clause_factor", type=int, default=3)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        apply_config(sub, read_config(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logger.info("resolved config: %s", json.dumps(_jsonable(_run_config(args)), sort_keys=True))
    try:
        return args.func(args)
    except (CliError, DimacsError, ad.CheckpointError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
