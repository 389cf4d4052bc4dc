"""Command-line entry point: ``otcalib <subcommand> ...``.

Every subcommand writes only under ``--out-dir`` and produces byte-identical
files for identical flags and inputs. Exit codes: 0 success, 1 invalid input
or flags, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from otcalib import checkpoint as ckpt
from otcalib.data import (apply_split, group_split, load_dataset, load_pools, load_split,
                          save_dataset, save_pools, save_split)
from otcalib.ias import (AllocationRequest, allocate_base, n_ias_closed_form,
                         posterior_allocation)
from otcalib.metrics import calibration_curve, evaluate_variant
from otcalib.picnn import PicnnConfig
from otcalib.plots import line_chart
from otcalib.quantile import DEFAULT_LEVELS, qr_train
from otcalib.simulator import SimConfig, sweep_beta, sweep_C, write_sweep
from otcalib.synthetic import SyntheticConfig, generate_dataset, generate_pools
from otcalib.trainer import TrainConfig, TrainingData, train, write_log

log = logging.getLogger("otcalib")

VARIANTS = ("base", "ot", "qr")
CURVE_SAMPLES = 5


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _levels(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty level list")
    return vals


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _load_model(variant: str, path):
    if variant == "base":
        return None
    if path is None:
        raise UsageError(f"--checkpoint is required for variant {variant!r}")
    model = ckpt.load_model(path)
    kind = "ot" if hasattr(model, "potential") else "qr"
    if kind != variant:
        raise UsageError(f"checkpoint holds a {kind} model, not {variant}")
    return model


def cmd_synth(args) -> None:
    out = _out_dir(args)
    config = SyntheticConfig(family=args.family, hidden_dim=args.hidden_dim,
                             n_questions=args.questions,
                             prefixes_per_question=args.prefixes, n_rollouts=args.rollouts,
                             prm_bias=args.prm_bias, prm_noise_sd=args.prm_noise_sd,
                             ranking_strength=args.alpha, seed=args.seed)
    ds, oracle = generate_dataset(config)
    n_pool = args.pool_questions if args.pool_questions is not None else args.questions
    pool_config = SyntheticConfig(**{**config.to_json(), "n_questions": n_pool})
    pools = generate_pools(pool_config, args.candidates, oracle)
    save_dataset(ds, out / "samples.jsonl")
    save_pools(pools, out / "pools.jsonl")
    _write_json(out / "oracle.json", oracle.to_json())
    _write_json(out / "synth_config.json", {**config.to_json(), "pool_questions": n_pool,
                                            "candidates": args.candidates})
    log.info("wrote %d samples and %d pools", len(ds), len(pools))


def cmd_split(args) -> None:
    out = _out_dir(args)
    ds = load_dataset(args.samples)
    split = group_split(ds, args.train_fraction, args.seed)
    save_split(split, out / "split.json")
    log.info("split %d train / %d test questions", len(split.train_questions),
             len(split.test_questions))


def _train_ot_configs(args) -> tuple[TrainConfig, dict]:
    doc = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
    train_doc = dict(doc.get("train", {}))
    picnn_doc = dict(doc.get("picnn", {}))
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(train_doc) - known
    if unknown:
        raise UsageError(f"unknown train config keys: {sorted(unknown)}")
    for name in known:
        value = getattr(args, name, None)
        if value is not None:
            train_doc[name] = value
    return TrainConfig(**train_doc), picnn_doc


def cmd_train_ot(args) -> None:
    out = _out_dir(args)
    ds = load_dataset(args.samples)
    tr, va = apply_split(ds, load_split(args.split))
    tconfig, picnn_doc = _train_ot_configs(args)
    picnn_doc["input_dim"] = ds.hidden_dim
    pconfig = PicnnConfig.from_json(picnn_doc)
    result = train(TrainingData.from_dataset(tr), TrainingData.from_dataset(va), pconfig,
                   tconfig)
    meta = {"source_mode": result.source_mode,
            "inference_potential": result.inference_potential,
            "source_table": result.source_table,
            "train_config": tconfig.to_json(),
            "best_area": result.best_area, "best_step": result.best_step}
    ckpt.save_checkpoint(out / "checkpoint_ot.json", result.f, result.g, meta)
    write_log(result.log, out / "train_log.csv")
    log.info("best validation area %.5f at step %d (%s)", result.best_area, result.best_step,
             result.inference_potential)


def cmd_train_qr(args) -> None:
    out = _out_dir(args)
    ds = load_dataset(args.samples)
    tr, _ = apply_split(ds, load_split(args.split))
    model = qr_train(tr.hidden, tr.p_emp, args.levels, lr=args.lr, steps=args.steps,
                     batch_size=args.batch_size, seed=args.seed)
    ckpt.save_qr(out / "checkpoint_qr.json", model,
                 {"lr": args.lr, "steps": args.steps, "batch_size": args.batch_size,
                  "seed": args.seed})


def _eval_samples(args):
    ds = load_dataset(args.samples)
    if args.split is None:
        return ds
    tr, te = apply_split(ds, load_split(args.split))
    return te if args.subset == "test" else tr


def cmd_evaluate(args) -> None:
    out = _out_dir(args)
    samples = _eval_samples(args)
    model = _load_model(args.variant, args.checkpoint)
    levels = tuple(model.levels) if args.variant == "qr" else DEFAULT_LEVELS
    report = evaluate_variant(args.variant, samples, model, levels=levels)
    report.write_csv(out / f"metrics_{args.variant}.csv")
    if model is None:
        return
    curve = calibration_curve(model, samples, levels)
    with open(out / f"calibration_curve_{args.variant}.csv", "w", encoding="utf-8") as fh:
        fh.write("beta,coverage\n")
        for b, c in zip(levels, curve):
            fh.write(f"{_fmt(b)},{_fmt(c)}\n")
    n = min(CURVE_SAMPLES, len(samples))
    q = model.quantiles(levels, samples.hidden[:n])
    with open(out / f"quantile_curves_{args.variant}.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,sample,question_id,beta,quantile\n")
        for i in range(n):
            qid = samples.samples[i].question_id
            for b, v in zip(levels, q[i]):
                fh.write(f"{args.variant},{i},{qid},{_fmt(b)},{_fmt(v)}\n")


def cmd_allocate(args) -> None:
    out = _out_dir(args)
    pools = load_pools(args.pools)
    model = _load_model(args.variant, args.checkpoint)
    req = AllocationRequest(args.confidence, args.n_max)
    if args.variant == "base":
        if args.beta is not None:
            raise UsageError("--beta needs a quantile model")
        results = [allocate_base(p.question_score, req) for p in pools]
    else:
        hidden = np.stack([p.question_hidden for p in pools])
        if args.beta is not None:
            p_hat = model.quantiles((args.beta,), hidden)[:, 0]
            results = [n_ias_closed_form(float(p), args.confidence, args.n_max) for p in p_hat]
        else:
            grid = tuple(model.levels) if args.variant == "qr" else DEFAULT_LEVELS
            p_hat = model.quantiles(grid, hidden)
            results = [posterior_allocation(row, args.confidence, args.n_max) for row in p_hat]
    with open(out / f"allocations_{args.variant}.csv", "w", encoding="utf-8") as fh:
        fh.write("question_id,n,saturated\n")
        for pool, res in zip(pools, results):
            fh.write(f"{pool.question_id},{res.n},{int(res.saturated)}\n")


def cmd_simulate(args) -> None:
    out = _out_dir(args)
    pools = load_pools(args.pools)
    model = _load_model(args.variant, args.checkpoint)
    if args.sweep == "beta" and model is None:
        raise UsageError("the beta sweep needs --variant ot or qr")
    config = SimConfig(n_trials=args.trials, n_max=args.n_max, seed=args.seed,
                       variant=args.variant, fixed_C_for_beta_sweep=args.confidence)
    if args.sweep == "c":
        points = sweep_C(pools, model, config)
    else:
        if args.variant == "qr":
            config.beta_levels = tuple(model.levels)
        points = sweep_beta(pools, model, config)
    write_sweep(points, args.variant, len(pools), config,
                out / f"sweep_{args.variant}_{args.sweep}.csv")


def _read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _md_table(rows: list[dict]) -> list[str]:
    cols = list(rows[0])
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        lines.append("| " + " | ".join(r[c] for c in cols) + " |")
    return lines


def cmd_report(args) -> None:
    src = Path(args.in_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"{src}: not a directory")
    out = Path(args.out_dir) if args.out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# Calibration report", ""]
    metrics = [row for p in sorted(src.glob("metrics_*.csv")) for row in _read_csv(p)]
    if metrics:
        lines += ["## Metrics", ""] + _md_table(metrics) + [""]
    sweeps = {p.stem[len("sweep_"):]: _read_csv(p) for p in sorted(src.glob("sweep_*.csv"))}
    for name, rows in sweeps.items():
        if rows:
            lines += [f"## Sweep {name}", ""] + _md_table(rows) + [""]
    if not metrics and not sweeps:
        raise UsageError(f"{src}: no metrics_*.csv or sweep_*.csv files")
    (out / "report.md").write_text("\n".join(lines), encoding="utf-8")
    if not args.svg:
        return
    if sweeps:
        series = {name: [(float(r["mean_norm_budget"]), float(r["mean_accuracy"]))
                         for r in rows] for name, rows in sweeps.items() if rows}
        (out / "accuracy_vs_budget.svg").write_text(
            line_chart(series, "Accuracy vs normalized budget", "mean normalized budget",
                       "mean accuracy"), encoding="utf-8")
    curves = {}
    for p in sorted(src.glob("quantile_curves_*.csv")):
        for r in _read_csv(p):
            key = f"{r['variant']} #{r['sample']}"
            curves.setdefault(key, []).append((float(r["beta"]), float(r["quantile"])))
    if curves:
        (out / "quantile_curves.svg").write_text(
            line_chart(curves, "Predicted quantile curves", "quantile level",
                       "success probability"), encoding="utf-8")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otcalib", description="Calibrate PRM scores with conditional OT and "
                                                        "allocate Best-of-N budgets.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset and candidate pools")
    p.add_argument("--family", choices=("uniform_band", "logit_normal"), required=True)
    p.add_argument("--questions", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--prefixes", type=int, default=4)
    p.add_argument("--rollouts", type=int, default=8)
    p.add_argument("--prm-bias", type=float, default=1.5)
    p.add_argument("--prm-noise-sd", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1.0, help="pool ranking strength")
    p.add_argument("--candidates", type=int, default=64)
    p.add_argument("--pool-questions", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="question-level train/test split")
    p.add_argument("--samples", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-ot", help="train the conditional OT quantile model")
    p.add_argument("--samples", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--config", default=None, help='JSON {"train": {...}, "picnn": {...}}')
    for name, typ in (("lr_f", float), ("lr_g", float), ("lr_decay_gamma", float),
                      ("lr_decay_every", int), ("f_update_every", int), ("batch_size", int),
                      ("max_steps", int), ("clip_max_norm", float), ("eval_every", int),
                      ("patience", int), ("min_delta", float), ("seed", int)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--source-mode", dest="source_mode", choices=("uniform", "score"))
    p.add_argument("--inference-potential", dest="inference_potential",
                   choices=("f", "g", "auto"))
    p.set_defaults(func=cmd_train_ot)

    p = sub.add_parser("train-qr", help="train the linear quantile-regression baseline")
    p.add_argument("--samples", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--levels", type=_levels, default=DEFAULT_LEVELS)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_qr)

    p = sub.add_parser("evaluate", help="calibration metrics for one score variant")
    p.add_argument("--samples", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--subset", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("allocate", help="per-question Best-of-N budgets")
    p.add_argument("--pools", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--confidence", type=float, required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--n-max", type=int, default=64)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("simulate", help="Monte Carlo Best-of-N sweep")
    p.add_argument("--pools", required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--sweep", choices=("c", "beta"), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n-max", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confidence", type=float, default=0.9,
                   help="fixed confidence for the beta sweep")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="markdown summary and optional SVG charts")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_report)

    for name, child in sub.choices.items():
        child.add_argument("--out-dir", required=name != "report", default=None)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"otcalib: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (ArithmeticError, RuntimeError) as exc:
        print(f"otcalib: failed: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"otcalib: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"otcalib: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
