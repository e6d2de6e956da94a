"""Command line: ``generate``, ``train``, ``evaluate``, ``experiment``, ``report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..datasets import generate_biased, load_csv, write_csv
from ..diffmodel import ModelParams
from ..dro import METHODS, evaluate, train
from .config import ExperimentSpec, parse_config
from .report import FORMATS, emit_report, rows_from_csv, rows_from_json, summary_markdown, write_experiment
from .runner import run_experiment, summarize, train_data

log = logging.getLogger("qdiversity")


def save_params(theta: ModelParams, path) -> None:
    arrays = {}
    for k, (W, b) in enumerate(theta.layers):
        arrays[f"W{k}"], arrays[f"b{k}"] = W, b
    np.savez(path, arch=np.array(theta.arch), **arrays)


def load_params(path) -> ModelParams:
    with np.load(path) as z:
        k, layers = 0, []
        while f"W{k}" in z:
            layers.append((z[f"W{k}"], z[f"b{k}"]))
            k += 1
        return ModelParams(tuple(layers), str(z["arch"]))


def _spec(args) -> ExperimentSpec:
    return parse_config(args.config) if args.config else ExperimentSpec(tag="table1")


def cmd_generate(args) -> int:
    spec = _spec(args)
    data = generate_biased(replace(spec.generator, seed=spec.generator.seed + args.seed))
    write_csv(data, args.out)
    log.info("wrote %d rows to %s", data.n, args.out)
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    data = load_csv(args.data) if args.data else train_data(spec.generator, args.seed)
    method = args.method or spec.train.method
    result = train(data, replace(spec.train, method=method, seed=args.seed))
    save_params(result.theta, args.out)
    for e in result.events:
        log.info("%s", e)
    last = result.history[-1]
    print(f"{method}: train avg {last.avg_acc:.4f} robust {last.robust_acc:.4f} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    theta = load_params(args.model)
    avg, robust, per = evaluate(theta, load_csv(args.data))
    out = {"avg": avg, "robust": robust, "groups": [None if np.isnan(g) else float(g) for g in per]}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_experiment(args) -> int:
    spec = _spec(args)
    if args.method:
        spec = replace(spec, methods=tuple(args.method.split(",")))
    out = args.out or spec.out
    result = run_experiment(spec)
    write_experiment(result, out)
    print(summary_markdown(result.summary), end="")
    failed = [r for r in result.rows if not r.ok]
    for r in failed:
        print(f"FAILED {r.method} seed {r.seed}: {r.error}", file=sys.stderr)
    return 0 if not failed else 1


def cmd_report(args) -> int:
    text = Path(args.rows).read_text(encoding="utf-8")
    rows = rows_from_json(text) if args.rows.endswith(".json") else rows_from_csv(text)
    emit_report(rows, args.format, args.out)
    print(summary_markdown(summarize(rows)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdiversity", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    common(g)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train one model and save its parameters (.npz)")
    common(t)
    t.add_argument("--method", choices=METHODS)
    t.add_argument("--data", help="training CSV; generated from the config when omitted")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("evaluate", help="average and robust accuracy of a saved model")
    common(e, out_required=False)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a full experiment from a config")
    common(x, out_required=False)
    x.add_argument("--method", help="comma-separated methods overriding the config")
    x.set_defaults(fn=cmd_experiment)

    r = sub.add_parser("report", help="re-emit saved rows as csv, json or markdown")
    r.add_argument("--rows", required=True, help="rows.csv or report.json")
    r.add_argument("--format", choices=FORMATS, default="markdown")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
