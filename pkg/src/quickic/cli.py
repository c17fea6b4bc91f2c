"""Command-line entry point: ``quickic run|gen|report``.

Failures print one JSON object ``{"error": {"type": ..., "message": ...}}``
on stderr and exit nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen
from .errors import InvalidArgument
from .experiments import ExperimentConfig, run_experiment, summarize, write_outputs

DATASETS = ("regression-I", "regression-II", "regression-III", "fa", "spiral", "triangle", "two_gaussians", "mfa")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _error_record(exc: BaseException) -> str:
    return json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}})


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quickic", description="Quick-IC model selection studies")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("--threads", type=int)
    run.add_argument("--out", help="results directory")

    gen = sub.add_parser("gen", help="write a synthetic data set as CSV")
    gen.add_argument("dataset", choices=DATASETS)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="summarize a results directory")
    rep.add_argument("results_dir")
    return p


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    data = cfg.to_dict()
    for key, val in (("trials", args.trials), ("base_seed", args.seed), ("threads", args.threads), ("out", args.out)):
        if val is not None:
            data[key] = val
    cfg = ExperimentConfig.from_dict(data)
    out = Path(cfg.out or f"results/{cfg.experiment}")
    result = run_experiment(cfg)
    write_outputs(result, out)
    print(summarize(out))
    return 0


def _cmd_gen(args) -> int:
    name, n, seed = args.dataset, args.n, args.seed
    if name.startswith("regression-"):
        data, theta = datagen.gen_regression(name.split("-", 1)[1], n, seed)
        table = np.column_stack([data.X, data.y])
        header = [f"x{j + 1}" for j in range(data.p)] + ["y"]
    elif name == "fa":
        table, header = datagen.gen_fa(n, seed), None
    elif name == "spiral":
        table, header = datagen.gen_spiral(n, seed=seed), None
    elif name == "triangle":
        X, lab = datagen.gen_triangle(n, seed, return_labels=True)
        table, header = np.column_stack([X, lab]), ["x1", "x2", "label"]
    elif name == "two_gaussians":
        X, lab = datagen.gen_two_gaussians(n, seed=seed, return_labels=True)
        table, header = np.column_stack([X, lab]), ["x1", "label"]
    else:
        X, truth = datagen.gen_mfa(n, 2, [2, 1], seed=seed, return_truth=True)
        table = np.column_stack([X, truth.labels])
        header = [f"x{j + 1}" for j in range(X.shape[1])] + ["label"]
    path = datagen.write_csv(args.out, table, header)
    print(json.dumps({"dataset": name, "n": n, "seed": seed, "path": str(path)}))
    return 0


def _cmd_report(args) -> int:
    out = Path(args.results_dir)
    if not (out / "manifest.json").exists():
        raise InvalidArgument(f"{out} has no manifest.json")
    print(summarize(out))
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        handler = {"run": _cmd_run, "gen": _cmd_gen, "report": _cmd_report}[args.command]
        return handler(args)
    except _UsageError as exc:
        print(_error_record(exc), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a record
        print(_error_record(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
