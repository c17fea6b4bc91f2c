"""Config-driven Monte-Carlo studies: regression tables, FA histograms, GMM and MFA runs.

Every trial draws its data from a seed derived from ``(base_seed, experiment,
trial)``, and all methods of a trial see the same data, so comparisons are
paired. Trials may run in a process pool; results are always collected in
trial order, so output files do not depend on scheduling.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ICSpec, is_nonincreasing, trace_segments
from .datagen import gen_fa, gen_mfa, gen_regression, gen_spiral, gen_triangle, gen_two_gaussians
from .errors import InvalidArgument, QuickICError
from .fa import fa_cv_select, fa_ic_select, quick_bic_fa
from .gmm import quick_mml_gmm
from .linreg import alasso_path, alasso_plus_ic, exhaustive_ic_regression, ols_full_fit, quick_ic_regression
from .mfa import quick_mml_mfa

EXPERIMENTS = ("table1", "fa_histogram", "gmm", "mfa")

METHODS = {
    "table1": ("quick_bic", "bic", "alasso_bic"),
    "fa_histogram": ("quick_bic", "bic", "aic", "cv"),
    "gmm": ("quick_mml",),
    "mfa": ("quick_mml",),
}

DEFAULT_PARAMS = {
    "table1": {
        "cases": [["I", 100], ["I", 300], ["II", 100], ["II", 300], ["III", 100], ["III", 300]],
        "bic_window": [4, 8],
        "quick_refresh": True,
    },
    "fa_histogram": {
        "n_values": [40, 100],
        "d": 10,
        "k": 5,
        "k_range": [3, 7],
        "k_init": 8,
        "folds": 5,
        "heywood": "clamp",
    },
    "gmm": {
        "datasets": {
            "spiral": {"n": 900, "m_max": 30, "noise_sd": 1.0},
            "triangle": {"n": 600, "m_max": 20},
        },
        "epsilon": 1e-3,
        "pi_step": "mm",
        "keep_traces": True,
    },
    "mfa": {
        "datasets": {
            "spiral": {"n": 900, "m_init": 30, "k_init": 3, "noise_sd": 1.0},
            "mfa": {"n": 3000, "m": 2, "k": [2, 1], "separation": 10.0, "m_init": 6, "k_init": 3},
        },
        "epsilon": 1e-3,
    },
}

# Table 1 difference columns and their buckets
TABLE1_COMPARISONS = (
    ("bic-quick_bic", "bic", "quick_bic", ("-2", "-1", "0", "1", "2")),
    ("bic-alasso_bic", "bic", "alasso_bic", ("<", "-1", "0", "1", ">")),
    ("quick_bic-alasso_bic", "quick_bic", "alasso_bic", ("<", "-1", "0", "1", ">")),
)


def _merge(base: dict, over: dict) -> dict:
    """Defaults with top-level keys replaced (a given ``datasets`` replaces the whole default set)."""
    out = copy.deepcopy(base)
    out.update(copy.deepcopy(over))
    return out


@dataclass
class ExperimentConfig:
    """One study: which experiment, how many trials, the seed, methods and parameters.

    ``params`` overrides the experiment's defaults key by key at construction,
    so a config always carries its complete parameter set.
    """

    experiment: str
    trials: int = 100
    base_seed: int = 0
    methods: list | None = None
    params: dict = field(default_factory=dict)
    out: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidArgument(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if int(self.trials) < 1:
            raise InvalidArgument("trials must be >= 1")
        if int(self.threads) < 1:
            raise InvalidArgument("threads must be >= 1")
        self.trials = int(self.trials)
        self.threads = int(self.threads)
        self.base_seed = int(self.base_seed) & 0xFFFFFFFFFFFFFFFF
        known = METHODS[self.experiment]
        self.methods = list(known) if self.methods is None else list(self.methods)
        bad = [m for m in self.methods if m not in known]
        if bad or not self.methods:
            raise InvalidArgument(f"methods {bad or '[]'} not available for {self.experiment}; known: {known}")
        self.params = _merge(DEFAULT_PARAMS[self.experiment], dict(self.params))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        allowed = set(cls.__dataclass_fields__)
        extra = set(data) - allowed
        if extra:
            raise InvalidArgument(f"unknown config fields {sorted(extra)}")
        if "experiment" not in data:
            raise InvalidArgument("config needs an 'experiment' field")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidArgument("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class TrialReport:
    trial: int
    seed: int
    dataset: str
    method: str
    size: int | None
    structure: str
    objective: float | None
    duration: float
    converged: bool
    ok: bool = True
    error: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    FIELDS = (
        "trial", "seed", "dataset", "method", "size", "structure",
        "objective", "duration", "converged", "ok", "error",
    )  # fmt: skip

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def trial_seed(base_seed: int, experiment: str, trial: int) -> int:
    """64-bit seed from ``(base_seed, experiment, trial)`` via BLAKE2b."""
    msg = f"{int(base_seed)}:{experiment}:{int(trial)}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _report(trial, seed, dataset, method, fn):
    """Run one method; any library or numeric error becomes a failed record."""
    try:
        out, dt = _timed(fn)
    except (QuickICError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return TrialReport(trial, seed, dataset, method, None, "", None, 0.0, False, False, f"{type(exc).__name__}: {exc}")
    size, structure, objective, converged = out[:4]
    extra = out[4] if len(out) > 4 else {}
    return TrialReport(trial, seed, dataset, method, size, json.dumps(structure), objective, dt, bool(converged), extra=extra)


def _table1_trial(cfg: ExperimentConfig, trial: int) -> list:
    p = cfg.params
    seed = trial_seed(cfg.base_seed, cfg.experiment, trial)
    lo, hi = p["bic_window"]
    spec = ICSpec.bic()
    out = []
    for case, n in p["cases"]:
        data, _ = gen_regression(case, int(n), seed)
        tag = f"{case}/{n}"
        fit = ols_full_fit(data)
        runs = {
            "quick_bic": lambda: quick_ic_regression(data, spec, fit=fit, refresh=bool(p["quick_refresh"])),
            "bic": lambda: exhaustive_ic_regression(data, spec, lo, hi, fit=fit),
            "alasso_bic": lambda: alasso_plus_ic(alasso_path(data, fit=fit), data, spec),
        }
        for method in cfg.methods:
            def run(f=runs[method]):
                r = f()
                return r.size, list(r.support), r.objective, r.converged

            out.append(_report(trial, seed, tag, method, run))
    return out


def _fa_trial(cfg: ExperimentConfig, trial: int) -> list:
    p = cfg.params
    seed = trial_seed(cfg.base_seed, cfg.experiment, trial)
    k_lo, k_hi = p["k_range"]
    hw = p["heywood"]
    out = []
    for n in p["n_values"]:
        X = gen_fa(int(n), seed, d=int(p["d"]), k=int(p["k"]))
        X = X - X.mean(axis=0)
        tag = f"n={n}"

        def quick():
            model, res = quick_bic_fa(X, int(p["k_init"]), seed=seed, heywood=hw)
            return model.k, {"k": model.k}, res.objective, res.converged

        def ic(spec):
            def run():
                k, model, scores = fa_ic_select(X, k_lo, k_hi, spec, seed=seed, heywood=hw)
                return k, {"k": k}, scores[k], model.converged

            return run

        def cv():
            k, scores = fa_cv_select(X, k_lo, k_hi, int(p["folds"]), seed=seed, heywood=hw)
            return k, {"k": k}, -scores[k], True

        runs = {"quick_bic": quick, "bic": ic(ICSpec.bic()), "aic": ic(ICSpec.aic()), "cv": cv}
        for method in cfg.methods:
            out.append(_report(trial, seed, tag, method, runs[method]))
    return out


def _gmm_data(name: str, spec: dict, seed: int):
    if name == "spiral":
        return gen_spiral(int(spec.get("n", 900)), float(spec.get("noise_sd", 1.0)), seed)
    if name == "triangle":
        return gen_triangle(int(spec.get("n", 600)), seed)
    if name == "two_gaussians":
        return gen_two_gaussians(int(spec.get("n", 400)), float(spec.get("separation", 20.0)), seed)
    if name == "mfa":
        k = spec.get("k", [2, 1])
        return gen_mfa(int(spec.get("n", 3000)), int(spec.get("m", len(k))), k, float(spec.get("separation", 10.0)), seed)
    raise InvalidArgument(f"unknown dataset {name!r}")


def _gmm_trial(cfg: ExperimentConfig, trial: int) -> list:
    p = cfg.params
    seed = trial_seed(cfg.base_seed, cfg.experiment, trial)
    out = []
    for name, spec in p["datasets"].items():
        X = _gmm_data(name, spec, seed)

        def run():
            _, res = quick_mml_gmm(X, int(spec["m_max"]), float(p["epsilon"]), seed, pi_step=p["pi_step"])
            mono = all(is_nonincreasing(s, rtol=1e-6) for s in trace_segments(res))
            structure = {"m": res.info["m"], "mml_length": res.info["mml_length"], "monotone": mono}
            extra = {}
            if p.get("keep_traces"):
                extra = {"trace": [v for _, v in res.trace], "events": sorted({i for i, _ in res.events})}
            return res.info["m"], structure, res.objective, res.converged, extra

        out.append(_report(trial, seed, name, "quick_mml", run))
    return out


def _mfa_trial(cfg: ExperimentConfig, trial: int) -> list:
    p = cfg.params
    seed = trial_seed(cfg.base_seed, cfg.experiment, trial)
    out = []
    for name, spec in p["datasets"].items():
        X = _gmm_data(name, spec, seed)

        def run():
            _, res = quick_mml_mfa(X, int(spec["m_init"]), int(spec["k_init"]), seed, epsilon=float(p["epsilon"]))
            mono = all(is_nonincreasing(s, rtol=1e-6) for s in trace_segments(res))
            structure = {"m": res.info["m"], "k": sorted(res.info["k"]), "mml_length": res.info["mml_length"], "monotone": mono}
            return res.info["m"], structure, res.objective, res.converged

        out.append(_report(trial, seed, name, "quick_mml", run))
    return out


_TRIAL_FN = {"table1": _table1_trial, "fa_histogram": _fa_trial, "gmm": _gmm_trial, "mfa": _mfa_trial}


def _run_one(args):
    cfg_dict, trial = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return _TRIAL_FN[cfg.experiment](cfg, trial)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list
    tables: dict
    manifest: dict

    def ok_reports(self, dataset=None, method=None) -> list:
        return [
            r for r in self.reports
            if r.ok and (dataset is None or r.dataset == dataset) and (method is None or r.method == method)
        ]  # fmt: skip


def run_trials(cfg: ExperimentConfig) -> list:
    """All TrialReports of a config, in trial order."""
    jobs = [(cfg.to_dict(), t) for t in range(cfg.trials)]
    if cfg.threads == 1:
        batches = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            batches = list(pool.map(_run_one, jobs))
    return [r for batch in batches for r in batch]


def _bucket(diff: int, labels) -> str:
    if labels[0] == "<":
        if diff < -1:
            return "<"
        if diff > 1:
            return ">"
        return str(diff)
    return str(max(-2, min(2, diff)))


def table1_frequencies(reports: list) -> list:
    """Rows ``(dataset, comparison, bucket, count)`` of the paired difference table.

    A trial enters a comparison only if both methods succeeded on it. In the
    -2..2 buckets the end labels collect everything beyond them.
    """
    by = {}
    for r in reports:
        if r.ok:
            by[(r.dataset, r.trial, r.method)] = r.size
    datasets = list(dict.fromkeys(r.dataset for r in reports))
    rows = []
    for ds in datasets:
        trials = sorted({t for (d, t, _) in by if d == ds})
        for name, a, b, labels in TABLE1_COMPARISONS:
            cnt = Counter()
            for t in trials:
                if (ds, t, a) in by and (ds, t, b) in by:
                    cnt[_bucket(by[(ds, t, a)] - by[(ds, t, b)], labels)] += 1
            if not cnt and not any((ds, t, a) in by for t in trials):
                continue
            rows.extend([ds, name, lab, cnt.get(lab, 0)] for lab in labels)
    return rows


def histogram_rows(reports: list) -> list:
    """Rows ``(dataset, method, value, count)`` over the selected sizes."""
    cnt = Counter((r.dataset, r.method, r.size) for r in reports if r.ok)
    return [[d, m, v, c] for (d, m, v), c in sorted(cnt.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2]))]


def _timing_summary(reports: list) -> dict:
    out = {}
    for key in sorted({(r.dataset, r.method) for r in reports}):
        rs = [r for r in reports if (r.dataset, r.method) == key]
        ok = [r.duration for r in rs if r.ok]
        out[f"{key[0]}|{key[1]}"] = {
            "trials": len(rs),
            "failed": len(rs) - len(ok),
            "median_seconds": float(np.median(ok)) if ok else None,
            "mean_seconds": float(np.mean(ok)) if ok else None,
        }
    return out


def _aggregate(cfg: ExperimentConfig, reports: list, wall: float) -> ExperimentResult:
    tables = {"trials": [list(TrialReport.FIELDS)] + [r.row() for r in reports]}
    if cfg.experiment == "table1":
        tables["table1"] = [["dataset", "comparison", "bucket", "count"]] + table1_frequencies(reports)
    tables["histogram"] = [["dataset", "method", "value", "count"]] + histogram_rows(reports)
    if cfg.experiment == "mfa":
        kc = Counter()
        for r in reports:
            if r.ok:
                for k in json.loads(r.structure)["k"]:
                    kc[(r.dataset, k)] += 1
        tables["factor_counts"] = [["dataset", "k", "count"]] + [[d, k, c] for (d, k), c in sorted(kc.items())]
    if cfg.experiment == "gmm" and cfg.params.get("keep_traces"):
        rows = [["dataset", "trial", "step", "npl", "after_event"]]
        for r in reports:
            if r.ok and r.extra:
                ev = set(r.extra["events"])
                rows.extend([r.dataset, r.trial, i, v, int(i - 1 in ev)] for i, v in enumerate(r.extra["trace"]))
        tables["traces"] = rows
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "wall_seconds": wall,
        "n_reports": len(reports),
        "n_failed": sum(not r.ok for r in reports),
        "timing": _timing_summary(reports),
        "tables": sorted(f"{name}.csv" for name in tables),
    }
    return ExperimentResult(cfg, reports, tables, manifest)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    reports = run_trials(cfg)
    return _aggregate(cfg, reports, time.perf_counter() - t0)


def _expect(cfg: ExperimentConfig, name: str) -> ExperimentResult:
    if cfg.experiment != name:
        raise InvalidArgument(f"config is for {cfg.experiment!r}, not {name!r}")
    return run_experiment(cfg)


def run_table1(cfg: ExperimentConfig) -> ExperimentResult:
    return _expect(cfg, "table1")


def run_fa_histogram(cfg: ExperimentConfig) -> ExperimentResult:
    return _expect(cfg, "fa_histogram")


def run_gmm_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return _expect(cfg, "gmm")


def run_mfa_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return _expect(cfg, "mfa")


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return v


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    """One CSV per table plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in result.tables.items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True))
    return out


def read_table(path) -> list:
    """A CSV written by :func:`write_outputs` as a list of dicts."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(out_dir) -> str:
    """Human-readable summary of a results directory."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = manifest["config"]
    lines = [
        f"experiment {cfg['experiment']}: {cfg['trials']} trials, base seed {cfg['base_seed']}",
        f"reports {manifest['n_reports']}, failed {manifest['n_failed']}, wall {manifest['wall_seconds']:.1f}s",
    ]
    if (out / "table1.csv").exists():
        rows = read_table(out / "table1.csv")
        for ds in dict.fromkeys(r["dataset"] for r in rows):
            for comp in dict.fromkeys(r["comparison"] for r in rows if r["dataset"] == ds):
                cells = " ".join(
                    f"{r['bucket']}:{r['count']}" for r in rows if r["dataset"] == ds and r["comparison"] == comp
                )
                lines.append(f"  {ds:8s} {comp:22s} {cells}")
    else:
        rows = read_table(out / "histogram.csv")
        for key in dict.fromkeys((r["dataset"], r["method"]) for r in rows):
            cells = " ".join(f"{r['value']}:{r['count']}" for r in rows if (r["dataset"], r["method"]) == key)
            lines.append(f"  {key[0]:10s} {key[1]:10s} {cells}")
    for key, t in manifest["timing"].items():
        med = "n/a" if t["median_seconds"] is None else f"{t['median_seconds']:.4f}s"
        lines.append(f"  time {key}: median {med} over {t['trials'] - t['failed']} ok, {t['failed']} failed")
    return "\n".join(lines)
