"""Experiment runner: seeding, sweeps, best-iterate selection and reports."""

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stochsqp import baselines
from stochsqp.problems import (
    GradientOracle,
    load_dataset,
    make_logistic_problem,
    make_synthetic_degenerate,
)
from stochsqp.solver import BetaSchedule, RunReport, SolverConfig, estimate_lipschitz, solve

CSV_COLUMNS = ("problem", "method", "setting", "seed", "best_index", "feas_err", "stat_err", "wall_ms")
NOISE_LEVELS = (1e-8, 1e-4, 1e-2, 1e-1)
BATCH_SIZES = (16, 128)
FEAS_REL = 1e-6
CI_Z = 1.96


def feasibility_threshold(c0_inf):
    return FEAS_REL * max(1.0, float(c0_inf))


def best_iterate(history, c0_inf=None):
    """Pick the reporting iterate of a run.

    ``history`` is a :class:`RunReport` or a sequence of
    ``(feas_inf, stat_inf)`` pairs, one per iterate starting at ``x0``. The
    last iterate with ``feas <= 1e-6 max(1, c0_inf)`` wins; failing that,
    the least infeasible one. Returns ``(index, feas_err, stat_err)``.
    """
    if isinstance(history, RunReport):
        feas, stat = history.feas, history.stat
    else:
        arr = np.asarray(history, dtype=float).reshape(-1, 2)
        feas, stat = arr[:, 0], arr[:, 1]
    if len(feas) == 0:
        raise ValueError("empty history")
    c0 = feas[0] if c0_inf is None else c0_inf
    ok = np.flatnonzero(feas <= feasibility_threshold(c0))
    idx = int(ok[-1]) if ok.size else int(np.nanargmin(feas))
    return idx, float(feas[idx]), float(stat[idx])


@dataclass
class RunSummary:
    problem: str
    method: str
    setting: str
    seed: int
    best_index: int
    feas_err: float
    stat_err: float
    wall_ms: float
    termination: str = ""
    oracle_calls: int = 0
    extra: dict = field(default_factory=dict)

    def row(self):
        return [self.problem, self.method, self.setting, str(self.seed), str(self.best_index),
                repr(self.feas_err), repr(self.stat_err), f"{self.wall_ms:.3f}"]


@dataclass
class ExperimentSpec:
    """One sweep.

    ``problems`` holds builder dicts, e.g. ``{"type": "synthetic", "n": 20,
    "m": 6, "kind": "feasible", "seed": 0}`` or ``{"type": "logistic",
    "dataset": "australian", "norm": False}``. ``settings`` are noise levels
    (synthetic) or batch sizes (logistic). ``budget`` is the SQP iteration
    count for synthetic sweeps; logistic sweeps use ``epochs`` instead.
    """

    problems: list
    methods: tuple = ("sqp", "subgradient")
    settings: tuple = NOISE_LEVELS
    seeds: int = 10
    budget: int = 1000
    budget_ratio: int = 10
    epochs: int = 5
    beta: float = 1.0
    step_rule: str = "max-suff-min"
    base_seed: int = 0
    workers: int = 1
    grids: dict | None = None
    record_true: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("method list is empty")
        if self.budget <= 0 or self.epochs <= 0 or self.seeds <= 0:
            raise ValueError("budgets and seed counts must be positive")


def build_problem(pspec):
    kind = pspec.get("type", "synthetic")
    if kind == "synthetic":
        return make_synthetic_degenerate(pspec["n"], pspec["m"], pspec.get("kind", "feasible"),
                                         seed=pspec.get("seed", 0))
    if kind == "logistic":
        data = load_dataset(pspec.get("dataset", "australian"))
        return make_logistic_problem(data, pspec.get("num_linear", 10),
                                     with_norm_constraint=pspec.get("norm", False),
                                     seed=pspec.get("seed", 0))
    raise ValueError(f"unknown problem type {kind!r}")


def initial_point(problem):
    return np.zeros(problem.n)


def _oracle(pspec, setting, entropy):
    ss = np.random.SeedSequence(entropy)
    if pspec.get("type", "synthetic") == "logistic":
        return GradientOracle("minibatch", batch=int(setting), seed=ss)
    return GradientOracle("gaussian", noise=float(setting), seed=ss)


def _setting_label(pspec, setting):
    if pspec.get("type", "synthetic") == "logistic":
        return f"batch={int(setting)}"
    return f"noise={float(setting):g}"


def _run_task(task):
    spec, pidx, sidx, seed_idx, method = task
    pspec = spec.problems[pidx]
    setting = spec.settings[sidx]
    problem = build_problem(pspec)
    x0 = initial_point(problem)
    L, Gamma = estimate_lipschitz(problem, x0)
    entropy = [spec.base_seed, pidx, sidx, seed_idx]
    logistic = pspec.get("type", "synthetic") == "logistic"
    if logistic:
        budget = spec.epochs * math.ceil(problem.num_samples / int(setting))
        epoch = math.ceil(problem.num_samples / int(setting))
    else:
        budget = spec.budget
        epoch = 50
    label = _setting_label(pspec, setting)
    extra = {}
    try:
        if method == "sqp":
            cfg = SolverConfig(L=L, Gamma=Gamma, beta_schedule=BetaSchedule(beta=spec.beta),
                               step_rule=spec.step_rule, max_iter=budget)
            report = solve(problem, _oracle(pspec, setting, entropy), cfg, x0,
                           record_true=spec.record_true)
            if spec.record_true:
                from stochsqp.diagnostics import merit_event_monitor

                tally = merit_event_monitor(report.history, window=epoch)
                extra = {"hold_rate": tally.hold_rate, "tail_ok": tally.tail_window_ok}
            report.history = []
        else:
            if method == "projected-gradient" and problem.affine is None:
                return None
            grids = (spec.grids or {}).get(method) or baselines.default_grids(method, logistic)
            per_point = budget if logistic else spec.budget_ratio * budget
            best_cfg, report = baselines.tune_grid(
                method, problem, lambda: _oracle(pspec, setting, entropy), grids, per_point,
                x0, L, Gamma)
            extra = {"beta": best_cfg.beta}
            if best_cfg.tau is not None:
                extra["tau"] = best_cfg.tau
            n_points = len(grids.get("beta", ())) * (len(grids.get("tau", ())) if method == "subgradient" else 1)
            report.oracle_calls = per_point * n_points
    except Exception as exc:  # per-run failure is recorded, the sweep goes on
        return RunSummary(problem.name, method, label, seed_idx, -1, math.nan, math.nan, 0.0,
                          termination="error", extra={"error": f"{type(exc).__name__}: {exc}"})
    idx, fe, st = best_iterate(report)
    return RunSummary(problem.name, method, label, seed_idx, idx, fe, st,
                      report.wall_time * 1e3, termination=report.termination,
                      oracle_calls=report.oracle_calls, extra=extra)


def run_experiment(spec):
    tasks = [(spec, p, s, k, meth)
             for p in range(len(spec.problems))
             for s in range(len(spec.settings))
             for k in range(spec.seeds)
             for meth in spec.methods]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    return [r for r in results if r is not None]


def run_cutest_style_experiment(spec):
    """Noise sweep over synthetic problems: SQP against the tuned subgradient method."""
    return run_experiment(spec)


def run_logistic_experiment(spec):
    """Minibatch sweep over logistic problems, measured in epochs."""
    return run_experiment(spec)


def logistic_spec(dataset="australian", norm=False, batches=BATCH_SIZES, seeds=5, **kw):
    methods = ("sqp", "subgradient") if norm else ("sqp", "subgradient", "projected-gradient")
    kw.setdefault("beta", 0.1)
    return ExperimentSpec(problems=[{"type": "logistic", "dataset": dataset, "norm": norm}],
                          methods=kw.pop("methods", methods), settings=tuple(batches),
                          seeds=seeds, **kw)


# --------------------------------------------------------------------------
# aggregation and output

def aggregate(summaries):
    """Mean and 95% normal-approximation half-width per (problem, method, setting)."""
    groups = {}
    for s in summaries:
        groups.setdefault((s.problem, s.method, s.setting), []).append(s)
    rows = []
    for (prob, meth, setting), runs in groups.items():
        fe = np.array([r.feas_err for r in runs])
        st = np.array([r.stat_err for r in runs])
        n = len(runs)

        def ci(a):
            return float(CI_Z * np.std(a, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

        rows.append({"problem": prob, "method": meth, "setting": setting, "runs": n,
                     "feas_mean": float(np.mean(fe)), "feas_ci": ci(fe),
                     "stat_mean": float(np.mean(st)), "stat_ci": ci(st)})
    return rows


def summary_table(summaries):
    lines = ["| problem | setting | method | feasibility | stationarity |",
             "|---|---|---|---|---|"]
    for r in aggregate(summaries):
        lines.append(f"| {r['problem']} | {r['setting']} | {r['method']} | "
                     f"{r['feas_mean']:.2e} ± {r['feas_ci']:.2e} | "
                     f"{r['stat_mean']:.2e} ± {r['stat_ci']:.2e} |")
    return "\n".join(lines) + "\n"


def render(summaries, fmt):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in summaries:
            w.writerow(s.row())
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([dataclasses.asdict(s) for s in summaries], indent=1) + "\n"
    if fmt in ("markdown", "markdown-table"):
        lines = ["| " + " | ".join(CSV_COLUMNS) + " |", "|" + "---|" * len(CSV_COLUMNS)]
        lines += ["| " + " | ".join(s.row()) + " |" for s in summaries]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


_SUFFIX = {"csv": ".csv", "json": ".json", "markdown": ".md", "markdown-table": ".md"}


def emit_report(summaries, fmt, out_dir, stem="runs"):
    """Write ``summaries`` to ``out_dir/stem.<ext>`` and return the path.

    Raises ``OSError`` when the directory cannot be written.
    """
    if not summaries:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / (stem + _SUFFIX[fmt])
    path.write_text(render(summaries, fmt))
    return path


def load_reports(path):
    return [RunSummary(**d) for d in json.loads(Path(path).read_text())]
