"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 I/O error.
"""

import argparse
import json
import math
import sys
from pathlib import Path

from stochsqp import baselines, diagnostics, harness
from stochsqp.problems import GradientOracle, InputError, ParseError
from stochsqp.solver import BetaSchedule, SolverConfig, estimate_lipschitz, solve

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_problem(text):
    """``synthetic[:kind[:n[:m[:seed]]]]`` or ``logistic[:dataset[:norm]]``."""
    parts = text.split(":")
    if parts[0] == "synthetic":
        kind = parts[1] if len(parts) > 1 else "feasible"
        n = int(parts[2]) if len(parts) > 2 else 20
        m = int(parts[3]) if len(parts) > 3 else 6
        seed = int(parts[4]) if len(parts) > 4 else 0
        return {"type": "synthetic", "kind": kind, "n": n, "m": m, "seed": seed}
    if parts[0] == "logistic":
        ds = parts[1] if len(parts) > 1 else "australian"
        norm = len(parts) > 2 and parts[2] == "norm"
        return {"type": "logistic", "dataset": ds, "norm": norm}
    raise UsageError(f"cannot parse problem {text!r}")


def load_config(path):
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return SolverConfig.from_dict(data)


def _float_list(text):
    return [float(t) for t in text.split(",") if t]


def _int_list(text):
    return [int(t) for t in text.split(",") if t]


def build_parser():
    p = _Parser(prog="stochsqp", description="Stochastic SQP solver and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("solve", help="run one method on one problem")
    s.add_argument("--problem", default="synthetic")
    s.add_argument("--method", choices=("sqp", "subgradient", "projected-gradient"), default="sqp")
    s.add_argument("--noise", type=float, default=None)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--tau", type=float, default=1e-2, help="subgradient merit parameter")
    s.add_argument("--step-rule", choices=("suff", "max"), default=None)
    s.add_argument("--deterministic", action="store_true", help="exact gradients")
    s.add_argument("--config", type=Path, default=None)
    common(s)

    s = sub.add_parser("bench-synthetic", help="noise sweep on synthetic problems")
    s.add_argument("--problems", type=int, default=2, help="number of generated problems")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--m", type=int, default=6)
    s.add_argument("--noise", type=_float_list, default=list(harness.NOISE_LEVELS))
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--step-rule", choices=("suff", "max"), default="max")
    common(s)

    s = sub.add_parser("bench-logistic", help="minibatch sweep on a logistic problem")
    s.add_argument("--dataset", default="australian")
    s.add_argument("--norm", action="store_true", help="add the norm constraint")
    s.add_argument("--batch", type=_int_list, default=list(harness.BATCH_SIZES))
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--beta", type=float, default=0.1)
    s.add_argument("--step-rule", choices=("suff", "max"), default="max")
    s.add_argument("--record-true", action="store_true", help="tally merit-parameter events")
    common(s)

    s = sub.add_parser("tune", help="grid-tune a baseline")
    s.add_argument("--method", choices=("subgradient", "projected-gradient"), default="subgradient")
    s.add_argument("--problem", default="synthetic")
    s.add_argument("--noise", type=float, default=1e-4)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--budget", type=int, default=1000)
    common(s)

    s = sub.add_parser("mc-check", help="Monte-Carlo check of the Chernoff tail bound")
    s.add_argument("--p", type=float, default=None)
    s.add_argument("--J", type=int, default=None)
    s.add_argument("--s-max", type=int, default=None)
    s.add_argument("--trials", type=int, default=100_000)
    common(s)

    s = sub.add_parser("gradcheck", help="finite-difference derivative check")
    s.add_argument("--problem", default="logistic")
    s.add_argument("--points", type=int, default=20)
    s.add_argument("--rtol", type=float, default=1e-6)
    common(s)
    return p


def _step_rule(flag):
    return {"suff": "suff", "max": "max-suff-min"}[flag]


def _oracle_for(pspec, args):
    if args.deterministic:
        return GradientOracle("exact")
    if pspec["type"] == "logistic":
        if args.noise is not None:
            return GradientOracle("gaussian", noise=args.noise, seed=args.seed)
        return GradientOracle("minibatch", batch=args.batch or 16, seed=args.seed)
    return GradientOracle("gaussian", noise=1e-4 if args.noise is None else args.noise, seed=args.seed)


def cmd_solve(args):
    pspec = parse_problem(args.problem)
    problem = harness.build_problem(pspec)
    x0 = harness.initial_point(problem)
    oracle = _oracle_for(pspec, args)
    cfg = load_config(args.config) if args.config else SolverConfig()
    L, Gamma = estimate_lipschitz(problem, x0)
    cfg = cfg.replace(L=cfg.L or L, Gamma=cfg.Gamma or Gamma, max_iter=args.budget)
    if args.beta is not None:
        cfg = cfg.replace(beta_schedule=BetaSchedule(cfg.beta_schedule.kind, args.beta,
                                                     cfg.beta_schedule.power))
    if args.step_rule is not None:
        cfg = cfg.replace(step_rule=_step_rule(args.step_rule))
    if args.method == "sqp":
        report = solve(problem, oracle, cfg, x0)
    else:
        bcfg = baselines.BaselineConfig(args.method, beta=args.beta or 0.1,
                                        tau=args.tau if args.method == "subgradient" else None,
                                        max_iter=args.budget, seed=args.seed)
        report = baselines.run_baseline(problem, oracle, bcfg, x0, cfg.L, cfg.Gamma)
    idx, fe, st = harness.best_iterate(report)
    summary = harness.RunSummary(problem.name, args.method, oracle.describe(), args.seed, idx,
                                 fe, st, report.wall_time * 1e3, termination=report.termination,
                                 oracle_calls=report.oracle_calls)
    print(f"{problem.name} {args.method} [{oracle.describe()}] termination={report.termination} "
          f"iterations={report.iterations}")
    print(f"best iterate {idx}: feasibility {fe:.3e}  stationarity {st:.3e}")
    if args.out:
        harness.emit_report([summary], "json", args.out, stem="solve")
    return EXIT_OK


def _emit(summaries, out):
    print(harness.summary_table(summaries), end="")
    if out:
        for fmt in ("csv", "json", "markdown"):
            path = harness.emit_report(summaries, fmt, out)
        (Path(out) / "summary.md").write_text(harness.summary_table(summaries))
        print(f"wrote {path.parent}")
    if any(s.termination == "error" for s in summaries):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench_synthetic(args):
    problems = [{"type": "synthetic", "kind": "feasible", "n": args.n, "m": args.m, "seed": i}
                for i in range(args.problems)]
    spec = harness.ExperimentSpec(problems=problems, settings=tuple(args.noise), seeds=args.seeds,
                                  budget=args.budget, beta=args.beta,
                                  step_rule=_step_rule(args.step_rule), base_seed=args.seed,
                                  workers=args.workers)
    return _emit(harness.run_cutest_style_experiment(spec), args.out)


def cmd_bench_logistic(args):
    spec = harness.logistic_spec(dataset=args.dataset, norm=args.norm, batches=tuple(args.batch),
                                 seeds=args.seeds, epochs=args.epochs, beta=args.beta,
                                 step_rule=_step_rule(args.step_rule), base_seed=args.seed,
                                 workers=args.workers, record_true=args.record_true)
    summaries = harness.run_logistic_experiment(spec)
    if args.record_true:
        for s in summaries:
            if s.method == "sqp":
                print(f"seed {s.seed} {s.setting}: tau_prev <= tau_trial_true in "
                      f"{100 * s.extra['hold_rate']:.1f}% of iterations, final epoch clean: "
                      f"{s.extra['tail_ok']}")
    return _emit(summaries, args.out)


def cmd_tune(args):
    pspec = parse_problem(args.problem)
    problem = harness.build_problem(pspec)
    x0 = harness.initial_point(problem)
    L, Gamma = estimate_lipschitz(problem, x0)
    logistic = pspec["type"] == "logistic"
    setting = args.batch if logistic else args.noise
    ss = [args.seed]
    grids = baselines.default_grids(args.method, logistic)
    log = []
    best_cfg, report = baselines.tune_grid(args.method, problem,
                                           lambda: harness._oracle(pspec, setting, ss),
                                           grids, args.budget, x0, L, Gamma, log=log)
    idx, fe, st = harness.best_iterate(report)
    print(f"{len(log)} grid points; best beta={best_cfg.beta:g}"
          + (f" tau={best_cfg.tau:g}" if best_cfg.tau is not None else ""))
    print(f"best iterate {idx}: feasibility {fe:.3e}  stationarity {st:.3e}")
    return EXIT_OK


DEFAULT_MC_GRID = (
    (0.9, 21, 10), (0.5, 30, 10), (0.5, 50, 20), (0.7, 40, 20), (0.3, 60, 10),
    (0.8, 15, 5), (0.6, 100, 50), (0.95, 12, 8), (0.4, 80, 25), (0.2, 200, 30),
)


def mc_grid_check(grid, trials, seed):
    """Rows ``(p, J, s_max, empirical, bound, ok)`` with ``ok`` meaning
    ``empirical <= bound + 3 * standard error``."""
    rows = []
    for i, (p, J, s) in enumerate(grid):
        emp, bound = diagnostics.chernoff_mc(p, J, s, trials, seed=[seed, i])
        se = math.sqrt(max(emp * (1 - emp), 1.0 / trials) / trials)
        rows.append((p, J, s, emp, bound, emp <= bound + 3 * se))
    return rows


def cmd_mc_check(args):
    given = [args.p, args.J, args.s_max]
    if any(v is not None for v in given):
        if any(v is None for v in given):
            raise UsageError("--p, --J and --s-max go together")
        grid = [tuple(given)]
    else:
        grid = DEFAULT_MC_GRID
    rows = mc_grid_check(grid, args.trials, args.seed)
    for p, J, s, emp, bound, ok in rows:
        print(f"p={p:g} J={J} s_max={s}: empirical {emp:.5f}  bound {bound:.5f}  "
              f"{'ok' if ok else 'VIOLATED'}")
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_SOLVER


def cmd_gradcheck(args):
    problem = harness.build_problem(parse_problem(args.problem))
    worst_g, worst_j = diagnostics.check_derivatives(problem, args.points, seed=args.seed)
    ok = worst_g <= args.rtol and worst_j <= args.rtol
    print(f"{problem.name}: gradient rel. error {worst_g:.2e}, Jacobian rel. error {worst_j:.2e} "
          f"over {args.points} points: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {
    "solve": cmd_solve,
    "bench-synthetic": cmd_bench_synthetic,
    "bench-logistic": cmd_bench_logistic,
    "tune": cmd_tune,
    "mc-check": cmd_mc_check,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, diagnostics.UsageError, baselines.UsageError) as exc:
        if isinstance(exc, (ParseError, InputError, FileNotFoundError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
