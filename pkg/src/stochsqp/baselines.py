"""Comparison methods: stochastic subgradient on the exact penalty and
stochastic projected gradient for affine constraints."""

import itertools
import time
from dataclasses import dataclass

import numpy as np

from stochsqp import stepcore
from stochsqp.problems import sample_gradient
from stochsqp.solver import RunReport, iterate_errors

SUBGRADIENT_TAUS = tuple(10.0 ** -k for k in range(10, -1, -1))
SUBGRADIENT_BETAS = (1e-3, 1e-2, 1e-1, 1.0)
LOGISTIC_SUBGRADIENT_TAUS = (1e-3, 1e-2, 1e-1, 1.0)
PROJECTED_GRADIENT_BETAS = tuple(10.0 ** k for k in range(-8, 3))


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    beta: float
    tau: float | None = None
    max_iter: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("subgradient", "projected-gradient"):
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.method == "subgradient" and (self.tau is None or self.tau <= 0):
            raise ValueError("subgradient needs tau > 0")


class AffineProjector:
    """Euclidean projection onto ``{x : A x = b}``.

    Uses the SVD of ``A`` so duplicated or dependent rows are harmless as
    long as the system is consistent.
    """

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        sp = stepcore.range_split(A)
        self._V = sp.range_basis
        # pseudo-inverse applied to b
        self._x_b = sp.range_basis @ ((sp.U.T @ np.asarray(b, dtype=float)) / sp.s)

    @classmethod
    def for_problem(cls, problem):
        if problem.affine is None:
            raise UsageError(f"{problem.name} has non-affine constraints")
        return cls(*problem.affine)

    def __call__(self, z):
        return z - self._V @ (self._V.T @ z) + self._x_b


def subgradient_step(problem, oracle, x, tau, beta, L, Gamma):
    if tau <= 0 or beta <= 0:
        raise ValueError("tau and beta must be positive")
    g = sample_gradient(problem, oracle, x)
    c = problem.constraints(x)
    cn = float(np.linalg.norm(c))
    direction = tau * g
    if cn > 0.0:
        direction = direction + problem.jacobian(x).T @ c / cn
    return x - (beta * tau / (tau * L + Gamma)) * direction


def projected_gradient_step(problem, oracle, x, beta, L, projector):
    g = sample_gradient(problem, oracle, x)
    return projector(x - (beta / L) * g)


def run_baseline(problem, oracle, config, x0, L, Gamma):
    """Run a baseline for ``config.max_iter`` iterations and record errors."""
    x = np.array(x0, dtype=float)
    projector = AffineProjector.for_problem(problem) if config.method == "projected-gradient" else None
    split = _fixed_split(problem)
    calls0 = oracle.calls
    f0, s0 = iterate_errors(problem, x, split=split)
    feas, stat = [f0], [s0]
    t0 = time.perf_counter()
    for _ in range(config.max_iter):
        if projector is None:
            x = subgradient_step(problem, oracle, x, config.tau, config.beta, L, Gamma)
        else:
            x = projected_gradient_step(problem, oracle, x, config.beta, L, projector)
        if not np.all(np.isfinite(x)):
            # diverged: the remaining budget is charged but nothing is recorded
            oracle.calls = calls0 + config.max_iter
            break
        fe, st = iterate_errors(problem, x, split=split)
        feas.append(fe)
        stat.append(st)
    return RunReport(
        x=x,
        feas=np.array(feas),
        stat=np.array(stat),
        history=[],
        termination="max_iter" if np.all(np.isfinite(x)) else "diverged",
        wall_time=time.perf_counter() - t0,
        L=L,
        Gamma=Gamma,
        oracle_calls=oracle.calls - calls0,
        method=config.method,
    )


def _fixed_split(problem):
    if problem.affine is None:
        return None
    return stepcore.range_split(problem.affine[0])


def rank_key(report):
    """Sort key for comparing runs by their best iterates (smaller is better).

    Runs that reach the feasibility threshold beat those that do not; ties
    are broken by stationarity and then feasibility.
    """
    from stochsqp.harness import best_iterate, feasibility_threshold

    _, fe, st = best_iterate(report)
    if fe <= feasibility_threshold(report.feas[0]):
        return (0, st, fe)
    return (1, fe, st)


def default_grids(method, logistic=False):
    if method == "subgradient":
        taus = LOGISTIC_SUBGRADIENT_TAUS if logistic else SUBGRADIENT_TAUS
        return {"tau": taus, "beta": SUBGRADIENT_BETAS}
    if method == "projected-gradient":
        return {"beta": PROJECTED_GRADIENT_BETAS}
    raise ValueError(f"unknown baseline {method!r}")


def tune_grid(method, problem, oracle_factory, grids, budget, x0, L, Gamma, log=None):
    """Run every grid point for ``budget`` iterations and keep the best.

    ``oracle_factory()`` returns a fresh oracle per grid point. Every run is
    appended to ``log`` as ``(config, report)`` when a list is given.
    Returns ``(best_config, best_report)``.
    """
    taus = grids.get("tau", (None,)) if method == "subgradient" else (None,)
    betas = grids.get("beta", ())
    if not betas or not taus:
        raise ValueError("empty grid")
    best = None
    for tau, beta in itertools.product(taus, betas):
        cfg = BaselineConfig(method, beta=beta, tau=tau, max_iter=budget)
        report = run_baseline(problem, oracle_factory(), cfg, x0, L, Gamma)
        if log is not None:
            log.append((cfg, report))
        key = rank_key(report)
        if best is None or key < best[0]:
            best = (key, cfg, report)
    return best[1], best[2]
