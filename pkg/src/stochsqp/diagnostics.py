"""Quantities computed with the true gradient, and probability checks."""

import math
from dataclasses import dataclass

import numpy as np

from stochsqp import stepcore
from stochsqp.solver import trial_merit_parameter


class UsageError(ValueError):
    pass


@dataclass
class TrueStep:
    u_true: np.ndarray
    d_true: np.ndarray
    tau_trial_true: float


@dataclass
class MeritEventTally:
    total_iters: int
    decrease_count: int
    trial_below_count: int
    tail_window_ok: bool

    @property
    def hold_rate(self):
        """Fraction of iterations with ``tau_{k-1} <= tau_trial_true``."""
        if self.total_iters == 0:
            return 1.0
        return 1.0 - self.trial_below_count / self.total_iters


def true_step(problem, H, J, v, x, c=None, sigma=0.5, split=None, tol=1e-9):
    """Tangential step and trial merit parameter with ``grad f(x)`` for ``g``."""
    grad = problem.true_gradient(x)
    if c is None:
        c = problem.constraints(x)
    ts = stepcore.tangential_step(H, J, grad, v, tol=tol, split=split)
    d = v + ts.u
    tt = trial_merit_parameter(grad, d, ts.u, H, c, J @ d, sigma, v=v)
    return TrueStep(ts.u, d, tt)


def stationarity_residuals(problem, x):
    """Returns ``(kkt_res, feas_res, infeas_stat_res)``.

    ``kkt_res`` is ``min_y ||grad f + J^T y||_inf`` for the least-squares
    multiplier, ``feas_res`` is ``||c||_inf`` and ``infeas_stat_res`` is
    ``||J^T c||_2``.
    """
    c = problem.constraints(x)
    J = np.atleast_2d(problem.jacobian(x))
    grad = problem.true_gradient(x)
    y, _ = stepcore.least_squares_multiplier(J, grad)
    kkt = float(np.max(np.abs(grad + J.T @ y)))
    feas = float(np.max(np.abs(c))) if c.size else 0.0
    return kkt, feas, float(np.linalg.norm(J.T @ c))


def check_derivatives(problem, num_points=20, seed=0, h=1e-5, scale=1.0):
    """Worst relative errors of grad f and J against central differences.

    Points are ``scale * N(0, I)`` draws. Returns ``(grad_err, jac_err)``
    with errors measured as ``||fd - exact|| / max(||exact||, 1e-12)``.
    """
    rng = np.random.default_rng(seed)
    n = problem.n
    worst_g = worst_j = 0.0
    eye = np.eye(n)
    for _ in range(num_points):
        x = scale * rng.standard_normal(n)
        fd_g = np.array([(problem.objective(x + h * e) - problem.objective(x - h * e)) / (2 * h)
                         for e in eye])
        g = problem.true_gradient(x)
        worst_g = max(worst_g, float(np.linalg.norm(fd_g - g)) / max(float(np.linalg.norm(g)), 1e-12))
        if problem.m:
            fd_j = np.column_stack([(problem.constraints(x + h * e) - problem.constraints(x - h * e))
                                    / (2 * h) for e in eye])
            J = problem.jacobian(x)
            worst_j = max(worst_j, float(np.linalg.norm(fd_j - J)) / max(float(np.linalg.norm(J)), 1e-12))
    return worst_g, worst_j


def merit_event_monitor(history, window=50):
    """Tally merit-parameter events over a run recorded with ``record_true``.

    ``window`` is the length of the tail checked for ``tail_window_ok``;
    pass the epoch length for minibatch runs.
    """
    recs = [r for r in history if r.termination == "none"]
    if any(r.tau_trial_true is None for r in recs):
        raise UsageError("history was recorded without true-step diagnostics")
    below = [r.tau_trial_true < r.tau_prev for r in recs]
    decreases = sum(r.tau < r.tau_prev for r in recs)
    tail = below[-window:] if window > 0 else []
    return MeritEventTally(
        total_iters=len(recs),
        decrease_count=int(decreases),
        trial_below_count=int(sum(below)),
        tail_window_ok=not any(tail),
    )


def sbar(tau_trial_min, tau_init, eps_tau):
    """Most merit-parameter decreases possible before falling below ``tau_trial_min``."""
    if not 0 < tau_trial_min <= tau_init:
        raise UsageError("need 0 < tau_trial_min <= tau_init")
    if not 0 < eps_tau < 1:
        raise UsageError("eps_tau must lie in (0, 1)")
    if tau_trial_min == tau_init:
        return 0
    return int(math.ceil(math.log(tau_trial_min / tau_init) / math.log(1.0 - eps_tau)))


def chernoff_bound(p_tau, J, s_max):
    mean = p_tau * (J - 1)
    return math.exp(-(mean / 2.0) * (1.0 - s_max / mean) ** 2)


def chernoff_mc(p_tau, J, s_max, trials=100_000, seed=0):
    """Monte-Carlo ``P[sum of J-1 Bernoulli(p_tau) <= s_max]`` and its Chernoff bound.

    Returns ``(empirical, bound)``.
    """
    if not 0 < p_tau <= 1:
        raise UsageError("p_tau must lie in (0, 1]")
    if J <= s_max / p_tau + 1:
        raise UsageError("need J > s_max / p_tau + 1")
    if trials < 10_000:
        raise UsageError("trials must be >= 10000")
    rng = np.random.default_rng(seed)
    z = rng.random((trials, J - 1)) < p_tau
    empirical = float(np.mean(z.sum(axis=1) <= s_max))
    return empirical, chernoff_bound(p_tau, J, s_max)
