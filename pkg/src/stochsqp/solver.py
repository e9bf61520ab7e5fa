"""Stochastic SQP iteration with adaptive merit, curvature and ratio parameters."""

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from stochsqp import stepcore
from stochsqp.problems import sample_gradient
from stochsqp.stepcore import norm_decrease

INF = math.inf
D_ZERO_TOL = 1e-14


class InvariantViolation(RuntimeError):
    """An identity the method guarantees failed beyond round-off."""


@dataclass(frozen=True)
class BetaSchedule:
    """Step-size scale sequence.

    ``beta_hat(j) = beta / (j + 1) ** power``. ``constant`` ignores
    ``power``; ``reset`` restarts ``j`` at zero, scaled by a power-of-two
    factor ``lam``, whenever an adaptive parameter changes.
    """

    kind: str = "constant"
    beta: float = 1.0
    power: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "diminishing", "reset"):
            raise ValueError(f"unknown beta schedule {self.kind!r}")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")

    def beta_hat(self, j):
        if self.kind == "constant":
            return self.beta
        return self.beta / (j + 1) ** self.power


STEP_RULES = ("suff", "max-suff-min")


@dataclass(frozen=True)
class SolverConfig:
    """User parameters; defaults are the values used in the logistic and
    CUTEst-style experiments (H = I, tau=1, chi=1e-3, zeta=1e3, ...).

    ``L`` and ``Gamma`` of ``None`` are estimated at ``x0`` by
    :func:`estimate_lipschitz` when :func:`solve` starts.

    With ``theta = 0`` the projection interval collapses to its lower end,
    so every step takes that value whatever the step rule; this regime is
    untested for very small ``tau``.
    """

    L: float | None = None
    Gamma: float | None = None
    tau_init: float = 1.0
    chi_init: float = 1e-3
    zeta_init: float = 1e3
    xi_init: float = 1.0
    omega: float = 1e2
    eps_v: float = 1.0
    sigma: float = 0.5
    eps_tau: float = 1e-2
    eps_chi: float = 1e-2
    eps_zeta: float = 1e-2
    eps_xi: float = 1e-2
    eta: float = 0.5
    theta: float = 1e4
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    step_rule: str = "max-suff-min"
    max_iter: int = 1000
    term_tol_jc: float = 1e-10
    term_tol_c: float = 1e-8
    kkt_tol: float = 1e-9
    normal_max_iter: int | None = None
    tangential_tol: float = 1e-9
    deterministic: bool | None = None
    check_invariants: bool = True

    def __post_init__(self):
        if self.step_rule == "max":
            object.__setattr__(self, "step_rule", "max-suff-min")
        if isinstance(self.beta_schedule, dict):
            object.__setattr__(self, "beta_schedule", BetaSchedule(**self.beta_schedule))
        checks = [
            (self.L is None or self.L > 0, "L > 0"),
            (self.Gamma is None or self.Gamma > 0, "Gamma > 0"),
            (self.tau_init > 0, "tau_init > 0"),
            (self.chi_init > 0, "chi_init > 0"),
            (self.zeta_init > 0, "zeta_init > 0"),
            (self.xi_init > 0, "xi_init > 0"),
            (self.omega > 0, "omega > 0"),
            (0 < self.eps_v <= 1, "eps_v in (0, 1]"),
            (0 < self.sigma < 1, "sigma in (0, 1)"),
            (0 < self.eps_tau < 1, "eps_tau in (0, 1)"),
            (self.eps_chi > 0, "eps_chi > 0"),
            (0 < self.eps_zeta < 1, "eps_zeta in (0, 1)"),
            (0 < self.eps_xi < 1, "eps_xi in (0, 1)"),
            (0 < self.eta < 1, "eta in (0, 1)"),
            (self.theta >= 0, "theta >= 0"),
            (self.step_rule in STEP_RULES, f"step_rule in {STEP_RULES}"),
            (self.max_iter >= 0, "max_iter >= 0"),
            (self.term_tol_jc >= 0 and self.term_tol_c >= 0, "termination tolerances >= 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"invalid SolverConfig: need {what}")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown SolverConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolverState:
    x: np.ndarray
    tau: float
    chi: float
    zeta: float
    xi: float
    L: float
    Gamma: float
    k: int = 0
    beta_index: int = 0
    lam: float = 1.0
    # SVD of a constant Jacobian, reused every iteration
    fixed_split: stepcore.RangeSplit | None = None

    @classmethod
    def initial(cls, x0, config, L, Gamma):
        return cls(
            x=np.array(x0, dtype=float),
            tau=config.tau_init,
            chi=config.chi_init,
            zeta=config.zeta_init,
            xi=config.xi_init,
            L=L,
            Gamma=Gamma,
        )


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    g: np.ndarray
    v: np.ndarray
    u: np.ndarray
    d: np.ndarray
    y: np.ndarray
    delta_l: float = 0.0
    tau_prev: float = 0.0
    tau: float = 0.0
    tau_trial: float = INF
    chi: float = 0.0
    zeta: float = 0.0
    xi: float = 0.0
    xi_trial: float = INF
    beta: float = 0.0
    alpha_suff: float = 1.0
    alpha: float = 1.0
    alpha_lo: float = 0.0
    alpha_hi: float = INF
    tangentially_dominated: bool = False
    switch_fired: bool = False
    c_norm: float = 0.0
    cv_norm: float = 0.0
    uHu: float = 0.0
    termination: str = "none"
    tau_trial_true: float | None = None
    u_true: np.ndarray | None = None


# --------------------------------------------------------------------------
# scalar rules

def merit_phi(problem, x, tau):
    """Exact penalty ``tau * f(x) + ||c(x)||_2``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    cn = float(np.linalg.norm(problem.constraints(x)))
    if tau == 0:
        return cn
    return tau * problem.objective(x) + cn


def model_reduction(tau, g, d, c, Jd):
    """Reduction ``-tau g^T d + ||c|| - ||c + J d||`` of the linear merit model."""
    return float(-tau * (g @ d)) + norm_decrease(c, Jd)


def _quad(H, w):
    return float(w @ w) if H is None else float(w @ (H @ w))


# relative size below which g^T d + u^T H u counts as cancelled to zero
CANCEL_RTOL = 1e-10


def trial_merit_parameter(g, d, u, H, c, Jd, sigma, v=None):
    """Largest merit parameter giving the required model reduction.

    The denominator is ``g^T d + u^T H u``. When ``v`` is given, ``u`` is
    taken to solve the tangential system, for which that equals
    ``g^T v - v^T H u``; this form does not cancel when ``v`` is tiny. At a
    feasible point ``v = 0`` and the denominator vanishes exactly, so a
    denominator lost to cancellation, or a nonpositive constraint decrease,
    yields ``inf``.
    """
    gd = float(g @ d)
    uhu = _quad(H, u)
    if v is None:
        denom = gd + uhu
    else:
        Hu = u if H is None else H @ u
        denom = float(g @ v) - float(v @ Hu)
    if denom <= CANCEL_RTOL * (abs(gd) + abs(uhu)):
        return INF
    num = norm_decrease(c, Jd)
    if num <= 0.0:
        return INF
    return (1.0 - sigma) * num / denom


def update_merit_parameter(tau_prev, tau_trial, eps_tau):
    if tau_prev <= tau_trial:
        return tau_prev
    return min((1.0 - eps_tau) * tau_prev, tau_trial)


def update_curvature_params(chi_prev, zeta_prev, u, v, d, H, eps_chi, eps_zeta):
    """Returns ``(chi, zeta, fired)``."""
    uu = float(u @ u)
    if uu >= chi_prev * float(v @ v) and 0.5 * _quad(H, d) < 0.25 * zeta_prev * uu:
        return (1.0 + eps_chi) * chi_prev, (1.0 - eps_zeta) * zeta_prev, True
    return chi_prev, zeta_prev, False


def ratio_trial(delta_l, tau, d, tangentially_dominated):
    dd = float(d @ d)
    return delta_l / (tau * dd) if tangentially_dominated else delta_l / dd


def update_ratio_param(xi_prev, delta_l, tau, d, tangentially_dominated, eps_xi):
    xi_tr = ratio_trial(delta_l, tau, d, tangentially_dominated)
    if xi_prev <= xi_tr:
        return xi_prev
    return min((1.0 - eps_xi) * xi_prev, xi_tr)


def _lead(config):
    two = 2.0 * (1.0 - config.eta)
    return min(two, 1.0) if config.step_rule == "max-suff-min" else two


def projection_interval(tau, xi, beta, config, tangentially_dominated, L=None, Gamma=None):
    L = config.L if L is None else L
    Gamma = config.Gamma if Gamma is None else Gamma
    lo = _lead(config) * beta * xi / (tau * L + Gamma)
    if tangentially_dominated:
        lo *= tau
    return lo, lo + config.theta * beta * beta


def alpha_min(delta_l, tau, d_norm_sq, beta, c_norm, L, Gamma):
    scale = (tau * L + Gamma) * d_norm_sq
    return max(min(beta * delta_l / scale, 1.0), (beta * delta_l - 2.0 * c_norm) / scale)


def step_size(delta_l, tau, xi, d_norm_sq, beta, config, tangentially_dominated,
              c_norm=0.0, L=None, Gamma=None):
    """Returns ``(alpha_suff, alpha)``; ``alpha`` is the projected trial step."""
    L = config.L if L is None else L
    Gamma = config.Gamma if Gamma is None else Gamma
    scale = (tau * L + Gamma) * d_norm_sq
    a_suff = min(2.0 * (1.0 - config.eta) * beta * delta_l / scale, 1.0)
    trial = a_suff
    if config.step_rule == "max-suff-min":
        trial = max(a_suff, alpha_min(delta_l, tau, d_norm_sq, beta, c_norm, L, Gamma))
    lo, hi = projection_interval(tau, xi, beta, config, tangentially_dominated, L, Gamma)
    return a_suff, min(max(trial, lo), hi)


def beta_bound(config, tau, xi, L, Gamma):
    """Largest beta keeping ``2(1-eta) beta xi max(tau,1) / (tau L + Gamma) <= 1``."""
    lead = _lead(config)
    return min(1.0, (tau * L + Gamma) / (lead * xi * max(tau, 1.0)))


def deterministic_beta(config, Gamma):
    """Constant beta satisfying the deterministic-convergence requirement at
    the initial parameters: ``2(1-eta) beta xi_{-1} max(tau_{-1},1) / Gamma <= 1``."""
    lead = 2.0 * (1.0 - config.eta)
    return min(1.0, Gamma / (lead * config.xi_init * max(config.tau_init, 1.0)))


def _reset_factor(config, beta_hat0, tau, xi, L, Gamma):
    lam = 1.0
    bound = beta_bound(config, tau, xi, L, Gamma)
    while lam * beta_hat0 > bound and lam > 1e-300:
        lam *= 0.5
    return lam


# --------------------------------------------------------------------------
# iteration

def sqp_iteration(problem, oracle, config, state, H=None, record_true=False):
    """Run one iteration in place on ``state`` and return its record."""
    x = state.x
    n = problem.n
    c = problem.constraints(x)
    J = np.ascontiguousarray(problem.jacobian(x))
    c_norm = float(np.linalg.norm(c))
    jtc = float(np.linalg.norm(J.T @ c))
    zeros_n = np.zeros(n)
    rec = StepRecord(k=state.k, x=x.copy(), g=zeros_n, v=zeros_n, u=zeros_n, d=zeros_n,
                     y=np.zeros(problem.m), tau_prev=state.tau, tau=state.tau, chi=state.chi,
                     zeta=state.zeta, xi=state.xi, c_norm=c_norm, cv_norm=c_norm)
    if jtc <= config.term_tol_jc * max(1.0, c_norm) and c_norm > config.term_tol_c:
        rec.termination = "infeasible_stationary"
        return rec

    g = sample_gradient(problem, oracle, x)
    ns = stepcore.normal_step(J, c, config.omega, config.eps_v, config.normal_max_iter)
    v = ns.v
    split = state.fixed_split if state.fixed_split is not None else stepcore.range_split(J)
    ts = stepcore.tangential_step(H, J, g, v, tol=config.tangential_tol, split=split)
    u = ts.u
    d = v + u
    Jv = J @ v
    Jd = J @ d
    rec.g, rec.v, rec.u, rec.d, rec.y = g, v, u, d, ts.y
    rec.cv_norm = float(np.linalg.norm(c + Jv))
    rec.uHu = _quad(H, u)

    deterministic = oracle.deterministic if config.deterministic is None else config.deterministic
    if record_true:
        from stochsqp.diagnostics import true_step

        if oracle.mode == "exact":
            tt = trial_merit_parameter(g, d, u, H, c, Jd, config.sigma, v=v)
            rec.u_true, rec.tau_trial_true = u, tt
        else:
            t = true_step(problem, H, J, v, x, c=c, sigma=config.sigma, split=split)
            rec.u_true, rec.tau_trial_true = t.u_true, t.tau_trial_true

    if deterministic:
        kkt = float(np.linalg.norm(g + J.T @ ts.y))
        if kkt <= config.kkt_tol and c_norm <= config.kkt_tol:
            rec.termination = "dk_zero_kkt"
            return rec

    d_norm_sq = float(d @ d)
    tau_prev = state.tau
    if math.sqrt(d_norm_sq) >= D_ZERO_TOL:
        tau_trial = trial_merit_parameter(g, d, u, H, c, Jd, config.sigma, v=v)
        tau = update_merit_parameter(tau_prev, tau_trial, config.eps_tau)
        delta_l = model_reduction(tau, g, d, c, Jd)
    else:
        delta_l = 0.0
    if math.sqrt(d_norm_sq) < D_ZERO_TOL or delta_l <= 0.0:
        # zero step (or a round-off-level model reduction): nothing moves
        rec.tau_trial = rec.xi_trial = INF
        rec.alpha_suff = rec.alpha = 1.0
        rec.beta = _current_beta(config, state)
        if deterministic:
            kkt = float(np.linalg.norm(g + J.T @ ts.y))
            small = kkt <= config.kkt_tol and c_norm <= config.kkt_tol
            rec.termination = "dk_zero_kkt" if small else "stalled"
            return rec
        state.k += 1
        state.beta_index += 1
        return rec

    chi, zeta, fired = update_curvature_params(state.chi, state.zeta, u, v, d, H,
                                               config.eps_chi, config.eps_zeta)
    dominated = float(u @ u) >= chi * float(v @ v)
    xi_tr = ratio_trial(delta_l, tau, d, dominated)
    xi = update_ratio_param(state.xi, delta_l, tau, d, dominated, config.eps_xi)

    if config.check_invariants:
        need = tau * rec.uHu + config.sigma * norm_decrease(c, Jv)
        if delta_l < need - 1e-8 * max(1.0, c_norm, abs(tau * float(g @ d))):
            raise InvariantViolation(f"model reduction condition failed at k={state.k}: "
                                     f"{delta_l:.3e} < {need:.3e}")

    changed = tau < tau_prev or chi > state.chi or zeta < state.zeta or xi < state.xi
    state.tau, state.chi, state.zeta, state.xi = tau, chi, zeta, xi
    sched = config.beta_schedule
    if sched.kind == "reset" and (changed or state.k == 0):
        state.beta_index = 0
        state.lam = _reset_factor(config, sched.beta_hat(0), tau, xi, state.L, state.Gamma)
    beta = _current_beta(config, state)
    a_suff, alpha = step_size(delta_l, tau, xi, d_norm_sq, beta, config, dominated,
                              c_norm=c_norm, L=state.L, Gamma=state.Gamma)
    lo, hi = projection_interval(tau, xi, beta, config, dominated, state.L, state.Gamma)

    rec.delta_l = delta_l
    rec.tau, rec.tau_trial = tau, tau_trial
    rec.chi, rec.zeta, rec.switch_fired = chi, zeta, fired
    rec.xi, rec.xi_trial = xi, xi_tr
    rec.tangentially_dominated = dominated
    rec.beta, rec.alpha_suff, rec.alpha = beta, a_suff, alpha
    rec.alpha_lo, rec.alpha_hi = lo, hi

    state.x = x + alpha * d
    state.k += 1
    state.beta_index += 1
    return rec


def _current_beta(config, state):
    sched = config.beta_schedule
    b = sched.beta_hat(state.beta_index)
    if sched.kind == "reset":
        b *= state.lam
    return b


# --------------------------------------------------------------------------
# driver

@dataclass
class RunReport:
    """Result of one run.

    ``feas`` and ``stat`` are indexed by iterate (length ``iterations + 1``):
    ``||c(x_k)||_inf`` and ``min_y ||grad f(x_k) + J_k^T y||_inf`` using the
    true gradient and a least-squares multiplier.
    """

    x: np.ndarray
    feas: np.ndarray
    stat: np.ndarray
    history: list
    termination: str
    wall_time: float
    L: float
    Gamma: float
    oracle_calls: int
    state: SolverState | None = None
    method: str = "sqp"
    error: str | None = None

    @property
    def iterations(self):
        return len(self.feas) - 1

    def series(self, name):
        return np.array([getattr(r, name) for r in self.history])

    def best_iterate(self):
        from stochsqp.harness import best_iterate
        return best_iterate(self)


def iterate_errors(problem, x, split=None):
    """``(||c||_inf, stationarity_inf)`` at ``x`` with the true gradient.

    ``split`` may carry a precomputed SVD when J does not depend on x.
    """
    c = problem.constraints(x)
    J = problem.jacobian(x)
    grad = problem.true_gradient(x)
    y, _ = stepcore.least_squares_multiplier(J, grad, split=split)
    res = grad + J.T @ y
    feas = float(np.max(np.abs(c))) if c.size else 0.0
    return feas, float(np.max(np.abs(res)))


def solve(problem, oracle, config, x0, H=None, record_true=False, callback=None):
    """Run the method from ``x0`` until termination or ``config.max_iter``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n,):
        raise ValueError(f"x0 must have shape ({problem.n},)")
    L, Gamma = config.L, config.Gamma
    if L is None or Gamma is None:
        Le, Ge = estimate_lipschitz(problem, x0)
        L = Le if L is None else L
        Gamma = Ge if Gamma is None else Gamma
    state = SolverState.initial(x0, config, L, Gamma)
    calls0 = oracle.calls
    split = None if problem.affine is None else stepcore.range_split(problem.affine[0])
    state.fixed_split = split
    feas, stat = [], []
    f0, s0 = iterate_errors(problem, state.x, split)
    feas.append(f0)
    stat.append(s0)
    history = []
    termination = "max_iter"
    error = None
    t0 = time.perf_counter()
    try:
        for _ in range(config.max_iter):
            rec = sqp_iteration(problem, oracle, config, state, H=H, record_true=record_true)
            history.append(rec)
            if rec.termination != "none":
                termination = rec.termination
                break
            fe, st = iterate_errors(problem, state.x, split)
            feas.append(fe)
            stat.append(st)
            if callback is not None:
                callback(state, rec)
    except (stepcore.TangentialSolveError, InvariantViolation, FloatingPointError) as exc:
        termination = "error"
        error = f"{type(exc).__name__}: {exc}"
        raise_later = exc
    else:
        raise_later = None
    report = RunReport(
        x=state.x.copy(),
        feas=np.array(feas),
        stat=np.array(stat),
        history=history,
        termination=termination,
        wall_time=time.perf_counter() - t0,
        L=L,
        Gamma=Gamma,
        oracle_calls=oracle.calls - calls0,
        state=state,
        error=error,
    )
    if raise_later is not None:
        raise_later.report = report
        raise raise_later
    return report


def estimate_lipschitz(problem, x0, num_samples=10, radius=1.0, seed=0):
    """Finite-difference estimates of the Lipschitz constants of grad f and J.

    Takes the largest ratio over ``num_samples`` random displacements of
    norm ``radius`` around ``x0``; both results are floored at 1e-8.
    """
    if num_samples < 2:
        raise ValueError("num_samples must be >= 2")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    g0 = problem.true_gradient(x0)
    J0 = problem.jacobian(x0)
    L = Gamma = 0.0
    for _ in range(num_samples):
        delta = rng.standard_normal(x0.shape[0])
        delta *= radius / np.linalg.norm(delta)
        xs = x0 + delta
        L = max(L, float(np.linalg.norm(problem.true_gradient(xs) - g0)) / radius)
        if J0.size:
            Gamma = max(Gamma, float(np.linalg.norm(problem.jacobian(xs) - J0, 2)) / radius)
    return max(L, 1e-8), max(Gamma, 1e-8)
