"""Linear algebra for the two step components.

The normal component ``v`` reduces ``||c + J v||`` inside the ball
``||v|| <= omega ||J^T c||`` and lies in Range(J^T). The tangential
component ``u`` minimizes ``(g + H v)^T u + 0.5 u^T H u`` over Null(J).
Neither needs J to have full row rank.
"""

from dataclasses import dataclass

import numpy as np

from stochsqp._backend import kernels as _kernels

# singular values below RANK_RTOL * sigma_max count as zero
RANK_RTOL = 1e-10
DENSE_FALLBACK_MAX_N = 200


class TangentialSolveError(RuntimeError):
    """Projected CG did not meet its tolerance (ill-conditioned H or J)."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass
class NormalStepResult:
    v: np.ndarray
    predicted_reduction: float
    cauchy_reduction: float
    iterations: int


@dataclass
class TangentialStepResult:
    u: np.ndarray
    y: np.ndarray
    kkt_residual: float
    nullspace_residual: float
    iterations: int = 0
    method: str = "cg"  # or "dense" after the fallback


@dataclass(frozen=True)
class RangeSplit:
    """SVD-derived bases for Range(J^T) and Null(J), reused within one iterate."""

    U: np.ndarray       # m x r
    s: np.ndarray       # r positive singular values
    range_basis: np.ndarray  # n x r, columns span Range(J^T)
    null_basis: np.ndarray   # n x (n - r)

    @property
    def rank(self):
        return self.s.shape[0]


def range_split(J):
    J = np.atleast_2d(np.asarray(J, dtype=float))
    m, n = J.shape
    if m == 0 or not np.any(J):
        return RangeSplit(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)), np.eye(n))
    U, s, Vt = np.linalg.svd(J, full_matrices=True)
    r = int(np.sum(s > RANK_RTOL * s[0]))
    return RangeSplit(
        np.ascontiguousarray(U[:, :r]),
        s[:r].copy(),
        np.ascontiguousarray(Vt[:r].T),
        np.ascontiguousarray(Vt[r:].T),
    )


def nullspace_basis(J):
    """Orthonormal basis of Null(J) as an ``n x (n - rank)`` matrix."""
    return range_split(J).null_basis


def least_squares_multiplier(J, grad, split=None):
    """Minimum-norm ``y`` minimizing ``||grad + J^T y||_2``.

    Returns ``(y, residual)`` where ``residual`` is the attained 2-norm.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    grad = np.asarray(grad, dtype=float)
    sp = split if split is not None else range_split(J)
    if sp.rank == 0:
        return np.zeros(J.shape[0]), float(np.linalg.norm(grad))
    # J^T = V S U^T  =>  y = -U S^{-1} V^T grad
    y = -sp.U @ ((sp.range_basis.T @ grad) / sp.s)
    res = grad + J.T @ y
    return y, float(np.linalg.norm(res))


def cauchy_step(J, c, omega):
    """Steepest-descent point for ``0.5 ||c + J v||^2`` with ``alpha <= omega``.

    Returns ``(v_c, alpha_c, reduction)`` with ``v_c = -J^T c`` (the
    direction, not the scaled step) and
    ``reduction = ||c|| - ||c + alpha_c J v_c||``.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    c = np.asarray(c, dtype=float)
    vc = -(J.T @ c)
    num = float(vc @ vc)
    if num == 0.0:
        return vc, float(omega), 0.0
    Jv = J @ vc
    den = float(Jv @ Jv)
    alpha = min(num / den, omega) if den > 0.0 else float(omega)
    reduction = norm_decrease(c, alpha * Jv)
    return vc, alpha, max(reduction, 0.0)


def norm_decrease(c, w):
    """``||c|| - ||c + w||`` without cancellation when the norms are close."""
    a = float(np.linalg.norm(c))
    b = float(np.linalg.norm(c + w))
    if a + b == 0.0:
        return 0.0
    return -(2.0 * float(c @ w) + float(w @ w)) / (a + b)


def default_normal_iters(m):
    return max(1, min(m, 20))


def normal_step(J, c, omega, eps_v=1.0, max_iter=None, rtol=1e-14):
    """Truncated CG on the Gauss-Newton normal equations.

    One iteration reproduces the Cauchy step; more iterations only improve
    ``||c + J v||``. The Cauchy decrease condition is checked and, should
    round-off ever break it, the Cauchy step is returned instead.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if not 0 < eps_v <= 1:
        raise ValueError("eps_v must be in (0, 1]")
    J = np.ascontiguousarray(np.atleast_2d(J), dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    m, n = J.shape
    if max_iter is None:
        max_iter = default_normal_iters(m)
    Jtc = J.T @ c
    jtc_norm = float(np.linalg.norm(Jtc))
    if jtc_norm == 0.0:
        return NormalStepResult(np.zeros(n), 0.0, 0.0, 0)
    radius = omega * jtc_norm
    v, iters = _kernels.normal_cg(J, c, radius, int(max_iter), rtol)
    pred = norm_decrease(c, J @ v)
    vc, alpha_c, cauchy_red = cauchy_step(J, c, omega)
    if pred < eps_v * cauchy_red:
        v = alpha_c * vc
        pred = cauchy_red
    return NormalStepResult(v, pred, cauchy_red, iters)


def tangential_step(H, J, g, v, tol=1e-9, max_iter=None, split=None):
    """Solve the consistent KKT system for ``(u, y)``.

    ``H`` is an ``n x n`` array or ``None`` for the identity. ``u`` comes
    from projected CG in Null(J); when CG stalls and ``n`` is small enough
    the reduced system is solved densely instead. ``y`` is the minimum-norm
    multiplier.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    g = np.asarray(g, dtype=float)
    v = np.asarray(v, dtype=float)
    n = g.shape[0]
    sp = split if split is not None else range_split(J)
    Hv = v if H is None else H @ v
    rhs = np.ascontiguousarray(g + Hv)
    if max_iter is None:
        max_iter = 2 * n + 10
    rhs_norm = float(np.linalg.norm(rhs))
    Q = np.ascontiguousarray(sp.range_basis)
    iters = 0
    try:
        u, iters, _ = _kernels.projected_cg(H, Q, rhs, tol * 1e-1, int(max_iter))
    except ArithmeticError:
        u = None
    if u is not None:
        y, kkt = _multiplier_for(H, J, u, rhs, sp)
        ok = kkt <= tol * _kkt_scale(rhs_norm, sp, y)
    else:
        ok = False
    method = "cg"
    if not ok:
        method = "dense"
        if n > DENSE_FALLBACK_MAX_N:
            raise TangentialSolveError("projected CG failed to converge", residual=np.inf if u is None else kkt)
        u = _dense_tangential(H, sp.null_basis, rhs)
        y, kkt = _multiplier_for(H, J, u, rhs, sp)
        if kkt > tol * _kkt_scale(rhs_norm, sp, y):
            raise TangentialSolveError("tangential system not solved to tolerance", residual=kkt)
    null_res = float(np.linalg.norm(J @ u))
    return TangentialStepResult(u, y, kkt, null_res, iters, method)


def _kkt_scale(rhs_norm, sp, y):
    # J^T y is only accurate to eps * ||J|| * ||y||, which dominates when
    # J is nearly rank deficient and y is large
    jy = float(sp.s[0]) * float(np.linalg.norm(y)) if sp.s.size else 0.0
    return max(1.0, rhs_norm, jy)


def _multiplier_for(H, J, u, rhs, sp):
    Hu = u if H is None else H @ u
    return least_squares_multiplier(J, Hu + rhs, split=sp)


def _dense_tangential(H, Z, rhs):
    if Z.shape[1] == 0:
        return np.zeros(rhs.shape[0])
    HZ = Z if H is None else H @ Z
    red = Z.T @ HZ
    w = np.linalg.solve(red, -(Z.T @ rhs))
    return Z @ w
