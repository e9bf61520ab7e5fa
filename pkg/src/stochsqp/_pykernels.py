"""Pure NumPy versions of the hot loops.

Signatures mirror ``_ckernels`` exactly so ``stochsqp._backend`` can swap
one for the other. All arrays are float64 and C-contiguous.
"""

import math

import numpy as np

# J^T r cannot be formed more accurately than about eps * ||J|| * ||r||
ROUNDOFF = 10.0 * np.finfo(float).eps


def normal_cg(J, c, radius, max_iter, rtol):
    """Truncated CGLS for ``min 0.5*||c + J v||^2`` s.t. ``||v|| <= radius``.

    Starts from ``v = 0`` so every iterate stays in Range(J^T). Returns
    ``(v, iterations)``.
    """
    n = J.shape[1]
    v = np.zeros(n)
    r = -c.copy()
    s = J.T @ r
    gamma = float(s @ s)
    if gamma == 0.0 or max_iter < 1:
        return v, 0
    stop = rtol * math.sqrt(gamma)
    floor = ROUNDOFF * math.sqrt(float(np.sum(J * J)))
    p = s.copy()
    it = 0
    while it < max_iter:
        it += 1
        q = J @ p
        qq = float(q @ q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        if it == 1:
            # first step: boundary is hit iff alpha >= radius/||p||, i.e. the
            # Cauchy clamp alpha <= omega; keep the same arithmetic
            limit = radius / math.sqrt(gamma)
            if alpha >= limit:
                v += limit * p
                break
        else:
            trial = v + alpha * p
            if float(trial @ trial) >= radius * radius:
                v += _to_boundary(v, p, radius) * p
                break
        v += alpha * p
        r -= alpha * q
        s = J.T @ r
        gamma_new = float(s @ s)
        # past this point s is round-off and CG would push v out of Range(J^T)
        if math.sqrt(gamma_new) <= max(stop, floor * float(np.linalg.norm(r))):
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return v, it


def _to_boundary(v, p, radius):
    # positive root of ||v + t p|| = radius
    pp = float(p @ p)
    vp = float(v @ p)
    vv = float(v @ v)
    disc = vp * vp + pp * (radius * radius - vv)
    return (-vp + math.sqrt(max(disc, 0.0))) / pp


def projected_cg(H, Q, rhs, rtol, max_iter):
    """Projected CG for ``min rhs^T u + 0.5 u^T H u`` over ``u in Null(J)``.

    ``Q`` holds an orthonormal basis of Range(J^T) (n x r); the projector is
    ``I - Q Q^T``. ``H`` of ``None`` means the identity. Returns
    ``(u, iterations, projected_residual_norm)``; raises ``ArithmeticError``
    when H has nonpositive curvature on the null space.
    """
    n = rhs.shape[0]
    u = np.zeros(n)
    z = _project(Q, rhs)
    r = z
    rz = float(z @ z)
    res = math.sqrt(max(rz, 0.0))
    stop = rtol * max(1.0, res)
    if res <= stop:
        return u, 0, res
    p = -z
    it = 0
    while it < max_iter:
        it += 1
        Hp = p if H is None else H @ p
        pHp = float(p @ Hp)
        if pHp <= 0.0:
            raise ArithmeticError("nonpositive curvature on Null(J)")
        alpha = rz / pHp
        u += alpha * p
        r += alpha * Hp
        # keep only the projected residual; the rest belongs to J^T y
        z = _project(Q, r)
        r = z
        rz_new = float(z @ z)
        res = math.sqrt(max(rz_new, 0.0))
        if res <= stop:
            break
        p = -z + (rz_new / rz) * p
        rz = rz_new
    u = _project(Q, u)
    return u, it, res


def _project(Q, w):
    if Q.shape[1] == 0:
        return w.copy()
    return w - Q @ (Q.T @ w)


def logistic_grad_rows(X, y, w, rows):
    """Mean logistic-loss gradient over the data points ``rows``."""
    Xb = X[rows]
    yb = y[rows]
    t = -yb * (Xb @ w)
    # d/dz log(1+exp(-y z)) = -y * sigmoid(-y z)
    coef = -yb * _sigmoid(t)
    return (Xb.T @ coef) / len(rows)


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out
