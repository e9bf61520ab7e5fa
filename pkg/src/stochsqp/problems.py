"""Problem definitions, builders, LIBSVM ingestion and gradient oracles.

A problem is ``min f(x) s.t. c(x) = 0`` where only stochastic estimates of
``grad f`` reach the solver. Problem objects are immutable after
construction; all randomness at solve time lives in :class:`GradientOracle`.
"""

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class ParseError(ValueError):
    """Malformed LIBSVM line."""


class InputError(ValueError):
    """Well-formed input that violates a precondition (e.g. labels)."""


class ProblemInstance:
    """Base class: subclasses provide f, grad f, c and J.

    Attributes
    ----------
    n, m : int
        Decision dimension and number of constraints.
    name : str
    num_samples : int or None
        Size of the finite sum behind ``f`` when minibatching is supported.
    """

    name = "problem"
    num_samples = None

    def __init__(self, n, m):
        self.n = int(n)
        self.m = int(m)

    def objective(self, x):
        raise NotImplementedError

    def true_gradient(self, x):
        raise NotImplementedError

    def constraints(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def minibatch_gradient(self, x, rows):
        raise TypeError(f"{self.name} does not support minibatch gradients")

    # analytic Lipschitz bounds (L, Gamma) when the builder knows them
    lipschitz_bounds = None

    # affine constraints as (A, b) with c(x) = A x - b, or None
    affine = None


class FunctionProblem(ProblemInstance):
    """Problem assembled from plain callables (handy in tests)."""

    def __init__(self, n, m, objective, gradient, constraints, jacobian, name="function"):
        super().__init__(n, m)
        self._f = objective
        self._g = gradient
        self._c = constraints
        self._J = jacobian
        self.name = name

    def objective(self, x):
        return float(self._f(x))

    def true_gradient(self, x):
        return np.asarray(self._g(x), dtype=float)

    def constraints(self, x):
        return np.asarray(self._c(x), dtype=float).reshape(self.m)

    def jacobian(self, x):
        return np.asarray(self._J(x), dtype=float).reshape(self.m, self.n)


# --------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class Dataset:
    """Binary classification data.

    ``features`` is a CSR matrix with one row per data point (N x n);
    ``labels`` are in {-1, +1}.
    """

    features: sp.csr_matrix
    labels: np.ndarray
    name: str = "dataset"

    @property
    def n(self):
        return self.features.shape[1]

    @property
    def N(self):
        return self.features.shape[0]


def parse_libsvm(path, expected_dim=None, name=None):
    """Read a LIBSVM text file into a :class:`Dataset`.

    Labels ``0/1`` are mapped to ``-1/+1``; anything that is not two-valued
    raises :class:`InputError`. Indices must be 1-based and strictly
    increasing within a line.
    """
    path = Path(path)
    labels = []
    indptr = [0]
    indices = []
    values = []
    max_idx = 0
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise ParseError(f"{path}, line {lineno}: bad label {parts[0]!r}") from None
            prev = 0
            for tok in parts[1:]:
                idx_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"{path}, line {lineno}: bad feature {tok!r}") from None
                if idx <= prev:
                    raise ParseError(f"{path}, line {lineno}: indices must be 1-based and increasing")
                prev = idx
                indices.append(idx - 1)
                values.append(val)
            max_idx = max(max_idx, prev)
            indptr.append(len(indices))
    if not labels:
        raise InputError(f"{path}: no data")
    if expected_dim is not None:
        if max_idx > expected_dim:
            raise ParseError(f"{path}: feature index {max_idx} exceeds expected_dim={expected_dim}")
        n = int(expected_dim)
    else:
        n = max_idx
    y = _binary_labels(np.array(labels), path)
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), n),
    )
    return Dataset(X, y, name or path.name)


def _binary_labels(raw, path):
    vals = set(np.unique(raw).tolist())
    if vals <= {-1.0, 1.0}:
        return raw.astype(float)
    if vals <= {0.0, 1.0}:
        return np.where(raw > 0, 1.0, -1.0)
    # e.g. {1, 2} as in some LIBSVM sets is still not accepted: ambiguous sign
    raise InputError(f"{path}: labels must be binary in {{-1,+1}} or {{0,1}}, got {sorted(vals)[:5]}")


def bundled_dataset(name):
    """Load a dataset shipped in ``stochsqp/data``."""
    ref = resources.files("stochsqp") / "data" / name
    with resources.as_file(ref) as p:
        return parse_libsvm(p, name=name)


def load_dataset(spec):
    """``spec`` is a path, or the name of a bundled dataset."""
    p = Path(spec)
    if p.exists():
        return parse_libsvm(p)
    return bundled_dataset(spec)


# --------------------------------------------------------------------------
# constrained logistic regression

class LogisticProblem(ProblemInstance):
    """Mean logistic loss subject to ``A x = b`` and optionally ``||x||^2 = 1``."""

    def __init__(self, data, A, b, with_norm_constraint):
        m = A.shape[0] + (1 if with_norm_constraint else 0)
        super().__init__(data.n, m)
        self.data = data
        self.name = data.name + ("-norm" if with_norm_constraint else "-linear")
        self.num_samples = data.N
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float).copy()
        self.with_norm_constraint = bool(with_norm_constraint)
        # dense copy: desk-scale data, and the minibatch kernel wants rows
        self.X = np.ascontiguousarray(data.features.toarray())
        self.y = np.ascontiguousarray(data.labels, dtype=float)
        if not with_norm_constraint:
            self.affine = (self.A, self.b)

    def objective(self, x):
        z = -self.y * (self.X @ x)
        return float(np.mean(np.logaddexp(0.0, z)))

    def true_gradient(self, x):
        return kernels().logistic_grad_rows(self.X, self.y, np.ascontiguousarray(x, dtype=float),
                                            np.arange(self.num_samples, dtype=np.intp))

    def minibatch_gradient(self, x, rows):
        return kernels().logistic_grad_rows(self.X, self.y, np.ascontiguousarray(x, dtype=float),
                                            np.ascontiguousarray(rows, dtype=np.intp))

    def constraints(self, x):
        c = self.A @ x - self.b
        if self.with_norm_constraint:
            c = np.append(c, x @ x - 1.0)
        return c

    def jacobian(self, x):
        if self.with_norm_constraint:
            return np.vstack([self.A, 2.0 * x])
        return self.A.copy()


def kernels():
    from stochsqp._backend import kernels as k
    return k


def make_logistic_problem(data, num_linear=10, with_norm_constraint=False, seed=0):
    """Constrained logistic regression on ``data``.

    ``num_linear`` standard-normal rows of ``A`` (and entries of ``b``) are
    drawn from ``seed``; the last row is then duplicated, giving
    ``num_linear + 1`` linear constraints.
    """
    if num_linear < 1:
        raise ValueError("num_linear must be >= 1")
    if data.N == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((num_linear, data.n))
    b = rng.standard_normal(num_linear)
    A = np.vstack([A, A[-1]])
    b = np.append(b, b[-1])
    return LogisticProblem(data, A, b, with_norm_constraint)


# --------------------------------------------------------------------------
# synthetic degenerate problems

class SyntheticProblem(ProblemInstance):
    """Separable convex objective with quadratic constraints.

    f(x) = 0.5 (x - xc)^T D (x - xc) + mu * sum(log cosh(x - xc))

    Each constraint row is ``c_i(x) = a_i^T x + 0.5 * gamma * (s_i^T x)^2 - b_i``
    (``s_i`` mostly unit vectors, zero for affine rows), so the
    Jacobian row is ``a_i + gamma (s_i^T x) s_i``. The unconstrained
    minimizer of ``f`` is ``xc``.
    """

    def __init__(self, kind, xc, D, mu, A, S, gamma, b, x_ref, name):
        super().__init__(len(xc), A.shape[0])
        self.kind = kind
        self.name = name
        self.xc = xc
        self.D = D
        self.mu = mu
        self.A = A
        self.S = S
        self.gamma = gamma
        self.b = b
        # feasible point (feasible kinds) or infeasible stationary point
        self.x_ref = x_ref
        L = float(np.max(D)) + mu
        # ||J(x) - J(y)||_2 <= gamma * max_i ||s_i|| * ||S||_2 * ||x - y||
        Gamma = gamma * float(np.max(np.linalg.norm(S, axis=1))) * float(np.linalg.norm(S, 2))
        self.lipschitz_bounds = (L, max(Gamma, 1e-8))

    def objective(self, x):
        r = x - self.xc
        return float(0.5 * r @ (self.D * r) + self.mu * np.sum(_logcosh(r)))

    def true_gradient(self, x):
        r = x - self.xc
        return self.D * r + self.mu * np.tanh(r)

    def constraints(self, x):
        sx = self.S @ x
        return self.A @ x + 0.5 * self.gamma * sx * sx - self.b

    def jacobian(self, x):
        sx = self.S @ x
        return self.A + self.gamma * sx[:, None] * self.S


def _logcosh(r):
    a = np.abs(r)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


SYNTHETIC_KINDS = ("feasible", "infeasible", "rank-deficient-everywhere")


def make_synthetic_degenerate(n, m, kind="feasible", seed=0, gamma=0.2, mu=0.1, gap=1.0):
    """Build a degenerate test problem with ``m`` constraint rows.

    All kinds end with a duplicate of their last row, so J(x) is rank
    deficient at every x.

    feasible
        ``m - 1`` independent rows plus the duplicate; ``x_ref`` is feasible.
    rank-deficient-everywhere
        Additionally row ``m - 2`` is the sum of rows 0 and 1 (needs m >= 4),
        so rank(J) <= m - 2 everywhere. ``x_ref`` is feasible.
    infeasible
        The last three rows are ``psi, psi + gap, psi + gap`` with affine
        ``psi(x) = p^T (x - x_ref) - 2 gap / 3``; the remaining rows vanish at
        ``x_ref``. Then ``J^T c = 0`` at ``x_ref`` while
        ``||c||_inf = 2 gap / 3`` (needs m >= 3). The objective is centred
        at ``x_ref`` too, so ``x_ref`` minimizes the merit function for
        every merit parameter.
    """
    if m > n:
        raise ValueError("need m <= n")
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}")
    if m < 2 or (kind == "infeasible" and m < 3) or (kind == "rank-deficient-everywhere" and m < 4):
        raise ValueError(f"m={m} too small for kind={kind}")
    rng = np.random.default_rng(seed)
    xc = rng.standard_normal(n)
    D = rng.uniform(1.0, 2.0, n)
    x_ref = rng.standard_normal(n) / np.sqrt(n)

    def unit_rows(k):
        S = rng.standard_normal((k, n))
        return S / np.linalg.norm(S, axis=1, keepdims=True)

    if kind == "infeasible":
        xc = x_ref.copy()
        k = m - 3
        A = rng.standard_normal((k, n)) / np.sqrt(n)
        S = unit_rows(k)
        b = A @ x_ref + 0.5 * gamma * (S @ x_ref) ** 2
        p = rng.standard_normal(n) / np.sqrt(n)
        # psi rows are affine: zero curvature rows in S
        A = np.vstack([A, p, p, p])
        S = np.vstack([S, np.zeros((3, n))])
        psi0 = p @ x_ref + 2.0 * gap / 3.0
        b = np.concatenate([b, [psi0, psi0 - gap, psi0 - gap]])
    else:
        k = m - 1
        A = rng.standard_normal((k, n)) / np.sqrt(n)
        S = unit_rows(k)
        if kind == "rank-deficient-everywhere":
            # c_{k-1} = c_0 + c_1 identically: shared curvature direction,
            # and (s^T x)^2 + (s^T x)^2 = (sqrt(2) s^T x)^2
            S[1] = S[0]
            A[k - 1] = A[0] + A[1]
            S[k - 1] = np.sqrt(2.0) * S[0]
        b = A @ x_ref + 0.5 * gamma * (S @ x_ref) ** 2
        A = np.vstack([A, A[-1]])
        S = np.vstack([S, S[-1]])
        b = np.append(b, b[-1])
    name = f"synthetic-{kind}-n{n}-m{m}-s{seed}"
    return SyntheticProblem(kind, xc, D, mu, A, S, gamma, b, x_ref, name)


# --------------------------------------------------------------------------
# gradient oracles

@dataclass
class GradientOracle:
    """Stochastic gradient source confined to one run.

    mode
        ``"exact"``, ``"gaussian"`` (``g = grad f + sqrt(noise) z``) or
        ``"minibatch"`` (``batch`` points drawn without replacement).
    """

    mode: str = "exact"
    noise: float = 0.0
    batch: int = 1
    seed: int | np.random.SeedSequence | None = 0
    nominal_variance_bound: float | None = None
    calls: int = field(default=0, init=False)

    def __post_init__(self):
        if self.mode not in ("exact", "gaussian", "minibatch"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.mode == "minibatch" and self.batch < 1:
            raise ValueError("batch must be >= 1")
        self.rng = np.random.default_rng(self.seed)
        if self.nominal_variance_bound is None and self.mode == "gaussian":
            self.nominal_variance_bound = self.noise

    @property
    def deterministic(self):
        return self.mode == "exact" or (self.mode == "gaussian" and self.noise == 0.0)

    def describe(self):
        if self.mode == "gaussian":
            return f"noise={self.noise:g}"
        if self.mode == "minibatch":
            return f"batch={self.batch}"
        return "exact"


def sample_gradient(problem, oracle, x):
    """Draw one stochastic gradient estimate at ``x``."""
    oracle.calls += 1
    if oracle.mode == "exact":
        return problem.true_gradient(x)
    if oracle.mode == "gaussian":
        g = problem.true_gradient(x)
        if oracle.noise == 0.0:
            return g
        return g + np.sqrt(oracle.noise) * oracle.rng.standard_normal(problem.n)
    N = problem.num_samples
    if N is None:
        raise TypeError(f"{problem.name} has no finite-sum structure for minibatching")
    b = min(oracle.batch, N)
    if b == N:
        rows = np.arange(N, dtype=np.intp)
    else:
        rows = oracle.rng.choice(N, size=b, replace=False).astype(np.intp)
    return problem.minibatch_gradient(x, rows)
