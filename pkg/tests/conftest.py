import numpy as np
import pytest

from stochsqp import stepcore
from stochsqp._backend import available_backends
from stochsqp.problems import FunctionProblem, load_dataset, make_logistic_problem

BACKENDS = sorted(available_backends())


@pytest.fixture(scope="session")
def australian():
    return load_dataset("australian")


@pytest.fixture(scope="session")
def logistic_linear(australian):
    return make_logistic_problem(australian, 10, with_norm_constraint=False, seed=0)


@pytest.fixture(scope="session")
def logistic_norm(australian):
    return make_logistic_problem(australian, 10, with_norm_constraint=True, seed=0)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route stepcore through each available kernel module in turn."""
    mod = available_backends()[request.param]
    monkeypatch.setattr(stepcore, "_kernels", mod)
    return request.param


def random_jacobian(rng, m, n, rank=None, smin=0.5, smax=2.0):
    """``m x n`` matrix with prescribed rank and nonzero singular values in [smin, smax]."""
    k = min(m, n)
    rank = k if rank is None else rank
    U, _ = np.linalg.qr(rng.standard_normal((m, m)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.zeros(k)
    s[:rank] = rng.uniform(smin, smax, rank)
    return (U[:, :k] * s) @ V[:, :k].T


def random_spd(rng, n, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * rng.uniform(lo, hi, n)) @ Q.T


def kkt_point_problem(n=4):
    """min 0.5||x||^2 s.t. x_0 = 1 (twice). The solution is e_0."""
    def cons(x):
        return np.array([x[0] - 1.0, x[0] - 1.0])

    def jac(x):
        J = np.zeros((2, n))
        J[:, 0] = 1.0
        return J

    return FunctionProblem(n, 2, lambda x: 0.5 * float(x @ x), lambda x: x.copy(), cons, jac,
                           name="kkt-point")


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record ``(label, ok, detail)`` for the acceptance summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
