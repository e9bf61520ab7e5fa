import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from stochsqp import stepcore
from stochsqp._backend import available_backends

from conftest import random_jacobian, random_spd


def dense_tangential(H, J, g, v):
    """Reduced-space solve with a scipy null-space basis."""
    Z = scipy.linalg.null_space(J, rcond=1e-10)
    if Z.shape[1] == 0:
        return np.zeros_like(g)
    Hm = np.eye(len(g)) if H is None else H
    w = np.linalg.solve(Z.T @ Hm @ Z, -Z.T @ (g + Hm @ v))
    return Z @ w


def system(seed, rank_deficient=True):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 31))
    m = int(rng.integers(1, n + 1))
    rank = int(rng.integers(1, min(m, n) + 1)) if rank_deficient else min(m, n)
    J = random_jacobian(rng, m, n, rank)
    return rng, J, rng.standard_normal(m), rng.standard_normal(n)


class TestRangeSplit:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scipy_null_space(self, seed):
        _, J, _, _ = system(seed)
        Z = stepcore.nullspace_basis(J)
        Zs = scipy.linalg.null_space(J, rcond=1e-10)
        assert Z.shape == Zs.shape
        np.testing.assert_allclose(Z @ Z.T, Zs @ Zs.T, atol=1e-10)

    def test_duplicated_row_rank(self):
        J = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0]])
        assert stepcore.range_split(J).rank == 1

    def test_zero_jacobian(self):
        sp = stepcore.range_split(np.zeros((2, 3)))
        assert sp.rank == 0 and sp.null_basis.shape == (3, 3)


class TestLeastSquaresMultiplier:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_lstsq(self, seed):
        rng, J, _, g = system(seed)
        y, res = stepcore.least_squares_multiplier(J, g)
        y_ref = np.linalg.lstsq(J.T, -g, rcond=1e-10)[0]
        np.testing.assert_allclose(y, y_ref, atol=1e-9)
        assert res == pytest.approx(np.linalg.norm(g + J.T @ y_ref), abs=1e-10)

    def test_gradient_in_range_gives_zero_residual(self):
        J = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        y, res = stepcore.least_squares_multiplier(J, np.array([2.0, 0.0, 0.0]))
        assert res < 1e-15
        np.testing.assert_allclose(y, [-1.0, -1.0])


class TestCauchy:
    def test_closed_form(self):
        J = np.array([[2.0, 0.0]])
        c = np.array([1.0])
        vc, alpha, red = stepcore.cauchy_step(J, c, omega=10.0)
        np.testing.assert_allclose(vc, [-2.0, 0.0])
        assert alpha == pytest.approx(0.25)
        assert red == pytest.approx(1.0)

    def test_radius_limits(self):
        J = np.array([[2.0, 0.0]])
        _, alpha, red = stepcore.cauchy_step(J, np.array([1.0]), omega=0.1)
        assert alpha == 0.1
        assert red == pytest.approx(1.0 - abs(1.0 - 0.4))

    def test_stationary_violation(self):
        vc, alpha, red = stepcore.cauchy_step(np.array([[1.0, 0.0], [1.0, 0.0]]),
                                              np.array([1.0, -1.0]), omega=3.0)
        np.testing.assert_array_equal(vc, 0.0)
        assert red == 0.0


class TestNormalStep:
    @pytest.mark.parametrize("seed", range(20))
    def test_interior_matches_pseudoinverse(self, backend, seed):
        _, J, c, _ = system(seed)
        ns = stepcore.normal_step(J, c, omega=1e2)
        np.testing.assert_allclose(ns.v, -np.linalg.pinv(J, rcond=1e-10) @ c, atol=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_boundary_step(self, backend, seed):
        _, J, c, _ = system(seed)
        omega = 0.05
        ns = stepcore.normal_step(J, c, omega)
        radius = omega * np.linalg.norm(J.T @ c)
        v_ls = np.linalg.pinv(J, rcond=1e-10) @ c
        if np.linalg.norm(v_ls) > radius:
            assert np.linalg.norm(ns.v) == pytest.approx(radius, rel=1e-10)
        assert np.linalg.norm(ns.v) <= radius * (1 + 1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_in_range_and_cauchy_decrease(self, backend, seed):
        _, J, c, _ = system(seed)
        for omega in (1e-2, 1.0, 1e2):
            ns = stepcore.normal_step(J, c, omega)
            Z = scipy.linalg.null_space(J, rcond=1e-10)
            assert np.linalg.norm(Z.T @ ns.v) <= 1e-10 * max(1.0, np.linalg.norm(ns.v))
            assert ns.predicted_reduction >= ns.cauchy_reduction - 1e-13

    @pytest.mark.parametrize("seed", range(5))
    def test_stays_in_range_near_infeasible_stationary_point(self, backend, seed):
        # ||J^T c|| ~ 1e-7 while ||c|| ~ 1: CG must stop at the round-off floor
        rng = np.random.default_rng(seed)
        J = random_jacobian(rng, 6, 20, rank=2)
        U, _, _ = np.linalg.svd(J)
        c = U[:, 2:] @ rng.standard_normal(4) + 1e-7 * U[:, :2] @ rng.standard_normal(2)
        v = stepcore.normal_step(J, c, 1e2).v
        Q = stepcore.range_split(J).range_basis
        assert np.linalg.norm(v - Q @ (Q.T @ v)) <= 1e-14 * np.linalg.norm(c)
        np.testing.assert_allclose(v, -np.linalg.pinv(J, rcond=1e-10) @ c, rtol=1e-6, atol=1e-15)

    def test_zero_when_jtc_vanishes(self):
        J = np.array([[1.0, 0.0], [1.0, 0.0]])
        ns = stepcore.normal_step(J, np.array([1.0, -1.0]), 1e2)
        np.testing.assert_array_equal(ns.v, 0.0)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_reduction_monotone_in_iterations(self, seed):
        _, J, c, _ = system(seed)
        reds = [stepcore.normal_step(J, c, 0.5, max_iter=k).predicted_reduction for k in range(1, 8)]
        assert all(b >= a - 1e-12 for a, b in zip(reds, reds[1:]))

    @pytest.mark.parametrize("kw", [{"omega": 0.0}, {"omega": 1.0, "eps_v": 0.0}, {"omega": 1.0, "eps_v": 2.0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            stepcore.normal_step(np.eye(2), np.ones(2), **kw)


class TestTangentialStep:
    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("identity", [True, False])
    def test_matches_dense_oracle(self, backend, seed, identity):
        rng, J, c, g = system(seed)
        H = None if identity else random_spd(rng, J.shape[1])
        v = stepcore.normal_step(J, c, 1e2).v
        ts = stepcore.tangential_step(H, J, g, v)
        np.testing.assert_allclose(ts.u, dense_tangential(H, J, g, v), atol=1e-6)
        assert ts.nullspace_residual <= 1e-10
        assert ts.method == "cg"

    def test_nearly_rank_deficient_with_large_multiplier(self, backend):
        # sigma_min = 3e-7 and ||v|| ~ 700 give ||y|| ~ 1e9
        rng = np.random.default_rng(3)
        U, _ = np.linalg.qr(rng.standard_normal((11, 11)))
        V, _ = np.linalg.qr(rng.standard_normal((14, 14)))
        s = np.append(np.linspace(6.0, 1.5, 10), 3e-7)
        J = U @ np.diag(s) @ V[:11]
        v = 700.0 * V[10]
        g = rng.standard_normal(14)
        ts = stepcore.tangential_step(None, J, g, v)
        np.testing.assert_allclose(ts.u, dense_tangential(None, J, g, v), atol=1e-6)

    def test_small_example(self):
        ts = stepcore.tangential_step(None, np.array([[1.0, 0.0]]), np.array([1.0, 1.0]), np.zeros(2))
        np.testing.assert_allclose(ts.u, [0.0, -1.0], atol=1e-14)
        np.testing.assert_allclose(ts.y, [-1.0], atol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_orthogonal_decomposition(self, seed):
        _, J, c, g = system(seed)
        v = stepcore.normal_step(J, c, 1e2).v
        u = stepcore.tangential_step(None, J, g, v).u
        d = v + u
        assert abs(v @ u) <= 1e-8 * np.linalg.norm(v) * np.linalg.norm(u) + 1e-300
        assert d @ d == pytest.approx(v @ v + u @ u, rel=1e-8)

    def test_kkt_residual_small(self):
        rng, J, c, g = system(3)
        H = random_spd(rng, J.shape[1])
        v = stepcore.normal_step(J, c, 1e2).v
        ts = stepcore.tangential_step(H, J, g, v)
        assert np.linalg.norm(H @ ts.u + g + H @ v + J.T @ ts.y) <= 1e-8 * max(1, np.linalg.norm(g))

    def test_full_rank_square_gives_zero(self):
        rng = np.random.default_rng(0)
        J = random_jacobian(rng, 4, 4)
        ts = stepcore.tangential_step(None, J, rng.standard_normal(4), np.zeros(4))
        np.testing.assert_allclose(ts.u, 0.0, atol=1e-12)

    def test_dense_fallback_on_indefinite(self):
        # CG meets negative curvature; the small reduced system is solved directly
        H = np.diag([1.0, -1.0, 2.0])
        J = np.array([[1.0, 0.0, 0.0]])
        g = np.array([0.0, 1.0, 1.0])
        ts = stepcore.tangential_step(H, J, g, np.zeros(3))
        np.testing.assert_allclose(ts.u, [0.0, 1.0, -0.5], atol=1e-12)
        assert ts.method == "dense"

    def test_large_indefinite_raises(self):
        n = stepcore.DENSE_FALLBACK_MAX_N + 1
        H = np.eye(n)
        H[1, 1] = -1.0
        J = np.zeros((1, n))
        J[0, 0] = 1.0
        g = np.zeros(n)
        g[1] = 1.0
        with pytest.raises(stepcore.TangentialSolveError):
            stepcore.tangential_step(H, J, g, np.zeros(n))


class TestKernels:
    """The compiled kernels and the NumPy fallback agree."""

    @pytest.fixture
    def pair(self):
        mods = available_backends()
        if len(mods) < 2:
            pytest.skip("compiled kernels not built")
        return mods["python"], mods["cython"]

    @pytest.mark.parametrize("seed", range(10))
    def test_normal_cg(self, pair, seed):
        _, J, c, _ = system(seed)
        J = np.ascontiguousarray(J)
        for radius in (0.01, 1.0, 1e3):
            a = pair[0].normal_cg(J, c, radius, 20, 1e-14)
            b = pair[1].normal_cg(J, c, radius, 20, 1e-14)
            np.testing.assert_allclose(a[0], b[0], atol=1e-11)
            assert a[1] == b[1]

    @pytest.mark.parametrize("seed", range(10))
    def test_projected_cg(self, pair, seed):
        rng, J, _, g = system(seed)
        Q = np.ascontiguousarray(stepcore.range_split(J).range_basis)
        H = random_spd(rng, J.shape[1])
        for Hm in (None, H):
            a = pair[0].projected_cg(Hm, Q, g, 1e-12, 100)
            b = pair[1].projected_cg(Hm, Q, g, 1e-12, 100)
            np.testing.assert_allclose(a[0], b[0], atol=1e-10)

    def test_logistic_grad(self, pair, logistic_linear):
        p = logistic_linear
        x = np.random.default_rng(0).standard_normal(14)
        rows = np.array([0, 5, 17, 689], dtype=np.intp)
        np.testing.assert_allclose(pair[0].logistic_grad_rows(p.X, p.y, x, rows),
                                   pair[1].logistic_grad_rows(p.X, p.y, x, rows), rtol=1e-12)
