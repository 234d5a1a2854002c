import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
import scipy.linalg

from lqrgap.errors import InstabilityError, RankError, SpectrumError
from lqrgap.instances import make_opt_instance
from lqrgap.matrix_equations import (
    clyap,
    dare_residual,
    dare_zero_r,
    dlyap,
    spectral_radius,
    stationary_covariance,
)


def stable_matrix(rng, n, radius):
    F = rng.standard_normal((n, n))
    return F * (radius / spectral_radius(F))


def psd(rng, n):
    G = rng.standard_normal((n, n))
    return G @ G.T


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9, rel=1e-9)

    def test_nilpotent(self):
        assert spectral_radius([[0.0, 1.0], [0.0, 0.0]]) == 0.0

    def test_scaled_rotation(self):
        th = 0.37
        R = 0.7 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert spectral_radius(R) == pytest.approx(0.7, rel=1e-9)


class TestDlyap:
    def test_scalar(self):
        assert dlyap([[0.5]], [[1.0]]).P[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-14)

    def test_zero_dynamics(self):
        Q = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(dlyap(np.zeros((2, 2)), Q).P, Q)

    def test_series_oracle_n6(self):
        rng = np.random.default_rng(0)
        F = stable_matrix(rng, 6, 0.8)
        M = psd(rng, 6)
        series = np.zeros((6, 6))
        Fk = np.eye(6)
        for _ in range(201):
            series += Fk.T @ M @ Fk
            Fk = Fk @ F
        np.testing.assert_allclose(dlyap(F, M).P, series, atol=1e-8 * np.abs(series).max())

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        F = stable_matrix(rng, 5, 0.9)
        M = psd(rng, 5)
        # scipy solves a X a^H - X + q = 0, so pass a = F^T
        ref = scipy.linalg.solve_discrete_lyapunov(F.T, M)
        np.testing.assert_allclose(dlyap(F, M).P, ref, rtol=1e-9, atol=1e-10)

    def test_doubling_matches_direct(self):
        rng = np.random.default_rng(2)
        F = stable_matrix(rng, 5, 0.95)
        M = psd(rng, 5)
        np.testing.assert_allclose(dlyap(F, M, method="doubling").P, dlyap(F, M).P, rtol=1e-9)

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError):
            dlyap([[1.0]], [[1.0]])

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
    def test_residual_and_psd(self, n, seed):
        rng = np.random.default_rng(seed)
        F = stable_matrix(rng, n, rng.uniform(0.05, 0.95))
        M = psd(rng, n)
        sol = dlyap(F, M)
        assert sol.residual <= 1e-10 * max(1.0, np.linalg.norm(M))
        assert np.linalg.eigvalsh(sol.P)[0] >= -1e-10

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
    def test_monotone_in_rhs(self, n, seed):
        rng = np.random.default_rng(seed)
        F = stable_matrix(rng, n, 0.8)
        M1 = psd(rng, n)
        M2 = M1 + psd(rng, n)
        gap = dlyap(F, M2).P - dlyap(F, M1).P + 1e-9 * np.eye(n)
        assert np.linalg.eigvalsh(gap)[0] >= 0.0


class TestStationaryCovariance:
    def test_scalar(self):
        assert stationary_covariance([[0.5]], [[1.0]])[0, 0] == pytest.approx(4.0 / 3.0)

    def test_zero_dynamics(self):
        S = np.diag([1.0, 2.0])
        np.testing.assert_allclose(stationary_covariance(np.zeros((2, 2)), S), S)

    def test_driven_opt_instance(self):
        inst = make_opt_instance(4, 2, 0.5, seed=3, sigma_w=0.7, sigma_u=1.3)
        sys = inst.system
        S = sys.sigma_u**2 * sys.B @ sys.B.T + sys.sigma_w**2 * np.eye(4)
        P = stationary_covariance(sys.A, S)
        assert np.linalg.norm(sys.A @ P @ sys.A.T - P + S) <= 1e-10


class TestClyap:
    def test_identity(self):
        np.testing.assert_allclose(clyap(np.eye(3), 2 * np.eye(3)), np.eye(3))

    def test_scalar(self):
        assert clyap([[3.0]], [[1.5]])[0, 0] == pytest.approx(0.25)

    def test_residual_random(self):
        rng = np.random.default_rng(4)
        H = psd(rng, 5) + 0.1 * np.eye(5)
        g = rng.standard_normal(5)
        S = np.outer(g, g)
        X = clyap(H, S)
        assert np.linalg.norm(H @ X + X @ H - S) <= 1e-10 * max(1.0, np.linalg.norm(S))
        assert np.linalg.eigvalsh(X)[0] >= -1e-12

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        H = psd(rng, 4) + np.eye(4)
        S = psd(rng, 4)
        np.testing.assert_allclose(clyap(H, S), scipy.linalg.solve_continuous_lyapunov(H, S), rtol=1e-9)

    def test_indefinite_raises(self):
        with pytest.raises(SpectrumError):
            clyap(np.diag([1.0, -1.0]), np.eye(2))


class TestDare:
    def test_opt_family_fixed_point(self):
        for seed in range(10):
            inst = make_opt_instance(5, 3, 0.6, seed)
            sol = dare_zero_r(inst.system.A, inst.system.B, np.eye(5))
            np.testing.assert_allclose(sol.P, np.eye(5), atol=1e-8)
            np.testing.assert_allclose(sol.K, inst.K_star, atol=1e-8)
            assert np.max(np.abs(sol.closed_loop)) <= 1e-8

    def test_zero_dynamics(self):
        B = np.array([[1.0], [2.0], [0.5]])
        sol = dare_zero_r(np.zeros((3, 3)), B, np.eye(3))
        np.testing.assert_allclose(sol.P, np.eye(3))
        np.testing.assert_allclose(sol.K, np.zeros((1, 3)))

    def test_contractive_bound(self):
        rng = np.random.default_rng(6)
        A = rng.standard_normal((4, 4))
        A *= 0.6 / np.linalg.norm(A, 2)
        sol = dare_zero_r(A, np.eye(4), np.eye(4))
        assert dare_residual(sol.P, A, np.eye(4), np.eye(4)) <= 1e-8
        assert np.linalg.norm(sol.P, 2) <= 1.0 / (1.0 - 0.36) + 1e-12
        assert np.linalg.eigvalsh(sol.P - np.eye(4))[0] >= -1e-10

    def test_underactuated_riccati_residual(self):
        rng = np.random.default_rng(7)
        A = rng.standard_normal((4, 4))
        A *= 0.7 / spectral_radius(A)
        B = rng.standard_normal((4, 2))
        sol = dare_zero_r(A, B, np.eye(4))
        assert dare_residual(sol.P, A, B, np.eye(4)) <= 1e-8
        assert spectral_radius(sol.closed_loop) < 1.0

    def test_rank_deficient_B(self):
        with pytest.raises(RankError):
            dare_zero_r(0.5 * np.eye(3), np.zeros((3, 1)), np.eye(3))
