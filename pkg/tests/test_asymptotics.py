import numpy as np
import pytest

from lqrgap.asymptotics import (
    dare_gain_derivative,
    dlyap_derivative,
    eval_plugin_exact,
    eval_plugin_limit,
    lstd_limit_cov,
    lstd_limit_exact,
    lstd_limit_lower,
    lstd_limit_lower_rederived,
    opt_plugin_limit,
    pg_grad_cov_at_opt,
    pg_grad_norm_at_opt,
    pg_risk_lower,
    pg_sgd_limit,
    sgd_stationary_cov,
)
from lqrgap.errors import SpectrumError
from lqrgap.instances import (
    OptInstance,
    eval_instance_from_matrix,
    make_eval_instance,
    make_opt_instance,
)
from lqrgap.kron_algebra import outer_svec, svec, sym_kron
from lqrgap.lqr_core import (
    LinearSystem,
    draw_noise,
    hessian_at_opt,
    make_rng,
    simulate,
    value_params,
)
from lqrgap.matrix_equations import dare_zero_r, dlyap, stationary_covariance
from lqrgap.policy_opt import pg_gradient

SCALAR = eval_instance_from_matrix([[0.5]])


def eval_family(n, rho=0.5):
    """Closed loop rho I (full-dimensional subspace)."""
    return make_eval_instance(n, n, rho / 2, rho / 2, seed=0)


class TestPluginEvaluation:
    def test_scalar(self):
        assert eval_plugin_limit(SCALAR).value == pytest.approx(4 * 0.25 / 0.75**3, rel=1e-12)
        assert eval_plugin_limit(SCALAR).value == pytest.approx(2.3704, abs=1e-4)

    def test_zero_closed_loop(self):
        assert eval_plugin_limit(eval_instance_from_matrix(np.zeros((3, 3)))).value == 0.0

    def test_exact_matches_bound_in_scalar_case(self):
        assert eval_plugin_exact(SCALAR).value == pytest.approx(eval_plugin_limit(SCALAR).value, rel=1e-12)

    def test_exact_matches_direct_scalar_calculus(self):
        # T Var(L_hat) -> (1 - L^2) and dP/dL = 2L / (1 - L^2)^2
        for L in (0.2, 0.5, 0.9):
            inst = eval_instance_from_matrix([[L]])
            expected = (1 - L**2) * (2 * L / (1 - L**2) ** 2) ** 2
            assert eval_plugin_exact(inst).value == pytest.approx(expected, rel=1e-10)

    def test_dimension_band(self):
        r = 0.5
        ratios = [eval_plugin_limit(eval_family(n)).value / (r**2 * n**2 / (1 - r**2) ** 3) for n in (2, 4, 8)]
        assert max(ratios) / min(ratios) <= 4.0


class TestDlyapDerivative:
    def test_zero_direction(self):
        np.testing.assert_array_equal(dlyap_derivative(0.3 * np.eye(2), np.eye(2), np.zeros((2, 2))), 0.0)

    def test_scalar(self):
        assert dlyap_derivative([[0.5]], [[1.0]], [[1.0]])[0, 0] == pytest.approx(16.0 / 9.0)

    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        L = make_eval_instance(4, 2, 0.4, 0.3, seed=1).L_star + 0.05 * rng.standard_normal((4, 4))
        M = np.eye(4) + 0.1 * np.ones((4, 4))
        h = 1e-6
        for _ in range(5):
            X = rng.standard_normal((4, 4))
            fd = (dlyap(L + h * X, M).P - dlyap(L - h * X, M).P) / (2 * h)
            D = dlyap_derivative(L, M, X)
            assert np.linalg.norm(D - fd) <= 1e-5 * np.linalg.norm(fd)


class TestLstdOperators:
    def test_scalar_operators(self):
        # A_inf = 2 Sigma^2 (1 - L^2) for the stationary Gaussian law; Sigma = 4/3
        cov = lstd_limit_cov(SCALAR)
        assert cov.A_inf[0, 0] == pytest.approx(2 * (16 / 9) * 0.75)
        assert np.trace(cov.sandwich) == pytest.approx(lstd_limit_exact(SCALAR).value)

    def test_zero_closed_loop(self):
        inst = eval_instance_from_matrix(np.zeros((2, 2)), sigma_w=0.8)
        cov = lstd_limit_cov(inst)
        S = 0.64 * np.eye(2)
        SS = sym_kron(S, S)
        sv = svec(S)
        np.testing.assert_allclose(cov.A_inf, 2 * SS, atol=1e-14)
        expected_B = 2 * 0.8**4 * np.sum(np.eye(2) ** 2) * (2 * SS + np.outer(sv, sv))
        np.testing.assert_allclose(cov.B_inf, expected_B, rtol=1e-12, atol=1e-14)

    def test_psd(self):
        for seed in range(5):
            cov = lstd_limit_cov(make_eval_instance(4, 2, 0.4, 0.3, seed=seed))
            for X in (cov.B_inf, cov.sandwich):
                np.testing.assert_allclose(X, X.T, atol=1e-10)
                assert np.linalg.eigvalsh(X)[0] >= -1e-8 * np.abs(X).max()

    def test_monte_carlo_of_defining_expectations(self):
        # Stationary x ~ N(0, Sigma), x' = L x + w; the temporal-difference
        # residual at the true weights is c(x) - lambda + phi(x')^T w - phi(x)^T w.
        inst = make_eval_instance(3, 1, 0.4, 0.3, seed=1)
        L = inst.L_star
        P = dlyap(L, inst.M).P
        S = stationary_covariance(L, np.eye(3))
        rng = np.random.default_rng(0)
        N = 10**6
        x = rng.standard_normal((N, 3)) @ np.linalg.cholesky(S).T
        xn = x @ L.T + rng.standard_normal((N, 3))
        phi, phin = outer_svec(x), outer_svec(xn)
        w = svec(P)
        eps = np.sum(x * x, axis=1) - np.trace(P) + phin @ w - phi @ w
        A_mc = phi.T @ (phi - phin) / N
        B_mc = (phi * eps[:, None] ** 2).T @ phi / N
        cov = lstd_limit_cov(inst)
        # entrywise errors relative to the operator scale (near-zero entries
        # have no meaningful relative error at this sample size)
        assert np.max(np.abs(A_mc - cov.A_inf)) <= 0.02 * np.max(np.abs(cov.A_inf))
        assert np.max(np.abs(B_mc - cov.B_inf)) <= 0.02 * np.max(np.abs(cov.B_inf))


class TestLstdBounds:
    def test_scalar_lower_bound_value(self):
        assert lstd_limit_lower(SCALAR).value == pytest.approx(4 * 2.370370370 + 4.7407407, rel=1e-6)
        assert lstd_limit_lower(SCALAR).value == pytest.approx(14.222, abs=1e-3)

    def test_zero_closed_loop(self):
        inst = eval_instance_from_matrix(np.zeros((2, 2)))
        assert lstd_limit_lower(inst).value == 0.0
        assert lstd_limit_lower_rederived(inst).value == 0.0

    def test_formula_level_dominance(self):
        for inst in [SCALAR] + [make_eval_instance(4, 2, 0.4, 0.3, seed=s) for s in range(3)]:
            assert lstd_limit_lower(inst).value >= 4 * eval_plugin_limit(inst).value

    def test_exact_trace_dominates_lower_bound(self):
        for inst in [SCALAR, eval_family(2), make_eval_instance(4, 2, 0.4, 0.3, seed=0)]:
            assert lstd_limit_exact(inst).value >= lstd_limit_lower(inst).value - 1e-9

    def test_exact_trace_dominates_rederived_bound(self):
        for inst in [SCALAR, eval_family(2), eval_family(4), make_eval_instance(4, 2, 0.4, 0.3, seed=0)]:
            assert lstd_limit_exact(inst).value >= lstd_limit_lower_rederived(inst).value - 1e-9

    def test_exact_trace_scalar(self):
        # Hand reduction for L = 0.5, sigma_w = 1: A = 8/3, B = 4(C S 3 S^2 + 4 C S^3 + 8 C S^3) + 6 P^2 S^2
        Sg, P, L = 4 / 3, 4 / 3, 0.5
        C = L * P * P * L
        B = 4 * (3 * C * Sg**3 + 4 * C * Sg**3 + 8 * C * Sg**3) + 6 * P**2 * Sg**2
        assert lstd_limit_exact(SCALAR).value == pytest.approx(B / (8 / 3) ** 2, rel=1e-12)

    def test_dimension_band(self):
        r = 0.5
        ratios = [lstd_limit_lower(eval_family(n)).value / (r**2 * n**3 / (1 - r**2) ** 3) for n in (2, 4, 8)]
        assert max(ratios) / min(ratios) <= 4.0


def opt_pipeline_gain(A, B):
    return dare_zero_r(A, B, np.eye(A.shape[0])).K


class TestDareGainDerivative:
    def test_zero(self):
        inst = make_opt_instance(4, 2, 0.5, seed=0)
        np.testing.assert_array_equal(dare_gain_derivative(inst, np.zeros((4, 4)), np.zeros((4, 2))), 0.0)

    def test_dynamics_direction_only(self):
        inst = make_opt_instance(4, 2, 0.5, seed=0)
        dA = np.random.default_rng(0).standard_normal((4, 4))
        np.testing.assert_allclose(dare_gain_derivative(inst, dA, np.zeros((4, 2))),
                                   -np.linalg.pinv(inst.system.B) @ dA, atol=1e-14)

    def test_finite_differences(self):
        inst = make_opt_instance(4, 2, 0.5, seed=1)
        A, B = inst.system.A, inst.system.B
        rng = np.random.default_rng(2)
        h = 1e-5
        for _ in range(5):
            dA, dB = rng.standard_normal((4, 4)), rng.standard_normal((4, 2))
            fd = (opt_pipeline_gain(A + h * dA, B + h * dB) - opt_pipeline_gain(A - h * dA, B - h * dB)) / (2 * h)
            D = dare_gain_derivative(inst, dA, dB)
            assert np.linalg.norm(D - fd) <= 1e-4 * np.linalg.norm(fd)


def scalar_opt(rho=0.5, sigma_w=1.0, sigma_u=1.0):
    sys = LinearSystem([[rho]], [[rho]], sigma_w, sigma_u)
    return OptInstance(system=sys, U_star=np.eye(1), K_star=-np.eye(1), rho=rho)


class TestOptPlugin:
    def test_scalar(self):
        assert opt_plugin_limit(scalar_opt(), 10).value == pytest.approx(1.44)

    def test_diagonal_closed_form(self):
        rho, sw, su, n, T = 0.6, 0.8, 1.3, 3, 7
        inst = make_opt_instance(n, n, rho, seed=0, sigma_w=sw, sigma_u=su)
        Pinf = (su**2 * rho**2 + sw**2) / (1 - rho**2)
        expected = sw**4 * (T - 1) / T * (n / Pinf + n / su**2) * n
        assert opt_plugin_limit(inst, T).value == pytest.approx(expected, rel=1e-12)

    def test_decreasing_in_exploration(self):
        inst = make_opt_instance(4, 2, 0.5, seed=3)
        vals = []
        for su in (0.5, 1.0, 2.0, 4.0, 8.0):
            sys = LinearSystem(inst.system.A, inst.system.B, 1.0, su)
            vals.append(opt_plugin_limit(OptInstance(sys, inst.U_star, inst.K_star, 0.5), 10).value)
        assert np.all(np.diff(vals) < 0)


class TestPolicyGradientPredictors:
    INST = make_opt_instance(4, 2, 0.5, seed=0)

    def test_advantage_family_algebra(self):
        d, rho, n, T = 2, 0.5, 4, 10
        beta = d * rho**2 + n
        expected = (T - 1) * (2 * d + 8) * beta * d * rho**4
        assert pg_grad_norm_at_opt(self.INST, T, "advantage") == pytest.approx(expected, rel=1e-12)

    def test_simple_single_triple(self):
        beta = 2 * 0.25 + 4
        assert pg_grad_norm_at_opt(self.INST, 4, "simple") == pytest.approx(2 * 2 * beta**3)

    def test_short_horizon(self):
        with pytest.raises(ValueError):
            pg_grad_norm_at_opt(self.INST, 3, "value")

    def test_advantage_risk_simplification(self):
        d, rho, n, T = 2, 0.5, 4, 10
        beta = d * rho**2 + n
        expected = (2 * d + 8) * beta * d * rho**4 / (8 * rho**2 * (1 + rho**2))
        assert pg_risk_lower(self.INST, T, "advantage").value == pytest.approx(expected, rel=1e-12)

    def test_simple_to_advantage_ratio_growth(self):
        ratio = [pg_risk_lower(self.INST, T, "simple").value / pg_risk_lower(self.INST, T, "advantage").value
                 for T in (10, 20, 40)]
        growth = np.array(ratio[1:]) / np.array(ratio[:-1])
        assert np.all((growth >= 4.0) & (growth <= 5.5))
        assert abs(growth[1] - 4) < abs(growth[0] - 4)

    def test_baseline_ordering_of_predictions(self):
        r = {b: pg_risk_lower(self.INST, 10, b).value for b in ("simple", "value", "advantage")}
        assert r["simple"] > r["value"] > r["advantage"] > 0

    def test_nominal_below_advantage_bound(self):
        assert opt_plugin_limit(self.INST, 10).value < pg_risk_lower(self.INST, 10, "advantage").value

    def test_advantage_covariance_trace(self):
        for T in (4, 10):
            cov = pg_grad_cov_at_opt(self.INST, T)
            assert np.trace(cov) == pytest.approx(pg_grad_norm_at_opt(self.INST, T, "advantage"), rel=1e-12)

    def test_advantage_covariance_monte_carlo(self):
        inst = make_opt_instance(2, 1, 0.5, seed=0)
        sys, T = inst.system, 6
        vp = value_params(sys, inst.K_star, T)
        w, eta = draw_noise(sys, T, make_rng(1), batch=(400_000,), exploring=True)
        g = pg_gradient(sys, inst.K_star, simulate(sys, inst.K_star, w, eta), "advantage", vp)
        v = g.reshape(g.shape[0], -1, order="F")  # column-stacked vec of a 1 x 2 matrix
        emp = v.T @ v / v.shape[0]
        pred = pg_grad_cov_at_opt(inst, T)
        np.testing.assert_allclose(np.diag(emp), np.diag(pred), rtol=0.03)


class TestSgdCovariance:
    def test_isotropic(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(sgd_stationary_cov(3.0 * np.eye(2), 3.0, S), S / 3.0)

    def test_scalar(self):
        assert sgd_stationary_cov([[2.0]], 1.0, [[3.0]])[0, 0] == pytest.approx(3.0 / (4.0 - 1.0))

    def test_shift_must_be_positive(self):
        with pytest.raises(SpectrumError):
            sgd_stationary_cov(np.eye(2), 3.0, np.eye(2))

    def test_lqr_stationary_covariance_psd(self):
        inst = make_opt_instance(4, 2, 0.5, seed=0)
        assert pg_sgd_limit(inst, 10).value > 0
        sys = inst.system
        m = 2 * 9 * 0.25
        Xi = sgd_stationary_cov(hessian_at_opt(sys, 10, sys.exploring_noise_cov()), m, pg_grad_cov_at_opt(inst, 10))
        assert np.linalg.eigvalsh(0.5 * (Xi + Xi.T))[0] >= -1e-10
