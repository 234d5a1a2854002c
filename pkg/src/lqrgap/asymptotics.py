"""Closed-form asymptotic scaled risks and the derivative formulas behind them.

Scaled risk means ``T * E||P_hat - P||_F^2`` for evaluation (T = trajectory
length) and ``N * E[J(K_hat) - J*]`` for optimization (N = number of
rollouts).

Notation for an evaluation instance with closed loop ``L``, cost weight ``M``
and noise level ``s = sigma_w``:

* ``P = dlyap(L, M)``: the value matrix;
* ``Sigma = stationary_covariance(L, s^2 I)``: the stationary state covariance;
* ``C = L^T P^2 L``.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import NumericalError
from .kron_algebra import gaussian_pair_moment, gaussian_triple_moment, svec, sym_kron, tri_dim, vec
from .lqr_core import hessian_at_opt
from .matrix_equations import clyap, dlyap, stationary_covariance
from .policy_opt import BaselineKind

BOUND_UPPER = "bound-upper"
BOUND_LOWER = "bound-lower"
EXACT_LIMIT = "exact-limit"

LSTD_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class RiskPrediction:
    value: float
    kind: str
    source: str

    def to_dict(self):
        return {"value": self.value, "kind": self.kind, "source": self.source}


@dataclass(frozen=True)
class LstdCovariance:
    A_inf: np.ndarray
    B_inf: np.ndarray
    sandwich: np.ndarray = field(repr=False)


# --------------------------------------------------------------------------
# Policy evaluation
# --------------------------------------------------------------------------

def _eval_pieces(inst):
    L, M, s2 = inst.L_star, inst.M, inst.sigma_w**2
    n = L.shape[0]
    P = dlyap(L, M).P
    Sigma = stationary_covariance(L, s2 * np.eye(n))
    C = L.T @ P @ P @ L
    return L, P, Sigma, C, s2


def _sandwich_trace(left, middle):
    """Tr(left^{-1} middle left^{-T})."""
    X = np.linalg.solve(left, middle)
    Y = np.linalg.solve(left, X.T)
    return float(np.trace(Y))


def eval_plugin_limit(inst):
    """Trace bound on the plugin scaled risk::

        4 Tr( (I - L^T (x)_s L^T)^{-1} (C (x)_s s^2 Sigma^{-1}) (I - L^T (x)_s L^T)^{-T} )

    Exact when the two cross terms of the underlying bound coincide, e.g. for
    scalar systems.
    """
    L, P, Sigma, C, s2 = _eval_pieces(inst)
    n = L.shape[0]
    left = np.eye(tri_dim(n)) - sym_kron(L.T, L.T)
    mid = sym_kron(C, s2 * np.linalg.inv(Sigma))
    return RiskPrediction(4.0 * _sandwich_trace(left, mid), BOUND_UPPER, "plugin-evaluation-trace-bound")


def dlyap_derivative(L, M, X):
    """Directional derivative of ``L -> dlyap(L, M)`` along ``X``:
    ``dlyap(L, X^T P L + L^T P X)`` with ``P = dlyap(L, M)``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = dlyap(L, M).P
    return dlyap(L, X.T @ P @ L + L.T @ P @ X).P


def eval_plugin_exact(inst):
    """Exact limiting plugin scaled risk via the delta method.

    The least-squares error satisfies ``T Cov(vec(L_hat - L)) -> s^2 (Sigma^{-1} kron I)``;
    pushing it through the Jacobian ``J`` of ``vec(dlyap(., M))`` gives
    ``s^2 Tr(J (Sigma^{-1} kron I) J^T)``.
    """
    L, P, Sigma, C, s2 = _eval_pieces(inst)
    n = L.shape[0]
    J = np.empty((n * n, n * n))
    for k in range(n * n):
        E = np.zeros(n * n)
        E[k] = 1.0
        Xk = E.reshape((n, n), order="F")
        J[:, k] = vec(dlyap(L, Xk.T @ P @ L + L.T @ P @ Xk).P)
    cov = s2 * np.kron(np.linalg.inv(Sigma), np.eye(n))
    return RiskPrediction(float(np.trace(J @ cov @ J.T)), EXACT_LIMIT, "plugin-evaluation-delta-method")


def lstd_limit_cov(inst):
    """Limiting covariance of the LSTD weights, ``A_inf^{-1} B_inf A_inf^{-T}``.

    Built from the stationary expectations that define the two operators, with
    ``x ~ N(0, Sigma)`` and ``x' = L x + w``::

        A_inf = E[phi(x) (phi(x) - phi(x'))^T] = 2 (Sigma (x)_s Sigma)(I - L^T (x)_s L^T)

        B_inf = E[phi(x) phi(x)^T eps^2]
              = 4 s^2 { Tr(C Sigma) (2 Sigma (x)_s Sigma + sv sv^T)
                        + 2 (sv svC^T + svC sv^T) + 8 (Sigma (x)_s Sigma C Sigma) }
                + 2 s^4 ||P||_F^2 (2 Sigma (x)_s Sigma + sv sv^T)

    where ``eps = 2 w^T P L x + w^T P w - s^2 Tr(P)`` is the temporal-difference
    residual at the true weights, ``sv = svec(Sigma)`` and
    ``svC = svec(Sigma C Sigma)``.
    """
    L, P, Sigma, C, s2 = _eval_pieces(inst)
    n = L.shape[0]
    p = tri_dim(n)
    SS = sym_kron(Sigma, Sigma)
    A_inf = 2.0 * SS @ (np.eye(p) - sym_kron(L.T, L.T))
    if np.linalg.cond(A_inf) > LSTD_MAX_CONDITION:
        raise NumericalError("A_inf is ill-conditioned")
    sv = svec(Sigma)
    svC = svec(Sigma @ C @ Sigma, check=False)
    fourth = 2.0 * SS + np.outer(sv, sv)
    sixth = (np.trace(C @ Sigma) * fourth
             + 2.0 * (np.outer(sv, svC) + np.outer(svC, sv))
             + 8.0 * sym_kron(Sigma, Sigma @ C @ Sigma))
    B_inf = 4.0 * s2 * sixth + 2.0 * s2**2 * np.sum(P * P) * fourth
    B_inf = 0.5 * (B_inf + B_inf.T)
    X = np.linalg.solve(A_inf, B_inf)
    sandwich = np.linalg.solve(A_inf, X.T)
    sandwich = 0.5 * (sandwich + sandwich.T)
    return LstdCovariance(A_inf=A_inf, B_inf=B_inf, sandwich=sandwich)


def lstd_limit_exact(inst):
    """Exact limiting LSTD scaled risk ``Tr(A_inf^{-1} B_inf A_inf^{-T})``."""
    return RiskPrediction(float(np.trace(lstd_limit_cov(inst).sandwich)), EXACT_LIMIT,
                          "lstd-evaluation-sandwich-trace")


def _lstd_lower_pieces(inst):
    L, P, Sigma, C, s2 = _eval_pieces(inst)
    n = L.shape[0]
    left = np.eye(tri_dim(n)) - sym_kron(L.T, L.T)
    Si = np.linalg.inv(Sigma)
    second = _sandwich_trace(left, sym_kron(Si, Si))
    return float(np.sum(Sigma * C)), second, s2


def lstd_limit_lower(inst):
    """Closed-form lower bound on the LSTD scaled risk::

        4 R_plug + 8 s^2 <Sigma, C> Tr((I - L^T (x)_s L^T)^{-1} (Sigma^{-1} (x)_s Sigma^{-1}) (...)^{-T})

    with ``R_plug`` from :func:`eval_plugin_limit`.  The exact limit is
    available from :func:`lstd_limit_exact`; see :func:`lstd_limit_lower_rederived`
    for a bound that is consistent with it.
    """
    inner, second, s2 = _lstd_lower_pieces(inst)
    value = 4.0 * eval_plugin_limit(inst).value + 8.0 * s2 * inner * second
    return RiskPrediction(value, BOUND_LOWER, "lstd-evaluation-lower-bound")


def lstd_limit_lower_rederived(inst):
    """Lower bound obtained by dropping the PSD rank-one and fourth-moment
    terms of ``B_inf`` in :func:`lstd_limit_cov`::

        2 R_plug + 2 s^2 <Sigma, C> Tr((I - L^T (x)_s L^T)^{-1} (Sigma^{-1} (x)_s Sigma^{-1}) (...)^{-T})

    Always at most ``Tr(sandwich)``.
    """
    inner, second, s2 = _lstd_lower_pieces(inst)
    value = 2.0 * eval_plugin_limit(inst).value + 2.0 * s2 * inner * second
    return RiskPrediction(value, BOUND_LOWER, "lstd-evaluation-lower-bound-rederived")


# --------------------------------------------------------------------------
# Policy optimization
# --------------------------------------------------------------------------

def dare_gain_derivative(inst, dA, dB):
    """Derivative of the Riccati gain at an optimization-family instance:
    ``-B^+ dA + B^+ dB B^+ A``."""
    sys = inst.system
    Bp = np.linalg.pinv(sys.B)
    if np.linalg.matrix_rank(sys.B) < sys.d:
        raise NumericalError("B is rank deficient")
    return -Bp @ dA + Bp @ dB @ Bp @ sys.A


def opt_plugin_limit(inst, T):
    """Limiting nominal-control scaled risk (up to terms vanishing in T)::

        sigma_w^4 ((T-1)/T) (Tr(Sigma^{-1}) + ||K*||_F^2 / sigma_u^2) d

    with ``Sigma = stationary_covariance(A, sigma_u^2 B B^T + sigma_w^2 I)``.
    """
    sys = inst.system
    Sigma = stationary_covariance(sys.A, sys.exploring_noise_cov())
    Kstar = np.linalg.pinv(sys.B) @ sys.A
    value = (sys.sigma_w**4 * (T - 1) / T
             * (np.trace(np.linalg.inv(Sigma)) + np.sum(Kstar**2) / sys.sigma_u**2) * sys.d)
    return RiskPrediction(float(value), EXACT_LIMIT, "nominal-optimization-limit")


def _pg_scalars(inst):
    sys = inst.system
    su2, sw2 = sys.sigma_u**2, sys.sigma_w**2
    B = sys.B
    fro2 = float(np.sum(B * B))
    btb2 = float(np.sum((B.T @ B) ** 2))
    beta = su2 * fro2 + sw2 * sys.n
    return sys, su2, sw2, fro2, btb2, beta


def pg_grad_norm_at_opt(inst, T, baseline):
    """Second moment ``E||g(K*)||_F^2`` of the REINFORCE estimate at the optimum.

    With ``beta = sigma_u^2 ||B||_F^2 + sigma_w^2 n`` (the per-step state energy
    at the optimum, where ``x_t = B eta_{t-1} + w_{t-1}``):

    * advantage (exact): ``(T-1) sigma_u^2 (2d + 8) beta ||B^T B||_F^2``.
      Only the diagonal (same-step) terms survive, each equal to
      ``beta sigma_u^{-4} E[||eta||^2 (||B eta||^2 - sigma_u^2 ||B||_F^2)^2]``.
    * value (leading order in T): ``C(T-1, 2) (2 d beta / sigma_u^2)
      (sigma_u^4 ||B^T B||_F^2 + sigma_w^4 n + 2 sigma_w^2 sigma_u^2 ||B||_F^2)``.
      The baseline leaves a sum of centered per-step energies; counting the
      ``C(T-1, 2)`` pairs (t, l) with l > t, each contributes
      ``beta d Var(||B eta + w||^2) / sigma_u^2``.
    * simple (leading order in T): ``C(T-1, 3) 2 d beta^3 / sigma_u^2``.
      The uncentered reward-to-go squared contributes ``beta^2`` per pair of
      future steps, summed over step triples.
    """
    if T < 4:
        raise ValueError("need T >= 4")
    baseline = BaselineKind(baseline)
    sys, su2, sw2, fro2, btb2, beta = _pg_scalars(inst)
    d, n = sys.d, sys.n
    if baseline is BaselineKind.ADVANTAGE:
        return (T - 1) * su2 * (2 * d + 8) * beta * btb2
    if baseline is BaselineKind.VALUE:
        return comb(T - 1, 2) * (2 * d * beta / su2) * (su2**2 * btb2 + sw2**2 * n + 2 * sw2 * su2 * fro2)
    return comb(T - 1, 3) * 2 * d * beta**3 / su2


def pg_risk_lower(inst, T, baseline):
    """``E||g(K*)||_F^2 / (8 (T-1) sigma_d(B)^2 (sigma_w^2 + sigma_u^2 ||B||_2^2))``."""
    sys = inst.system
    sv = np.linalg.svd(sys.B, compute_uv=False)
    denom = 8.0 * (T - 1) * sv[-1] ** 2 * (sys.sigma_w**2 + sys.sigma_u**2 * sv[0] ** 2)
    value = pg_grad_norm_at_opt(inst, T, baseline) / denom
    return RiskPrediction(float(value), BOUND_LOWER, f"reinforce-{BaselineKind(baseline).value}-lower-bound")


def pg_grad_cov_at_opt(inst, T):
    """Covariance ``E[vec(g) vec(g)^T]`` of the advantage-baseline estimate at the optimum.

    Equals ``((T-1)/sigma_u^4) Sigma_x kron E[eta eta^T psi^2]`` with
    ``Sigma_x = sigma_u^2 B B^T + sigma_w^2 I`` and
    ``psi = ||B eta||^2 - sigma_u^2 ||B||_F^2``; the inner moment is assembled
    entrywise from Gaussian quadratic-form moments.
    """
    sys, su2, sw2, fro2, btb2, beta = _pg_scalars(inst)
    d = sys.d
    G = sys.B.T @ sys.B  # psi = su2 (g^T G g - Tr G) with eta = sigma_u g
    trG = np.trace(G)
    inner = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            Eij = np.zeros((d, d))
            Eij[i, j] += 0.5
            Eij[j, i] += 0.5
            inner[i, j] = (gaussian_triple_moment(Eij, G, G)
                           - 2.0 * trG * gaussian_pair_moment(Eij, G)
                           + trG**2 * np.trace(Eij))
    inner *= su2**3
    return (T - 1) / su2**2 * np.kron(sys.exploring_noise_cov(), inner)


def sgd_stationary_cov(hessian, m, grad_cov):
    """Limit of ``m N Cov(theta_N)`` for SGD with steps ``1/(m i)``: solves
    ``(H - m/2 I) X + X (H - m/2 I) = grad_cov``."""
    H = np.atleast_2d(np.asarray(hessian, dtype=float))
    return clyap(H - 0.5 * m * np.eye(H.shape[0]), np.atleast_2d(grad_cov))


def pg_sgd_limit(inst, T):
    """Limiting REINFORCE scaled risk with the advantage baseline.

    ``(1 / 2m) Tr(Hess J(K*) Xi)`` with ``Xi`` from :func:`sgd_stationary_cov`,
    the Hessian of the exploring cost as SGD curvature, and
    ``m = 2 (T-1) sigma_w^2 sigma_d(B)^2`` (the step-size constant).
    """
    sys = inst.system
    smin = np.linalg.svd(sys.B, compute_uv=False)[-1]
    m = 2.0 * (T - 1) * sys.sigma_w**2 * smin**2
    H = hessian_at_opt(sys, T, sys.exploring_noise_cov())
    Xi = sgd_stationary_cov(H, m, pg_grad_cov_at_opt(inst, T))
    hess_J = hessian_at_opt(sys, T)
    return RiskPrediction(float(np.trace(hess_J @ Xi) / (2.0 * m)), EXACT_LIMIT,
                          "reinforce-advantage-sgd-limit")
