"""Policy evaluation from a single on-policy trajectory.

Two estimators of the value matrix ``P = dlyap(L, M)`` of a fixed feedback:

* plugin: fit the closed loop by (ridge) least squares, reject fits that look
  unstable, then solve the Lyapunov equation with the fitted matrix;
* LSTD: least-squares temporal differences on the quadratic features
  ``phi(x) = svec(x x^T)`` with a known (or estimated) average cost.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RankError
from .kron_algebra import outer_svec, smat
from .matrix_equations import dlyap, spectral_radius

DEFAULT_RIDGE = 1e-3
LSTD_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class EvalEstimate:
    P_hat: np.ndarray
    method: str
    L_hat: np.ndarray | None = None
    thresholded: bool = False


def fit_closed_loop(traj, lam=DEFAULT_RIDGE):
    """``L_hat = (sum x_{t+1} x_t^T)(sum x_t x_t^T + lam I)^{-1}`` over t = 0..T-1.

    Leading batch axes of the trajectory give a batch of fits.
    """
    X = traj.states[..., :-1, :]
    Y = traj.states[..., 1:, :]
    n = X.shape[-1]
    gram = np.einsum("...ti,...tj->...ij", X, X) + lam * np.eye(n)
    cross = np.einsum("...ti,...tj->...ij", X, Y)  # sum x_t x_{t+1}^T
    if lam == 0 and np.any(np.linalg.matrix_rank(gram) < n):
        raise RankError("state Gram matrix is singular; use a positive ridge")
    try:
        Lt = np.linalg.solve(gram, cross)
    except np.linalg.LinAlgError as exc:
        raise RankError(f"state Gram matrix is singular: {exc}") from exc
    return np.swapaxes(Lt, -1, -2)


def plugin_policy_eval(traj, M, lam=DEFAULT_RIDGE, zeta=0.9, psi=2.0):
    """Model-based estimate ``dlyap(L_hat, M)``.

    Returns ``P_hat = 0`` with ``thresholded=True`` when ``rho(L_hat) > zeta``
    or ``||L_hat|| > psi``.
    """
    L_hat = fit_closed_loop(traj, lam)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if spectral_radius(L_hat) > zeta or np.linalg.norm(L_hat, 2) > psi:
        return EvalEstimate(P_hat=np.zeros_like(M), method="plugin", L_hat=L_hat, thresholded=True)
    return EvalEstimate(P_hat=dlyap(L_hat, M).P, method="plugin", L_hat=L_hat)


def true_average_cost(inst):
    """``lambda = sigma_w^2 Tr(dlyap(L, M))``."""
    return inst.sigma_w**2 * float(np.trace(dlyap(inst.L_star, inst.M).P))


def lstd_policy_eval(traj, M, lambda_star=None):
    """LSTD estimate of the value matrix.

    Solves ``[sum phi_t (phi_t - phi_{t+1})^T] w = sum (c_t - lambda) phi_t``
    over t = 0..T-1 with ``c_t = x_t^T M x_t`` and returns ``P_hat = smat(w)``.
    ``lambda_star=None`` uses the empirical average cost ``mean(c_t)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = traj.states
    phi = outer_svec(x)
    cur, nxt = phi[:-1], phi[1:]
    costs = np.einsum("ti,ij,tj->t", x[:-1], M, x[:-1])
    lam = float(np.mean(costs)) if lambda_star is None else float(lambda_star)
    design = cur.T @ (cur - nxt)
    rhs = cur.T @ (costs - lam)
    Qm, R = np.linalg.qr(design)
    diag = np.abs(np.diag(R))
    if diag.min(initial=np.inf) == 0.0 or np.linalg.cond(R) > LSTD_MAX_CONDITION:
        raise RankError("LSTD design matrix is singular or ill-conditioned")
    w = np.linalg.solve(R, Qm.T @ rhs)
    return EvalEstimate(P_hat=smat(w), method="lstd")
