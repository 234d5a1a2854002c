"""Lyapunov and zero-input-penalty Riccati solvers.

Sign conventions used throughout the package:

* ``dlyap(F, M)`` returns ``P`` with ``F^T P F - P + M = 0``, i.e. the value
  matrix ``sum_k (F^k)^T M F^k`` of the closed loop ``x -> F x``.
* ``stationary_covariance(A, S)`` returns ``P`` with ``A P A^T - P + S = 0``,
  the steady-state covariance of ``x_{t+1} = A x_t + noise(S)``.
* ``clyap(H, S)`` returns ``X`` with ``H X + X H = S``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InstabilityError,
    IterationLimitError,
    NumericalError,
    RankError,
    SpectrumError,
)

#: Default tolerances; callers may override via keyword arguments.
DLYAP_RESIDUAL_RTOL = 1e-10
DARE_STEP_TOL = 1e-12
DARE_MAX_ITER = 10_000
DARE_RANK_TOL = 1e-8


@dataclass(frozen=True)
class DlyapSolution:
    P: np.ndarray
    residual: float


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    closed_loop: np.ndarray
    iterations: int


def _square(F, name="matrix"):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {F.shape}")
    return F


def _sym(X):
    return 0.5 * (X + X.T)


def spectral_radius(A):
    """Largest eigenvalue modulus of a square matrix."""
    A = _square(A)
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return float(np.max(np.abs(eig), initial=0.0))


def dlyap_residual(F, P, M):
    return float(np.linalg.norm(F.T @ P @ F - P + M))


def dlyap(F, M, method="direct", check_residual=True):
    """Solve ``F^T P F - P + M = 0``.

    Parameters
    ----------
    F : (n, n) array_like
        Schur-stable matrix.
    M : (n, n) array_like
        Symmetric right-hand side.
    method : {"direct", "doubling"}
        ``"direct"`` solves the n^2 x n^2 vectorized system
        ``(I - F^T kron F^T) vec(P) = vec(M)``.  ``"doubling"`` runs the Smith
        doubling iteration ``P <- P + G^T P G``, ``G <- G G``.

    Returns
    -------
    DlyapSolution
    """
    F = _square(F, "F")
    M = _square(M, "M")
    if F.shape != M.shape:
        raise DimensionError(f"F {F.shape} and M {M.shape} differ in size")
    n = F.shape[0]
    if spectral_radius(F) >= 1.0:
        raise InstabilityError(f"dlyap needs a stable F, spectral radius {spectral_radius(F):.6g}")
    if method == "direct":
        lhs = np.eye(n * n) - np.kron(F.T, F.T)
        try:
            p = np.linalg.solve(lhs, M.reshape(-1, order="F"))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular Lyapunov system: {exc}") from exc
        P = _sym(p.reshape((n, n), order="F"))
    elif method == "doubling":
        P, G = M.copy(), F.copy()
        for _ in range(200):
            step = G.T @ P @ G
            P = P + step
            G = G @ G
            if np.linalg.norm(step) <= 1e-16 * max(1.0, np.linalg.norm(P)):
                break
        P = _sym(P)
    else:
        raise ValueError(f"unknown dlyap method {method!r}")
    res = dlyap_residual(F, P, M)
    if check_residual and res > DLYAP_RESIDUAL_RTOL * max(1.0, np.linalg.norm(M)) * max(1.0, np.linalg.norm(P)):
        raise NumericalError(f"dlyap residual {res:.3e} above tolerance")
    return DlyapSolution(P=P, residual=res)


def stationary_covariance(A, S):
    """Steady-state covariance: ``P`` with ``A P A^T - P + S = 0``."""
    return dlyap(np.asarray(A, dtype=float).T, S).P


def clyap(H, S):
    """Solve ``H X + X H = S`` for symmetric positive definite ``H``.

    Works in the eigenbasis of ``H``: with ``H = V diag(lam) V^T`` and
    ``S~ = V^T S V``, the solution is ``X~_ij = S~_ij / (lam_i + lam_j)``.
    """
    H = _sym(_square(H, "H"))
    S = _square(S, "S")
    if H.shape != S.shape:
        raise DimensionError(f"H {H.shape} and S {S.shape} differ in size")
    lam, V = np.linalg.eigh(H)
    if lam[0] <= 0.0:
        raise SpectrumError(f"clyap needs H positive definite, min eigenvalue {lam[0]:.6g}")
    St = V.T @ S @ V
    X = V @ (St / (lam[:, None] + lam[None, :])) @ V.T
    return _sym(X)


def riccati_map(P, A, B, Q):
    """One step of ``P -> A^T P A - A^T P B (B^T P B)^{-1} B^T P A + Q``."""
    BtPB = B.T @ P @ B
    BtPA = B.T @ P @ A
    return _sym(A.T @ P @ A - BtPA.T @ np.linalg.solve(BtPB, BtPA) + Q)


def dare_residual(P, A, B, Q):
    return float(np.linalg.norm(riccati_map(P, A, B, Q) - P))


def dare_zero_r(A, B, Q, tol=DARE_STEP_TOL, max_iter=DARE_MAX_ITER):
    """Discrete algebraic Riccati equation with zero input penalty.

    Runs the Riccati recursion from ``P_0 = Q`` until successive iterates
    differ by at most ``tol`` in Frobenius norm.  Returns the fixed point,
    the gain ``K = -(B^T P B)^{-1} B^T P A`` and the closed loop ``A + B K``.
    """
    A = _square(A, "A")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = _square(Q, "Q")
    n = A.shape[0]
    if B.shape[0] != n or Q.shape != A.shape:
        raise DimensionError(f"incompatible shapes A {A.shape}, B {B.shape}, Q {Q.shape}")
    d = B.shape[1]
    sv = np.linalg.svd(B, compute_uv=False)
    if d > n or sv[-1] < DARE_RANK_TOL:
        raise RankError(f"B must have full column rank (sigma_min = {sv[-1]:.3e})")

    P = _sym(Q.copy())
    for it in range(1, max_iter + 1):
        BtPB = B.T @ P @ B
        if np.linalg.cond(BtPB) > 1e14:
            raise RankError("B^T P B became singular during the Riccati recursion")
        P_next = riccati_map(P, A, B, Q)
        step = np.linalg.norm(P_next - P)
        P = P_next
        if step <= tol:
            break
    else:
        raise IterationLimitError(f"Riccati recursion did not converge in {max_iter} iterations")

    K = -np.linalg.solve(B.T @ P @ B, B.T @ P @ A)
    L = A + B @ K
    if np.linalg.eigvalsh(P - Q)[0] < -1e-8 * max(1.0, np.linalg.norm(P)):
        raise NumericalError("Riccati fixed point violates P >= Q")
    if spectral_radius(L) >= 1.0:
        raise NumericalError("Riccati gain does not stabilize (A, B)")
    return DareSolution(P=P, K=K, closed_loop=L, iterations=it)
