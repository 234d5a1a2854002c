"""Policy optimization: certainty-equivalent control and REINFORCE.

Stage cost is ``||x||^2`` (identity state weight, zero input weight), so the
finite-horizon cost of a static gain is ``E sum_{t=1}^T ||x_t||^2``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DivergenceError, StaleValueParamsError, ValidationError
from .lqr_core import as_rng, simulate, value_params
from .matrix_equations import dare_zero_r, spectral_radius

DEFAULT_RIDGE = 1e-3
NOISE_BLOCK_ROUNDS = 256


class BaselineKind(str, Enum):
    SIMPLE = "simple"
    VALUE = "value"
    ADVANTAGE = "advantage"


@dataclass(frozen=True)
class DynamicsFit:
    A_hat: np.ndarray
    B_hat: np.ndarray
    gram_condition: float


@dataclass(frozen=True)
class Controller:
    K: np.ndarray
    provenance: str
    thresholded: bool = False


def fit_dynamics(trajs, lam=DEFAULT_RIDGE):
    """Ridge regression of ``x_{t+1}`` on ``z_t = (x_t, u_t)`` pooled over rollouts.

    ``Theta_hat = (sum x_{t+1} z_t^T)(sum z_t z_t^T + lam I)^{-1}``, split into
    ``(A_hat, B_hat)``.  All leading axes of ``trajs`` are pooled.
    """
    if lam <= 0:
        raise ValidationError("ridge parameter must be positive")
    n = trajs.states.shape[-1]
    d = trajs.inputs.shape[-1]
    Z = np.concatenate([trajs.states[..., :-1, :], trajs.inputs], axis=-1).reshape(-1, n + d)
    Y = trajs.states[..., 1:, :].reshape(-1, n)
    gram = Z.T @ Z + lam * np.eye(n + d)
    theta = np.linalg.solve(gram, Z.T @ Y).T
    return DynamicsFit(A_hat=theta[:, :n], B_hat=theta[:, n:], gram_condition=float(np.linalg.cond(gram)))


def nominal_controller(fit, varrho, zeta, psi, gamma):
    """Certainty-equivalent gain from a dynamics fit, with rejection guards.

    Returns ``K = 0`` (thresholded) when ``rho(A_hat) > varrho``,
    ``||A_hat|| > zeta``, ``||B_hat|| > psi`` or ``sigma_d(B_hat) < gamma``.
    Otherwise solves the zero-input-penalty Riccati equation with ``Q = I``.
    """
    A, B = fit.A_hat, fit.B_hat
    sv = np.linalg.svd(B, compute_uv=False)
    if (spectral_radius(A) > varrho or np.linalg.norm(A, 2) > zeta
            or sv[0] > psi or sv[-1] < gamma):
        return Controller(K=np.zeros((B.shape[1], A.shape[0])), provenance="nominal", thresholded=True)
    sol = dare_zero_r(A, B, np.eye(A.shape[0]))
    return Controller(K=sol.K, provenance="nominal")


def _check_vp(vp, K, T):
    if vp.horizon != T:
        raise StaleValueParamsError(f"value parameters built for horizon {vp.horizon}, need {T}")
    if not np.array_equal(vp.K, K):
        raise StaleValueParamsError("value parameters were built for a different gain")


def baseline_returns(sys, K, traj, baseline, vp=None):
    """The weights ``Psi_t`` (t = 0..T-1) multiplying ``eta_t x_t^T`` in the estimator."""
    baseline = BaselineKind(baseline)
    T = traj.horizon
    x = traj.states
    sq = np.einsum("...ti,...ti->...t", x, x)
    # tail[..., t] = sum_{l=t}^{T} ||x_l||^2
    tail = np.flip(np.cumsum(np.flip(sq, axis=-1), axis=-1), axis=-1)
    if baseline is BaselineKind.SIMPLE:
        return tail[..., 1:]
    if vp is None:
        raise ValidationError(f"{baseline.value} baseline needs value parameters")
    _check_vp(vp, K, T)
    xs = x[..., :-1, :]
    if baseline is BaselineKind.VALUE:
        Qt = vp.Q[..., :-1, :, :]
        v = np.einsum("...ti,...tij,...tj->...t", xs, Qt, xs) + vp.c[..., :-1]
        return tail[..., :-1] - v
    Qn = vp.Q[..., 1:, :, :]
    L = sys.A + sys.B @ np.asarray(K, dtype=float)
    y = xs @ sys.A.T + traj.inputs @ sys.B.T
    z = np.einsum("...ij,...tj->...ti", L, xs)
    offset = sys.sigma_u**2 * np.einsum("ia,...tij,ja->...t", sys.B, Qn, sys.B)
    return (np.einsum("...ti,...tij,...tj->...t", y, Qn, y)
            - np.einsum("...ti,...tij,...tj->...t", z, Qn, z) - offset)


def pg_gradient(sys, K, traj, baseline, vp=None):
    """REINFORCE estimate ``g = sigma_u^{-2} sum_{t=0}^{T-1} Psi_t eta_t x_t^T``.

    ``Psi_t`` depends on the baseline:

    * simple: ``sum_{l=t+1}^T ||x_l||^2``
    * value: ``sum_{l=t}^T ||x_l||^2 - V_t(x_t)``
    * advantage: ``A_t(x_t, u_t)``

    Leading batch axes of ``traj`` (and matching axes of ``K`` and ``vp``)
    produce a batch of gradients.
    """
    if traj.noises is None:
        raise ValidationError("policy gradient needs an exploring trajectory")
    if sys.sigma_u == 0:
        return np.zeros(np.broadcast_shapes(np.shape(K), traj.batch_shape + (sys.d, sys.n)))
    psi = baseline_returns(sys, K, traj, baseline, vp)
    xs = traj.states[..., :-1, :]
    return np.einsum("...t,...ta,...tb->...ab", psi, traj.noises, xs) / sys.sigma_u**2


def project_spectral_ball(K, zeta):
    """Frobenius projection onto ``{K : ||K||_2 <= zeta}`` by clipping singular values.

    Matrices already inside the ball are returned unchanged.  Accepts a stack
    of matrices.
    """
    if zeta <= 0:
        raise ValidationError("radius must be positive")
    K = np.asarray(K, dtype=float)
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    outside = s[..., 0] > zeta
    if not np.any(outside):
        return K
    clipped = (U * np.minimum(s, zeta)[..., None, :]) @ Vt
    return np.where(outside[..., None, None], clipped, K)


def reinforce_step_size(sys, T, i, sigma_min_B=None):
    """``alpha_i = 1 / (2 (T-1) sigma_w^2 sigma_d(B)^2 i)``; infinite when the denominator vanishes."""
    if sigma_min_B is None:
        sigma_min_B = np.linalg.svd(sys.B, compute_uv=False)[-1]
    denom = 2.0 * (T - 1) * sys.sigma_w**2 * sigma_min_B**2 * i
    return np.inf if denom == 0 else 1.0 / denom


def reinforce_batch(sys, N, T, baseline, zeta, rngs, sigma_min_B=None):
    """Run independent REINFORCE trials in lockstep, one per generator in ``rngs``.

    Each trial starts at ``K_1 = 0`` and performs rounds ``i = 1..N-1``: one
    exploring rollout under ``K_i``, a gradient estimate, the step ``alpha_i``
    and a projection onto the spectral ball of radius ``zeta``.  The final
    iterate ``K_N`` is returned for each trial together with a mask of trials
    whose rollouts diverged (their gains are frozen at zero).
    """
    baseline = BaselineKind(baseline)
    if N < 1:
        raise ValidationError("N must be at least 1")
    if T < 2:
        raise ValidationError("T must be at least 2")
    R = len(rngs)
    n, d = sys.n, sys.d
    K = np.zeros((R, d, n))
    failed = np.zeros(R, dtype=bool)
    block = None
    for i in range(1, N):
        j = (i - 1) % NOISE_BLOCK_ROUNDS
        if j == 0:
            rounds = min(NOISE_BLOCK_ROUNDS, N - i)
            block = np.stack([rng.standard_normal((rounds, T, n + d)) for rng in rngs])
        z = block[:, j]
        w = sys.sigma_w * z[..., :n]
        eta = sys.sigma_u * z[..., n:]
        traj = simulate(sys, K, w, eta)
        vp = None if baseline is BaselineKind.SIMPLE else value_params(sys, K, T)
        with np.errstate(over="ignore", invalid="ignore"):
            g = pg_gradient(sys, K, traj, baseline, vp)
        bad = traj.diverged() | ~np.all(np.isfinite(g), axis=(-2, -1))
        if np.any(bad):
            failed |= bad
            g = np.where(bad[:, None, None], 0.0, g)
        alpha = reinforce_step_size(sys, T, i, sigma_min_B)
        # a zero gradient never moves the iterate, even with an infinite step
        with np.errstate(invalid="ignore"):
            step = np.where(g == 0.0, 0.0, alpha * g)
        K = project_spectral_ball(K - step, zeta)
        K = np.where(failed[:, None, None], 0.0, K)
    return K, failed


def reinforce(sys, N, T, baseline, zeta, seed, sigma_min_B=None):
    """Single REINFORCE run; returns the controller ``K_N``."""
    K, failed = reinforce_batch(sys, N, T, baseline, zeta, [as_rng(seed)], sigma_min_B)
    if failed[0]:
        raise DivergenceError("REINFORCE rollout diverged")
    return Controller(K=K[0], provenance="reinforce")

