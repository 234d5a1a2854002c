"""Linear system simulation, finite-horizon cost calculus and value functions.

Arrays describing trajectories may carry leading batch axes: a ``Trajectory``
with ``states.shape == (R, T + 1, n)`` holds ``R`` independent rollouts.  The
public single-rollout operations (``rollout_closed_loop``,
``rollout_exploring``) are thin wrappers around :func:`simulate`, which the
experiment harness calls with batches.
"""

from dataclasses import dataclass, field
import zlib

import numpy as np

from .errors import DimensionError, DivergenceError, ModelAssumptionError, ValidationError

DIVERGENCE_LIMIT = 1e100


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------

def stream_id(tag):
    """Stable 32-bit integer for a stream tag string."""
    return zlib.crc32(str(tag).encode("utf-8"))


def make_rng(seed, trial=0, stream="default"):
    """Counter-based generator keyed by ``(seed, trial, stream)``.

    Uses Philox seeded through :class:`numpy.random.SeedSequence`, so each
    trial owns an independent stream and the draws for a trial do not depend on
    which worker runs it or in what order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), stream_id(stream)))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)


# --------------------------------------------------------------------------
# Data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearSystem:
    """Dynamics ``x_{t+1} = A x_t + B u_t + w_t`` with ``w_t ~ N(0, sigma_w^2 I)``.

    ``sigma_u`` is the standard deviation of the Gaussian exploration noise
    added to inputs by exploring policies.
    """

    A: np.ndarray
    B: np.ndarray
    sigma_w: float = 1.0
    sigma_u: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise DimensionError(f"A {A.shape} and B {B.shape} are incompatible")
        if B.shape[1] > A.shape[0]:
            raise ValidationError("need d <= n")
        if self.sigma_w < 0 or self.sigma_u < 0:
            raise ValidationError("noise scales must be nonnegative")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_w", float(self.sigma_w))
        object.__setattr__(self, "sigma_u", float(self.sigma_u))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.B.shape[1]

    def closed_loop(self, K):
        return self.A + self.B @ np.asarray(K, dtype=float)

    def exploring_noise_cov(self):
        """Covariance ``sigma_u^2 B B^T + sigma_w^2 I`` of ``B eta + w``."""
        return self.sigma_u**2 * self.B @ self.B.T + self.sigma_w**2 * np.eye(self.n)


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T`` (``x_0 = 0``), inputs ``u_0..u_{T-1}`` and, for
    exploring rollouts, the exploration noises ``eta_0..eta_{T-1}``."""

    states: np.ndarray
    inputs: np.ndarray
    noises: np.ndarray | None = None

    def __post_init__(self):
        T = self.states.shape[-2] - 1
        if self.inputs.shape[-2] != T:
            raise DimensionError("inputs must have T rows")
        if self.noises is not None and self.noises.shape != self.inputs.shape:
            raise DimensionError("noises must match inputs in shape")
        for arr in (self.states, self.inputs, self.noises):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def horizon(self):
        return self.states.shape[-2] - 1

    @property
    def batch_shape(self):
        return self.states.shape[:-2]

    def __getitem__(self, idx):
        """Select rollouts along the leading batch axes."""
        return Trajectory(
            states=self.states[idx],
            inputs=self.inputs[idx],
            noises=None if self.noises is None else self.noises[idx],
        )

    def diverged(self):
        """Boolean mask over the batch: non-finite or beyond the divergence guard."""
        bad = ~np.isfinite(self.states) | (np.abs(self.states) > DIVERGENCE_LIMIT)
        return bad.any(axis=(-2, -1))


@dataclass(frozen=True)
class ValueParams:
    """Quadratic value functions ``V_t(x) = x^T Q_t x + c_t`` for t = 0..T.

    ``Q`` has shape ``(..., T + 1, n, n)`` and ``c`` shape ``(..., T + 1)``;
    leading axes follow those of the gain ``K`` the parameters were built for.
    """

    Q: np.ndarray
    c: np.ndarray
    K: np.ndarray = field(repr=False)

    @property
    def horizon(self):
        return self.Q.shape[-3] - 1

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        Qt = self.Q[..., t, :, :]
        return np.einsum("...i,...ij,...j->...", x, Qt, x) + self.c[..., t]


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

def _matvec(M, x):
    return np.einsum("...ij,...j->...i", M, x)


def simulate(sys, K, w, eta=None):
    """Run ``u_t = K x_t + eta_t``, ``x_{t+1} = A x_t + B u_t + w_t`` from ``x_0 = 0``.

    Parameters
    ----------
    sys : LinearSystem
    K : array, shape (d, n) or (..., d, n)
        Feedback gain, broadcast against the batch axes of ``w``.
    w : array, shape (..., T, n)
        Process noise (already scaled).
    eta : array, shape (..., T, d), optional
        Exploration noise (already scaled).  ``None`` gives a closed-loop rollout.
    """
    w = np.asarray(w, dtype=float)
    K = np.asarray(K, dtype=float)
    T = w.shape[-2]
    batch = np.broadcast_shapes(w.shape[:-2], K.shape[:-2])
    if eta is not None:
        batch = np.broadcast_shapes(batch, eta.shape[:-2])
    states = np.zeros(batch + (T + 1, sys.n))
    inputs = np.zeros(batch + (T, sys.d))
    A, B = sys.A, sys.B
    with np.errstate(over="ignore", invalid="ignore"):
        x = states[..., 0, :]
        for t in range(T):
            u = _matvec(K, x)
            if eta is not None:
                u = u + eta[..., t, :]
            inputs[..., t, :] = u
            x = x @ A.T + u @ B.T + w[..., t, :]
            states[..., t + 1, :] = x
    return Trajectory(states=states, inputs=inputs, noises=None if eta is None else np.array(
        np.broadcast_to(eta, batch + (T, sys.d))))


def draw_noise(sys, T, rng, batch=(), exploring=False):
    """Draw scaled ``w`` (and ``eta`` when exploring) for ``batch`` rollouts.

    One standard normal block of shape ``batch + (T, n [+ d])`` is drawn so the
    stream layout is fixed by the arguments alone.
    """
    width = sys.n + (sys.d if exploring else 0)
    z = rng.standard_normal(tuple(batch) + (T, width))
    w = sys.sigma_w * z[..., : sys.n]
    eta = sys.sigma_u * z[..., sys.n:] if exploring else None
    return w, eta


def _checked(traj):
    if np.any(traj.diverged()):
        raise DivergenceError("trajectory exceeded the divergence guard")
    return traj


def rollout_closed_loop(sys, K, T, seed):
    """Single closed-loop rollout ``u_t = K x_t`` of length ``T``."""
    if T < 1:
        raise ValidationError("T must be at least 1")
    w, _ = draw_noise(sys, T, as_rng(seed))
    return _checked(simulate(sys, K, w))


def rollout_exploring(sys, K, T, seed):
    """Single exploring rollout ``u_t = K x_t + eta_t`` with ``eta_t ~ N(0, sigma_u^2 I)``."""
    if T < 1:
        raise ValidationError("T must be at least 1")
    w, eta = draw_noise(sys, T, as_rng(seed), exploring=True)
    return _checked(simulate(sys, K, w, eta))


# --------------------------------------------------------------------------
# Cost calculus
# --------------------------------------------------------------------------

def _matrix_powers(L, count):
    """[L^0, L^1, ..., L^{count-1}] as an array of shape (count, ..., n, n)."""
    n = L.shape[-1]
    out = np.empty((count,) + L.shape)
    out[0] = np.broadcast_to(np.eye(n), L.shape)
    for k in range(1, count):
        out[k] = out[k - 1] @ L
    return out


def cost_closed_form(sys, K, T, Sigma=None):
    """``J_Sigma(K) = T Tr(Sigma) + sum_{t=1}^T sum_{l=1}^{t-1} Tr(L^l Sigma L^l^T)``.

    Equivalently ``sum_{l=0}^{T-1} (T - l) Tr(L^l Sigma (L^l)^T)`` with
    ``L = A + B K``.  ``Sigma`` defaults to ``sigma_w^2 I``.  ``K`` may carry
    leading batch axes.
    """
    if T < 1:
        raise ValidationError("T must be at least 1")
    if Sigma is None:
        Sigma = sys.sigma_w**2 * np.eye(sys.n)
    L = sys.A + sys.B @ np.asarray(K, dtype=float)
    Lp = _matrix_powers(L, T)
    terms = np.einsum("l...ij,jk,l...ik->l...", Lp, Sigma, Lp)
    weights = (T - np.arange(T)).reshape((T,) + (1,) * (terms.ndim - 1))
    return np.sum(weights * terms, axis=0)


def grad_cost(sys, K, T, Sigma=None):
    """Gradient of :func:`cost_closed_form` with respect to ``K``::

        2 (T-1) B^T L Sigma
        + 2 sum_{l=2}^{T-1} sum_{k=0}^{l-1} (T-l) B^T (L^k)^T L^l Sigma (L^{l-k-1})^T
    """
    if T < 2:
        raise ValidationError("T must be at least 2")
    if Sigma is None:
        Sigma = sys.sigma_w**2 * np.eye(sys.n)
    K = np.asarray(K, dtype=float)
    B = sys.B
    L = sys.A + B @ K
    Lp = _matrix_powers(L, T)
    G = 2.0 * (T - 1) * B.T @ L @ Sigma
    for ell in range(2, T):
        inner = np.zeros_like(L)
        LlS = Lp[ell] @ Sigma
        for k in range(ell):
            inner = inner + Lp[k].T @ LlS @ Lp[ell - k - 1].T
        G = G + 2.0 * (T - ell) * B.T @ inner
    return G


def check_range_condition(sys, tol=1e-8):
    """Raise unless ``range(A)`` lies in ``range(B)``."""
    proj = sys.B @ np.linalg.pinv(sys.B)
    gap = np.linalg.norm((np.eye(sys.n) - proj) @ sys.A, 2)
    if gap > tol:
        raise ModelAssumptionError(f"range(A) is not contained in range(B) (gap {gap:.3e})")


def hessian_at_opt(sys, T, Sigma=None):
    """Hessian of ``J_Sigma`` at the optimal gain, as an (nd x nd) matrix.

    Acts on ``vec(H)`` (column stacking of a d x n direction):
    ``Hess[H, H] = vec(H)^T M vec(H) = 2 (T-1) Tr(Sigma H^T B^T B H)`` with
    ``M = 2 (T-1) (Sigma kron B^T B)``.
    """
    if T < 2:
        raise ValidationError("T must be at least 2")
    check_range_condition(sys)
    if Sigma is None:
        Sigma = sys.sigma_w**2 * np.eye(sys.n)
    return 2.0 * (T - 1) * np.kron(Sigma, sys.B.T @ sys.B)


def rsc_constant(sys, T, Sigma=None):
    """Restricted strong convexity constant ``2 (T-1) lambda_min(Sigma) sigma_min(B)^2``."""
    if Sigma is None:
        Sigma = sys.sigma_w**2 * np.eye(sys.n)
    smin = np.linalg.svd(sys.B, compute_uv=False)[-1]
    return 2.0 * (T - 1) * float(np.linalg.eigvalsh(Sigma)[0]) * smin**2


# --------------------------------------------------------------------------
# Value and advantage functions of the exploring policy u = K x + eta
# --------------------------------------------------------------------------

def value_params(sys, K, T):
    """Backward recursion for ``V_t(x) = E[sum_{l=t}^T ||x_l||^2 | x_t = x]``.

    ``Q_T = I``, ``c_T = 0``, ``Q_t = I + L^T Q_{t+1} L`` and
    ``c_t = c_{t+1} + sigma_u^2 Tr(B^T Q_{t+1} B) + sigma_w^2 Tr(Q_{t+1})``.
    """
    if T < 1:
        raise ValidationError("T must be at least 1")
    K = np.array(K, dtype=float)
    L = sys.A + sys.B @ K
    n = sys.n
    batch = L.shape[:-2]
    Q = np.empty(batch + (T + 1, n, n))
    c = np.empty(batch + (T + 1,))
    Q[..., T, :, :] = np.eye(n)
    c[..., T] = 0.0
    Lt = np.swapaxes(L, -1, -2)
    su2, sw2 = sys.sigma_u**2, sys.sigma_w**2
    for t in range(T - 1, -1, -1):
        Qn = Q[..., t + 1, :, :]
        Q[..., t, :, :] = np.eye(n) + Lt @ Qn @ L
        c[..., t] = (
            c[..., t + 1]
            + su2 * np.einsum("ia,...ij,ja->...", sys.B, Qn, sys.B)
            + sw2 * np.trace(Qn, axis1=-2, axis2=-1)
        )
    K.setflags(write=False)
    Q.setflags(write=False)
    c.setflags(write=False)
    return ValueParams(Q=Q, c=c, K=K)


def advantage(sys, vp, t, x, u):
    """``A_t(x, u) = Q_t(x, u) - V_t(x)`` under the exploring policy.

    Equals ``(Ax+Bu)^T Q_{t+1} (Ax+Bu) - (Lx)^T Q_{t+1} (Lx) - sigma_u^2 Tr(B^T Q_{t+1} B)``.
    Broadcasts over leading axes of ``x`` and ``u``.
    """
    T = vp.horizon
    if not 0 <= t <= T - 1:
        raise IndexError(f"step {t} outside 0..{T - 1}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    Qn = vp.Q[..., t + 1, :, :]
    L = sys.A + sys.B @ vp.K
    y = x @ sys.A.T + u @ sys.B.T
    z = _matvec(L, x)
    offset = sys.sigma_u**2 * np.einsum("ia,...ij,ja->...", sys.B, Qn, sys.B)
    return (
        np.einsum("...i,...ij,...j->...", y, Qn, y)
        - np.einsum("...i,...ij,...j->...", z, Qn, z)
        - offset
    )
