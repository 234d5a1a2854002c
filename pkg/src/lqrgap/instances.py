"""Problem families used by the experiments.

* Evaluation family: closed loop ``L = tau P_E + gamma I`` with ``P_E`` the
  orthogonal projector onto a random ``d_E``-dimensional subspace and cost
  weight ``M = I``.  Only ``L`` and ``M`` enter the evaluation algorithms, so
  no ``(A, B, K)`` split is materialized.
* Optimization family: ``A = rho U U^T``, ``B = rho U`` with ``U`` an n x d
  matrix with orthonormal columns.  The optimal zero-input-penalty gain is
  ``K = -U^T`` and the optimal closed loop is zero.
"""

from dataclasses import dataclass
import json

import numpy as np

from .errors import NumericalError, ValidationError
from .lqr_core import LinearSystem, make_rng
from .matrix_equations import spectral_radius

MAX_DRAW_ATTEMPTS = 8


@dataclass(frozen=True)
class EvalInstance:
    L_star: np.ndarray
    M: np.ndarray
    sigma_w: float = 1.0
    tau: float | None = None
    gamma: float | None = None
    d_E: int | None = None
    seed: int | None = None

    @property
    def n(self):
        return self.L_star.shape[0]

    @property
    def rho(self):
        return spectral_radius(self.L_star)


@dataclass(frozen=True)
class OptInstance:
    system: LinearSystem
    U_star: np.ndarray
    K_star: np.ndarray
    rho: float
    seed: int | None = None

    @property
    def n(self):
        return self.system.n

    @property
    def d(self):
        return self.system.d


def random_orthonormal(n, k, seed, stream):
    """n x k matrix with orthonormal columns, Haar distributed (QR of a Gaussian).

    Redraws from the next substream when the Gaussian draw is rank deficient.
    """
    for attempt in range(MAX_DRAW_ATTEMPTS):
        G = make_rng(seed, attempt, stream).standard_normal((n, k))
        Qm, R = np.linalg.qr(G)
        diag = np.diag(R)
        if np.min(np.abs(diag), initial=np.inf) > 1e-10:
            return Qm * np.sign(diag)
    raise NumericalError(f"degenerate Gaussian draw after {MAX_DRAW_ATTEMPTS} attempts")


def make_eval_instance(n, d_E, tau, gamma, seed, sigma_w=1.0):
    """Closed loop ``tau P_E + gamma I`` with ``M = I``."""
    if not (0.0 <= tau < 1.0 and 0.0 <= gamma < 1.0 and tau + gamma < 1.0):
        raise ValidationError("need tau, gamma in [0, 1) with tau + gamma < 1")
    if not 0 <= d_E <= n:
        raise ValidationError("need 0 <= d_E <= n")
    if sigma_w <= 0:
        raise ValidationError("sigma_w must be positive")
    if d_E > 0:
        E = random_orthonormal(n, d_E, seed, "eval-subspace")
        P_E = E @ E.T
    else:
        P_E = np.zeros((n, n))
    L = tau * P_E + gamma * np.eye(n)
    L = 0.5 * (L + L.T)
    return EvalInstance(L_star=L, M=np.eye(n), sigma_w=float(sigma_w), tau=float(tau),
                        gamma=float(gamma), d_E=int(d_E), seed=seed)


def eval_instance_from_matrix(L_star, M=None, sigma_w=1.0):
    """Evaluation instance from an arbitrary stable closed loop."""
    L = np.atleast_2d(np.asarray(L_star, dtype=float))
    if spectral_radius(L) >= 1.0:
        raise ValidationError("closed loop must be stable")
    M = np.eye(L.shape[0]) if M is None else np.atleast_2d(np.asarray(M, dtype=float))
    return EvalInstance(L_star=L, M=M, sigma_w=float(sigma_w))


def make_opt_instance(n, d, rho, seed, sigma_w=1.0, sigma_u=1.0):
    """Instance ``(rho U U^T, rho U)`` with optimal gain ``-U^T``."""
    if not 1 <= d <= n:
        raise ValidationError("need 1 <= d <= n")
    if not 0.0 < rho < 1.0:
        raise ValidationError("need rho in (0, 1)")
    if sigma_w <= 0 or sigma_u <= 0:
        raise ValidationError("noise scales must be positive")
    U = random_orthonormal(n, d, seed, "opt-basis")
    sys = LinearSystem(A=rho * U @ U.T, B=rho * U, sigma_w=sigma_w, sigma_u=sigma_u)
    K = -U.T
    if np.max(np.abs(U.T @ U - np.eye(d))) > 1e-12:
        raise NumericalError("basis is not orthonormal")
    if np.max(np.abs(sys.A + sys.B @ K)) > 1e-12:
        raise NumericalError("optimal closed loop is not zero")
    return OptInstance(system=sys, U_star=U, K_star=K, rho=float(rho), seed=seed)


# --------------------------------------------------------------------------
# JSON round trip
# --------------------------------------------------------------------------

def _mat(a):
    return np.asarray(a, dtype=float).tolist()


def instance_to_dict(inst):
    if isinstance(inst, EvalInstance):
        return {
            "family": "eval",
            "L_star": _mat(inst.L_star),
            "M": _mat(inst.M),
            "sigma_w": inst.sigma_w,
            "tau": inst.tau,
            "gamma": inst.gamma,
            "d_E": inst.d_E,
            "seed": inst.seed,
        }
    if isinstance(inst, OptInstance):
        s = inst.system
        return {
            "family": "opt",
            "A": _mat(s.A),
            "B": _mat(s.B),
            "U_star": _mat(inst.U_star),
            "K_star": _mat(inst.K_star),
            "rho": inst.rho,
            "sigma_w": s.sigma_w,
            "sigma_u": s.sigma_u,
            "seed": inst.seed,
        }
    raise TypeError(f"cannot serialize {type(inst).__name__}")


def instance_from_dict(doc):
    family = doc.get("family")
    if family == "eval":
        return EvalInstance(
            L_star=np.array(doc["L_star"], dtype=float),
            M=np.array(doc["M"], dtype=float),
            sigma_w=float(doc["sigma_w"]),
            tau=doc.get("tau"),
            gamma=doc.get("gamma"),
            d_E=doc.get("d_E"),
            seed=doc.get("seed"),
        )
    if family == "opt":
        sys = LinearSystem(A=np.array(doc["A"], dtype=float), B=np.array(doc["B"], dtype=float),
                           sigma_w=doc["sigma_w"], sigma_u=doc["sigma_u"])
        return OptInstance(system=sys, U_star=np.array(doc["U_star"], dtype=float),
                           K_star=np.array(doc["K_star"], dtype=float), rho=float(doc["rho"]),
                           seed=doc.get("seed"))
    raise ValidationError(f"unknown instance family {family!r}")


def instance_to_json(inst):
    return json.dumps(instance_to_dict(inst), sort_keys=True)


def instance_from_json(text):
    return instance_from_dict(json.loads(text))
