"""Vectorization and Kronecker algebra on symmetric matrices.

Conventions
-----------
* ``vec`` stacks columns (Fortran order), so ``vec(A X B) = (B^T kron A) vec(X)``.
* ``svec`` lists the upper triangle row by row, i.e. ``(0,0), (0,1), ..., (0,n-1),
  (1,1), ...``, with off-diagonal entries multiplied by ``sqrt(2)``.  With this
  weighting ``<svec(M1), svec(M2)> = Tr(M1 M2)`` for symmetric ``M1, M2``.
* ``sym_kron(A, B)`` is the operator on svec-space that maps ``svec(S)`` to
  ``svec((A S B^T + B S A^T) / 2)``.

Symmetric vectors are plain 1-d ``ndarray`` objects of length ``n(n+1)/2`` and
symmetric Kronecker operators are plain square ``ndarray`` objects.
"""

from functools import lru_cache

import numpy as np

from .errors import DimensionError, SymmetryError

SQRT2 = np.sqrt(2.0)
SYMMETRY_RTOL = 1e-10


def tri_dim(n):
    """Length n(n+1)/2 of svec for an n x n matrix."""
    return n * (n + 1) // 2


def tri_order(p):
    """Invert ``tri_dim``: return n with n(n+1)/2 == p, or raise DimensionError."""
    n = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if n < 1 or tri_dim(n) != p:
        raise DimensionError(f"length {p} is not a triangular number n(n+1)/2")
    return n


@lru_cache(maxsize=64)
def _svec_layout(n):
    rows, cols = np.triu_indices(n)
    weights = np.where(rows == cols, 1.0, SQRT2)
    rows.setflags(write=False)
    cols.setflags(write=False)
    weights.setflags(write=False)
    return rows, cols, weights


def vec(X):
    """Column-stacking vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, shape):
    """Inverse of :func:`vec` for a matrix of the given shape."""
    return np.asarray(v).reshape(shape, order="F")


def _check_symmetric(S, rtol=SYMMETRY_RTOL):
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    asym = float(np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0))
    if asym > rtol * scale:
        raise SymmetryError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def svec(S, check=True):
    """Symmetric vectorization.

    Accepts a stack of matrices with shape ``(..., n, n)`` and returns an array
    of shape ``(..., n(n+1)/2)``.

    Parameters
    ----------
    S : array_like
        Symmetric matrix (or stack of them).
    check : bool
        Raise :class:`SymmetryError` when ``S`` is not symmetric to relative
        tolerance 1e-10.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise DimensionError(f"svec expects square matrices, got shape {S.shape}")
    if check:
        _check_symmetric(S)
    rows, cols, weights = _svec_layout(S.shape[-1])
    return S[..., rows, cols] * weights


def smat(v):
    """Inverse of :func:`svec`; accepts shape ``(..., n(n+1)/2)``."""
    v = np.asarray(v, dtype=float)
    n = tri_order(v.shape[-1])
    rows, cols, weights = _svec_layout(n)
    S = np.zeros(v.shape[:-1] + (n, n))
    vals = v / weights
    S[..., rows, cols] = vals
    S[..., cols, rows] = vals
    return S


def outer_svec(x):
    """Feature map ``phi(x) = svec(x x^T)`` for vectors of shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    rows, cols, weights = _svec_layout(x.shape[-1])
    return x[..., rows] * x[..., cols] * weights


def kron(A, B):
    """Standard Kronecker product (thin wrapper around :func:`numpy.kron`)."""
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


@lru_cache(maxsize=64)
def svec_projector(n):
    """Matrix ``Gamma`` of shape ``(n(n+1)/2, n^2)`` with ``Gamma vec(S) = svec(S)``.

    Rows are orthonormal, so ``Gamma^T svec(S) = vec(S)`` for symmetric ``S``.
    """
    rows, cols, _ = _svec_layout(n)
    G = np.zeros((tri_dim(n), n * n))
    for k, (i, j) in enumerate(zip(rows, cols)):
        if i == j:
            G[k, i + j * n] = 1.0
        else:
            G[k, i + j * n] = 1.0 / SQRT2
            G[k, j + i * n] = 1.0 / SQRT2
    G.setflags(write=False)
    return G


def sym_kron(A, B):
    """Symmetric Kronecker product ``A (x)_s B = 1/2 Gamma (A kron B + B kron A) Gamma^T``.

    Satisfies ``sym_kron(A, A) @ svec(S) == svec(A S A^T)`` and
    ``sym_kron(A, B) == sym_kron(B, A)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DimensionError(f"sym_kron needs equal square factors, got {A.shape} and {B.shape}")
    G = svec_projector(A.shape[0])
    return 0.5 * G @ (np.kron(A, B) + np.kron(B, A)) @ G.T


def gaussian_triple_moment(A1, A2, A3):
    """E[(g'A1g)(g'A2g)(g'A3g)] for g ~ N(0, I).

    Closed form for the product of three Gaussian quadratic forms::

        TrA1 TrA2 TrA3 + 2 (TrA1 Tr(A2A3) + TrA2 Tr(A1A3) + TrA3 Tr(A1A2))
        + 8 Tr(A1A2A3)
    """
    mats = [np.atleast_2d(np.asarray(A, dtype=float)) for A in (A1, A2, A3)]
    shape = mats[0].shape
    for M in mats:
        if M.shape != shape or shape[0] != shape[1]:
            raise DimensionError("gaussian_triple_moment needs equal square matrices")
        _check_symmetric(M)
    A1, A2, A3 = mats
    t1, t2, t3 = np.trace(A1), np.trace(A2), np.trace(A3)
    return float(
        t1 * t2 * t3
        + 2.0 * (t1 * np.trace(A2 @ A3) + t2 * np.trace(A1 @ A3) + t3 * np.trace(A1 @ A2))
        + 8.0 * np.trace(A1 @ A2 @ A3)
    )


def gaussian_pair_moment(A1, A2):
    """E[(g'A1g)(g'A2g)] = TrA1 TrA2 + 2 Tr(A1A2) for g ~ N(0, I) and symmetric A1, A2."""
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    return float(np.trace(A1) * np.trace(A2) + 2.0 * np.trace(A1 @ A2))
