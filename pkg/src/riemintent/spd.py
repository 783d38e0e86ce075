"""Affine-invariant geometry on the manifold of SPD matrices.

Log/Exp maps, the iterative Frechet (Karcher) mean and the upper-triangle
vectorization of tangent vectors. Matrices are plain ``numpy`` arrays; the
``as_spd`` / ``as_symmetric`` helpers symmetrize and validate them.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

EIG_FLOOR = 1e-12
NEGATIVE_EIG_TOL = 1e-9  # relative; more negative than this is not round-off
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


class NotSPDError(ValueError):
    """Raised when a matrix cannot be treated as SPD; regularize upstream."""


def as_symmetric(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return (a + a.T) / 2.0


def as_spd(a) -> np.ndarray:
    """Symmetrize ``a`` and check that it is positive definite."""
    s = as_symmetric(a)
    if not np.all(np.isfinite(s)):
        raise NotSPDError("matrix has non-finite entries")
    try:
        np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("matrix is not positive definite") from exc
    return s


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _eigh(s: np.ndarray, clamp: bool):
    try:
        w, v = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("eigendecomposition failed") from exc
    if clamp:
        top = w[-1]
        if not top > 0 or w[0] < -NEGATIVE_EIG_TOL * top:
            raise NotSPDError("matrix is not positive definite; regularize it first")
        w = np.maximum(w, EIG_FLOOR * top)
    return w, v


def _apply(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (v * w) @ v.T


def sqrtm_pair(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P^1/2, P^-1/2)`` from one clamped eigendecomposition."""
    w, v = _eigh(p, clamp=True)
    r = np.sqrt(w)
    return _apply(v, r), _apply(v, 1.0 / r)


def logm_spd(s: np.ndarray) -> np.ndarray:
    w, v = _eigh(s, clamp=True)
    return _apply(v, np.log(w))


def expm_sym(s: np.ndarray) -> np.ndarray:
    w, v = _eigh(s, clamp=False)
    return _apply(v, np.exp(w))


def log_map_factored(p_sqrt: np.ndarray, p_isqrt: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Log map with precomputed square-root factors of the base point."""
    inner = as_symmetric(p_isqrt @ point @ p_isqrt)
    out = p_sqrt @ logm_spd(inner) @ p_sqrt
    return (out + out.T) / 2.0


def log_map(base, point) -> np.ndarray:
    """Project ``point`` onto the tangent space at ``base``.

    Computes ``P^1/2 log(P^-1/2 Q P^-1/2) P^1/2``. The result is symmetric.
    """
    base = as_symmetric(base)
    point = as_symmetric(point)
    _check_dims(base, point)
    p_sqrt, p_isqrt = sqrtm_pair(base)
    return log_map_factored(p_sqrt, p_isqrt, point)


def exp_map_factored(p_sqrt: np.ndarray, p_isqrt: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    inner = as_symmetric(p_isqrt @ tangent @ p_isqrt)
    out = p_sqrt @ expm_sym(inner) @ p_sqrt
    return (out + out.T) / 2.0


def exp_map(base, tangent) -> np.ndarray:
    """Map a symmetric ``tangent`` at ``base`` back onto the manifold."""
    base = as_symmetric(base)
    tangent = as_symmetric(tangent)
    _check_dims(base, tangent)
    p_sqrt, p_isqrt = sqrtm_pair(base)
    return exp_map_factored(p_sqrt, p_isqrt, tangent)


class MeanResult(NamedTuple):
    mean: np.ndarray
    converged: bool
    iterations: int
    step_norm: float


def _regularize(m: np.ndarray) -> np.ndarray:
    m = as_symmetric(m)
    w, v = np.linalg.eigh(m)
    if w[0] > EIG_FLOOR * w[-1] and w[-1] > 0:
        return m
    return _apply(v, np.maximum(w, EIG_FLOOR * max(w[-1], EIG_FLOOR)))


def frechet_mean(points, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> MeanResult:
    """Karcher mean by fixed-point iteration.

    Starts from the arithmetic mean and repeats ``u = mean_i Log_mu(x_i)``,
    ``mu = Exp_mu(u)`` until ``||u||_F < tol``. The update is skipped on the
    converging step, so a single point is returned unchanged. When
    ``max_iter`` is exhausted the last iterate is returned with
    ``converged=False``.

    The plain iteration can oscillate when the points are very spread out
    (e.g. rank-deficient covariances of short windows); whenever the
    gradient norm grows, the step along ``u`` is halved.
    """
    pts = [as_symmetric(p) for p in points]
    if not pts:
        raise ValueError("frechet_mean needs at least one point")
    if tol <= 0:
        raise ValueError("tol must be positive")
    for p in pts[1:]:
        _check_dims(pts[0], p)

    stack = np.stack(pts)
    mu = _regularize(stack.mean(axis=0))
    norm = prev = np.inf
    step = 1.0
    for it in range(1, max_iter + 1):
        p_sqrt, p_isqrt = sqrtm_pair(mu)
        u = p_sqrt @ _mean_logm(p_isqrt @ stack @ p_isqrt) @ p_sqrt
        u = (u + u.T) / 2.0
        norm = float(np.linalg.norm(u))
        if norm < tol:
            return MeanResult(mu, True, it, norm)
        if norm > prev:
            step *= 0.5
        prev = norm
        mu = exp_map_factored(p_sqrt, p_isqrt, step * u)
    return MeanResult(mu, False, max_iter, norm)


def _mean_logm(inner: np.ndarray) -> np.ndarray:
    inner = (inner + np.swapaxes(inner, -1, -2)) / 2.0
    w, v = np.linalg.eigh(inner)
    w = np.maximum(w, EIG_FLOOR * w[:, -1:])
    logs = (v * np.log(w)[:, None, :]) @ np.swapaxes(v, -1, -2)
    return logs.mean(axis=0)


def tangent_vectorize(tangent, weighted: bool = False) -> np.ndarray:
    """Row-major upper triangle (diagonal included) of a symmetric matrix.

    ``weighted=True`` scales off-diagonal entries by sqrt(2), which makes the
    Euclidean norm of the vector equal the Frobenius norm of the matrix.
    """
    s = as_symmetric(tangent)
    rows, cols = np.triu_indices(s.shape[0])
    vec = s[rows, cols]
    if weighted:
        vec = np.where(rows == cols, vec, np.sqrt(2.0) * vec)
    return vec


def tangent_unvectorize(vec, weighted: bool = False) -> np.ndarray:
    """Inverse of :func:`tangent_vectorize`."""
    vec = np.asarray(vec, dtype=float)
    n = int(round((np.sqrt(8 * vec.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != vec.size:
        raise ValueError(f"length {vec.size} is not a triangular number")
    rows, cols = np.triu_indices(n)
    vals = vec if not weighted else np.where(rows == cols, vec, vec / np.sqrt(2.0))
    out = np.zeros((n, n))
    out[rows, cols] = vals
    out[cols, rows] = vals
    return out


def feature_length(n: int) -> int:
    return n * (n + 1) // 2
