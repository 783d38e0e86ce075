"""Soft-margin RBF support vector machine.

Training solves the dual

    min_a  1/2 a^T Q a - e^T a,   Q_ij = y_i y_j K(s_i, s_j)
    s.t.   y^T a = 0,  0 <= a_i <= C

with sequential minimal optimization using second-order working-pair
selection (Fan, Chen & Lin, JMLR 2005). Class scores come from a Platt
sigmoid fitted on out-of-fold decision values.

Label encoding is fixed: right = +1, left = -1.
"""
from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

LEFT, RIGHT = -1, 1
TAU = 1e-12
FULL_GRAM_MAX_N = 20000
GRAM_MEMORY_BYTES = 1_500_000_000
ROW_CACHE_BYTES = 400_000_000
DEFAULT_C = 0.1
DEFAULT_GAMMA = 0.5


@dataclass(frozen=True)
class ClassScore:
    p_left: float
    p_right: float

    def __post_init__(self):
        for p in (self.p_left, self.p_right):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if abs(self.p_left + self.p_right - 1.0) > 1e-9:
            raise ValueError("class probabilities must sum to 1")


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    c_param: float
    platt_a: float | None = None
    platt_b: float | None = None
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if not (self.gamma > 0 and self.c_param > 0):
            raise ValueError("gamma and C must be positive")
        sv = np.asarray(self.support_vectors, dtype=float)
        object.__setattr__(self, "_sv_sq", np.einsum("ij,ij->i", sv, sv) if sv.ndim == 2 else np.zeros(0))

    @property
    def n_support(self) -> int:
        return len(self.dual_coeffs)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def calibrated(self) -> bool:
        return self.platt_a is not None and self.platt_b is not None


def rbf_kernel(a, b, gamma: float) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(x: np.ndarray, z: np.ndarray, gamma: float, x_sq=None, z_sq=None) -> np.ndarray:
    """Kernel matrix ``K[i, j] = exp(-gamma * ||x_i - z_j||^2)``."""
    x_sq = np.einsum("ij,ij->i", x, x) if x_sq is None else x_sq
    z_sq = np.einsum("ij,ij->i", z, z) if z_sq is None else z_sq
    d2 = x_sq[:, None] + z_sq[None, :] - 2.0 * (x @ z.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


class _KernelRows:
    """Kernel row provider: dense Gram when it fits, otherwise an LRU row cache."""

    def __init__(self, x: np.ndarray, gamma: float):
        self.x = x
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", x, x)
        n = len(x)
        self.full = None
        if n <= FULL_GRAM_MAX_N and n * n * 8 <= GRAM_MEMORY_BYTES:
            self.full = rbf_gram(x, x, gamma, self.sq, self.sq)
            np.fill_diagonal(self.full, 1.0)
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cap = max(2, ROW_CACHE_BYTES // max(8 * n, 1))

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self._cache.get(i)
        if r is not None:
            self._cache.move_to_end(i)
            return r
        r = rbf_gram(self.x[i : i + 1], self.x, self.gamma, self.sq[i : i + 1], self.sq)[0]
        r[i] = 1.0
        self._cache[i] = r
        if len(self._cache) > self._cap:
            self._cache.popitem(last=False)
        return r


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 (left) or +1 (right)")
    return y.astype(float)


def smo_solve(rows, y: np.ndarray, c: float, tol: float, max_iter: int):
    """Run SMO on kernel rows. Returns ``(alpha, rho, converged, iterations)``."""
    n = len(y)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False
    it = 0
    while it < max_iter:
        yg = -y * grad
        up = np.where(y > 0, alpha < c, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < c)
        if not up.any() or not low.any():
            converged = True
            break
        cand = np.where(up, yg, -np.inf)
        i = int(np.argmax(cand))
        g_max = cand[i]
        g_min = np.min(np.where(low, yg, np.inf))
        if g_max - g_min < tol:
            converged = True
            break
        k_i = rows.row(i)
        b = g_max - yg
        ok = low & (b > 0)
        a = 2.0 - 2.0 * k_i  # K_ii = K_jj = 1 for RBF
        a = np.where(a > 0, a, TAU)
        score = np.where(ok, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        k_j = rows.row(j)

        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(2.0 - 2.0 * k_i[j], TAU)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > c:
                    ai, aj = c, c - diff
            elif aj > c:
                aj, ai = c, c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > c:
                if ai > c:
                    ai, aj = c, total - c
            elif aj < 0:
                aj, ai = 0.0, total
            if total > c:
                if aj > c:
                    aj, ai = c, total - c
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * (ai - ai_old) * k_i + y[j] * (aj - aj_old) * k_j)
        it += 1

    return alpha, _rho(alpha, grad, y, c), converged, it


def _rho(alpha, grad, y, c) -> float:
    yg = y * grad
    at_upper = alpha >= c
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def dual_objective(alpha, x, y, gamma: float) -> float:
    """``1/2 a^T Q a - sum(a)`` for the RBF dual (minimization form)."""
    y = np.asarray(y, dtype=float)
    k = rbf_gram(np.asarray(x, float), np.asarray(x, float), gamma)
    ay = alpha * y
    return float(0.5 * ay @ k @ ay - alpha.sum())


def train(
    features,
    labels,
    C: float = DEFAULT_C,
    gamma: float = DEFAULT_GAMMA,
    tol: float = 1e-3,
    max_iter: int | None = None,
    return_alpha: bool = False,
):
    """Fit an RBF-SVM. Labels are -1 (left) / +1 (right)."""
    x = np.asarray(features, dtype=float)
    y = _check_labels(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (N, d) aligned with labels")
    if len(y) < 2 or np.all(y == y[0]):
        raise ValueError("training needs at least two examples from both classes")
    if not (C > 0 and gamma > 0):
        raise ValueError("C and gamma must be positive")
    max_iter = 100 * len(y) if max_iter is None else max_iter

    rows = _KernelRows(x, gamma)
    alpha, rho, converged, iters = smo_solve(rows, y, C, tol, max_iter)
    if not converged:
        warnings.warn(f"SMO stopped at the iteration cap ({max_iter})", RuntimeWarning, stacklevel=2)
    log.debug("SMO finished after %d iterations (converged=%s)", iters, converged)
    sv = alpha > 0
    model = SvmModel(
        support_vectors=x[sv].copy(),
        dual_coeffs=(alpha * y)[sv],
        bias=-rho,
        gamma=float(gamma),
        c_param=float(C),
        converged=converged,
        iterations=iters,
    )
    return (model, alpha) if return_alpha else model


def decision_value(model: SvmModel, s) -> float:
    s = np.asarray(s, dtype=float)
    if model.n_support == 0:
        return float(model.bias)
    if s.shape != (model.dim,):
        raise ValueError(f"feature length {s.shape} does not match model ({model.dim})")
    d2 = model._sv_sq + s @ s - 2.0 * (model.support_vectors @ s)
    k = np.exp(-model.gamma * np.maximum(d2, 0.0))
    return float(model.dual_coeffs @ k + model.bias)


def decision_values(model: SvmModel, features, chunk: int = 2048) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if model.n_support == 0:
        return np.full(len(x), float(model.bias))
    if x.shape[1] != model.dim:
        raise ValueError(f"feature length {x.shape[1]} does not match model ({model.dim})")
    sv_sq = model._sv_sq
    out = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        k = rbf_gram(x[lo : lo + chunk], model.support_vectors, model.gamma, z_sq=sv_sq)
        out[lo : lo + chunk] = k @ model.dual_coeffs + model.bias
    return out


def predict(model: SvmModel, features) -> np.ndarray:
    f = decision_values(model, features)
    return np.where(f >= 0, RIGHT, LEFT)


# --- Platt scaling --------------------------------------------------------


def _platt_targets(y: np.ndarray) -> np.ndarray:
    n_pos = float(np.sum(y > 0))
    n_neg = float(np.sum(y <= 0))
    return np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def platt_nll(a: float, b: float, f, y) -> float:
    """Negative Bernoulli log-likelihood of ``1/(1+exp(a f + b))`` under Platt targets."""
    f = np.asarray(f, dtype=float)
    t = _platt_targets(np.asarray(y))
    z = a * f + b
    return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                 (t - 1.0) * z + np.log1p(np.exp(-np.abs(z))))))


def fit_sigmoid(f, y, max_iter: int = 100, eps: float = 1e-5) -> tuple[float, float, bool]:
    """Newton's method with backtracking (Lin, Lin & Weng 2007).

    Returns ``(a, b, converged)``.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y)
    t = _platt_targets(y)
    n_pos = float(np.sum(y > 0))
    n_neg = float(np.sum(y <= 0))
    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = platt_nll(a, b, f, y)
    for _ in range(max_iter):
        z = a * f + b
        ez = np.exp(-np.abs(z))
        p = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))  # 1/(1+exp(z))
        q = 1.0 - p
        d2 = p * q
        h11 = 1e-12 + np.sum(f * f * d2)
        h22 = 1e-12 + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < eps and abs(g2) < eps:
            return a, b, True
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = platt_nll(na, nb, f, y)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            return a, b, False
    return a, b, False


def _folds(n: int, k: int, groups=None) -> list[np.ndarray]:
    idx = np.arange(n)
    if groups is None:
        return [chunk for chunk in np.array_split(idx, k) if len(chunk)]
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    return [idx[np.isin(groups, part)] for part in np.array_split(uniq, k) if len(part)]


def out_of_fold_decisions(features, labels, C, gamma, tol=1e-3, folds=3, groups=None) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    y = _check_labels(labels)
    f = np.full(len(y), np.nan)
    for held in _folds(len(y), folds, groups):
        mask = np.ones(len(y), bool)
        mask[held] = False
        if np.unique(y[mask]).size < 2:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sub = train(x[mask], y[mask], C=C, gamma=gamma, tol=tol)
        f[held] = decision_values(sub, x[held])
    return f


def calibrate(model: SvmModel, features, labels, folds: int = 3, groups=None, tol: float = 1e-3) -> SvmModel:
    """Attach Platt parameters fitted on out-of-fold decision values.

    ``groups`` (e.g. trial ids) keeps correlated samples in the same fold.
    """
    y = _check_labels(labels)
    if np.unique(y).size < 2:
        raise ValueError("calibration set must contain both classes")
    f = out_of_fold_decisions(features, y, model.c_param, model.gamma, tol, folds, groups)
    missing = np.isnan(f)
    if missing.any():
        f[missing] = decision_values(model, np.asarray(features, float)[missing])
    if not np.all(np.isfinite(f)) or np.ptp(f) < 1e-12:
        warnings.warn("degenerate decision values; using default sigmoid", RuntimeWarning, stacklevel=2)
        return replace(model, platt_a=-1.0, platt_b=0.0)
    a, b, ok = fit_sigmoid(f, y)
    if not (ok and np.isfinite(a) and np.isfinite(b)):
        warnings.warn("sigmoid fit failed; using default sigmoid", RuntimeWarning, stacklevel=2)
        return replace(model, platt_a=-1.0, platt_b=0.0)
    return replace(model, platt_a=float(a), platt_b=float(b))


def _sigmoid(model: SvmModel, f):
    z = model.platt_a * np.asarray(f, dtype=float) + model.platt_b
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))


def score_from_decision(model: SvmModel, f: float) -> ClassScore:
    if not model.calibrated:
        raise ValueError("model is not calibrated")
    p_right = float(_sigmoid(model, f))
    return ClassScore(p_left=1.0 - p_right, p_right=p_right)


def predict_proba(model: SvmModel, s) -> ClassScore:
    return score_from_decision(model, decision_value(model, s))


def predict_proba_many(model: SvmModel, features) -> np.ndarray:
    """``(N, 2)`` array of ``[p_left, p_right]``."""
    if not model.calibrated:
        raise ValueError("model is not calibrated")
    p_right = _sigmoid(model, decision_values(model, features))
    return np.column_stack([1.0 - p_right, p_right])
