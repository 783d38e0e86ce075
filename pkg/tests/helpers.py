"""Shared generators and independent reference implementations for the tests."""
import numpy as np
from scipy import linalg


def random_spd(rng, n, cond=100.0, scale=1.0):
    """Random SPD matrix with eigenvalues log-spaced over ``[1, cond]`` times ``scale``."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    w = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    w[0], w[-1] = 1.0, cond  # pin the condition number
    return scale * (q * w) @ q.T


def ref_log_map(p, q):
    """Log map through scipy's general-purpose matrix functions."""
    ph = linalg.sqrtm(p).real
    pih = linalg.inv(ph)
    return ph @ linalg.logm(pih @ q @ pih).real @ ph


def ref_exp_map(p, s):
    ph = linalg.sqrtm(p).real
    pih = linalg.inv(ph)
    return ph @ linalg.expm(pih @ s @ pih) @ ph


def ref_geodesic_midpoint(p, q):
    ph = linalg.sqrtm(p).real
    pih = linalg.inv(ph)
    return ph @ linalg.sqrtm(pih @ q @ pih).real @ ph


def naive_covariance(x, denominator):
    """Double-loop mean-centered scatter divided by ``denominator``."""
    t, n = x.shape
    mean = [sum(x[k, i] for k in range(t)) / t for i in range(n)]
    c = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            c[i, j] = sum((x[k, i] - mean[i]) * (x[k, j] - mean[j]) for k in range(t)) / denominator
    return c


def naive_decision(sv, coef, bias, gamma, s):
    total = bias
    for v, a in zip(sv, coef):
        total += a * np.exp(-gamma * sum((vi - si) ** 2 for vi, si in zip(v, s)))
    return total


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def qp_dual_objective(x, y, c, gamma):
    """Optimal value of the soft-margin dual ``min 1/2 a'Qa - 1'a`` from cvxopt."""
    from cvxopt import matrix, solvers

    n = len(y)
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    q = np.outer(y, y) * np.exp(-gamma * d2)
    g = np.vstack([-np.eye(n), np.eye(n)])
    h = np.concatenate([np.zeros(n), np.full(n, c)])
    solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    sol = solvers.qp(
        matrix(q + 1e-12 * np.eye(n)), matrix(-np.ones(n)), matrix(g), matrix(h),
        matrix(y.astype(float)[None, :]), matrix(0.0),
    )
    return float(sol["primal objective"])


def kkt_violations(alpha, x, y, c, gamma, bias, tol):
    """List of human-readable KKT violations (empty when the model is consistent)."""
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    f = np.exp(-gamma * d2) @ (alpha * y) + bias
    m = y * f
    out = []
    if np.any(alpha < 0) or np.any(alpha > c):
        out.append("alpha outside [0, C]")
    if abs(float(alpha @ y)) > 1e-8:
        out.append(f"sum alpha*y = {alpha @ y:.3g}")
    eps = 1e-12 * c
    for i, (a, mi) in enumerate(zip(alpha, m)):
        if a <= eps and mi < 1 - tol:
            out.append(f"{i}: alpha=0 but margin {mi:.6f}")
        elif a >= c - eps and mi > 1 + tol:
            out.append(f"{i}: alpha=C but margin {mi:.6f}")
        elif eps < a < c - eps and abs(mi - 1) > tol:
            out.append(f"{i}: free but margin {mi:.6f}")
    return out
