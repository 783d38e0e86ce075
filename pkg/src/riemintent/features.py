"""Window -> feature vector.

The main path is the tangent-space feature: regularized sample covariance of
the window, projected at the training-set Frechet mean and vectorized. The
``covariance`` and ``raw`` kinds are the comparison baselines.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .dsp import MultichannelWindow

FEATURE_KINDS = ("tangent", "covariance", "raw")
DEFAULT_RELATIVE_EPSILON = 1e-6


@dataclass(frozen=True)
class EpsilonPolicy:
    """``relative``: eps = value * trace(C) / n; ``absolute``: eps = value."""

    kind: str = "relative"
    value: float = DEFAULT_RELATIVE_EPSILON

    def __post_init__(self):
        if self.kind not in ("relative", "absolute"):
            raise ValueError(f"unknown epsilon policy {self.kind!r}")
        if self.value < 0:
            raise ValueError("epsilon must be >= 0")


def _samples(window) -> np.ndarray:
    x = window.samples if isinstance(window, MultichannelWindow) else np.asarray(window, float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("window must be (W>=2, n)")
    return x


def scatter(window, denominator: str = "window") -> np.ndarray:
    """Mean-centered ``X^T X`` divided by W-1 (``window``) or n-1 (``channels``)."""
    x = _samples(window)
    xc = x - x.mean(axis=0)
    c = xc.T @ xc
    if denominator == "window":
        c /= x.shape[0] - 1
    elif denominator == "channels":
        c /= max(x.shape[1] - 1, 1)
    else:
        raise ValueError(f"unknown covariance denominator {denominator!r}")
    return (c + c.T) / 2.0


def sample_covariance(window, epsilon: float, denominator: str = "window") -> np.ndarray:
    """Regularized sample covariance ``C + epsilon*I``."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    c = scatter(window, denominator)
    c[np.diag_indices_from(c)] += epsilon
    return c


def resolve_epsilon(c: np.ndarray, policy: EpsilonPolicy) -> float:
    if policy.kind == "absolute":
        return policy.value
    return policy.value * float(np.trace(c)) / c.shape[0]


def regularized_covariance(window, policy: EpsilonPolicy, denominator: str = "window") -> np.ndarray:
    c = scatter(window, denominator)
    eps = resolve_epsilon(c, policy)
    if eps <= 0:
        # all-zero window under a relative ridge; fall back to a unit-scale ridge
        eps = policy.value if policy.value > 0 else spd.EIG_FLOOR
    c[np.diag_indices_from(c)] += eps
    return c


@dataclass
class FeatureExtractor:
    """Frozen per-subject feature map.

    ``reference_mean`` is only used (and required) for the ``tangent`` kind.
    """

    n_channels: int
    kind: str = "tangent"
    reference_mean: np.ndarray | None = None
    epsilon: EpsilonPolicy = field(default_factory=EpsilonPolicy)
    denominator: str = "window"
    weighted: bool = False
    converged: bool = True

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        self._factors = None
        if self.kind == "tangent":
            if self.reference_mean is None:
                raise ValueError("tangent features need a reference mean")
            mu = spd.as_spd(self.reference_mean)
            if mu.shape[0] != self.n_channels:
                raise ValueError("reference mean does not match the channel count")
            self.reference_mean = mu
            self._factors = spd.sqrtm_pair(mu)

    def covariance(self, window) -> np.ndarray:
        return regularized_covariance(window, self.epsilon, self.denominator)

    def feature_length(self, width: int | None = None) -> int:
        if self.kind == "raw":
            if width is None:
                raise ValueError("raw feature length depends on the window width")
            return width * self.n_channels
        return spd.feature_length(self.n_channels)

    def extract(self, window) -> np.ndarray:
        x = _samples(window)
        if x.shape[1] != self.n_channels:
            raise ValueError(f"expected {self.n_channels} channels, got {x.shape[1]}")
        if self.kind == "raw":
            return x.ravel().copy()
        c = self.covariance(x)
        if self.kind == "covariance":
            return spd.tangent_vectorize(c, self.weighted)
        s = spd.log_map_factored(*self._factors, c)
        return spd.tangent_vectorize(s, self.weighted)

    def extract_many(self, windows) -> np.ndarray:
        return np.array([self.extract(w) for w in windows])


def fit_reference(
    covariances,
    *,
    epsilon: EpsilonPolicy | None = None,
    denominator: str = "window",
    weighted: bool = False,
    tol: float = spd.DEFAULT_TOL,
    max_iter: int = spd.DEFAULT_MAX_ITER,
) -> FeatureExtractor:
    """Fit the tangent-space reference point on training covariances."""
    covs = list(covariances)
    if not covs:
        raise ValueError("fit_reference needs at least one covariance")
    res = spd.frechet_mean(covs, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(
            f"Frechet mean did not converge in {max_iter} iterations "
            f"(step norm {res.step_norm:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return FeatureExtractor(
        n_channels=res.mean.shape[0],
        kind="tangent",
        reference_mean=res.mean,
        epsilon=epsilon or EpsilonPolicy(),
        denominator=denominator,
        weighted=weighted,
        converged=res.converged,
    )


def extract(extractor: FeatureExtractor, window) -> np.ndarray:
    return extractor.extract(window)
