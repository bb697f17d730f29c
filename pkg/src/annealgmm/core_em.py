"""Spherical, uniform-weight Gaussian mixture: data containers and EM kernels.

Every annealing driver in the package is built from the four kernels here:
:func:`e_step`, :func:`m_step`, :func:`weighted_covariance` and
:func:`component_scales`.  Mixture weights are fixed to ``1/K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

EPS_WEIGHT = 1e-12


class DegenerateComponentError(ValueError):
    """A component carries (numerically) zero total responsibility."""

    def __init__(self, k, weight=0.0):
        super().__init__(f"component {k} is degenerate (total weight {weight:.3g})")
        self.k = k
        self.weight = weight


@dataclass
class Dataset:
    """Point cloud with optional ground truth.

    ``labels`` are 0-based integers in ``range(q)``.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    q: Optional[int] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be an N x D array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[0],):
                raise ValueError("labels must have one entry per point")
            if not np.issubdtype(lab.dtype, np.integer):
                if not np.all(lab == np.round(lab)):
                    raise ValueError("labels must be integers")
            lab = lab.astype(int)
            if self.q is None:
                self.q = int(lab.max()) + 1
            if lab.min() < 0 or lab.max() >= self.q or self.q < 1:
                raise ValueError(f"labels must lie in 0..{self.q - 1}")
            self.labels = lab

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def center(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass
class MixtureState:
    means: np.ndarray
    variances: np.ndarray
    responsibilities: np.ndarray

    @property
    def weights_sum(self) -> np.ndarray:
        return self.responsibilities.sum(axis=0)

    @property
    def k(self) -> int:
        return self.means.shape[0]


@dataclass
class ComponentScales:
    """Extreme eigenvalues of each component's weighted covariance."""

    gamma_max: np.ndarray
    gamma_min: np.ndarray


def as_points(data: Union[Dataset, np.ndarray]) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.points
    pts = np.asarray(data, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite coordinates")
    return pts


def _check_params(means, variances, dim):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_1d(np.asarray(variances, dtype=float))
    if means.shape[1] != dim:
        raise ValueError(f"means have dimension {means.shape[1]}, data has {dim}")
    if variances.shape != (means.shape[0],):
        raise ValueError("need one variance per component")
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
        raise ValueError("non-finite mixture parameters")
    if np.any(variances <= 0):
        raise ValueError("variances must be strictly positive")
    return means, variances


def squared_distances(X, means):
    return cdist(X, means, "sqeuclidean")


def e_step(data, means, variances) -> np.ndarray:
    """Posterior responsibilities ``p_ik`` of each component for each point.

    The exponent is ``-||x_i - mu_k||^2 / (2 sigma_k^2)`` with no
    ``sigma_k^-D`` prefactor; rows are normalised in the log domain after
    subtracting the per-row maximum so that very small variances do not
    underflow.
    """
    X = as_points(data)
    means, variances = _check_params(means, variances, X.shape[1])
    logits = -squared_distances(X, means) / (2.0 * variances)
    logits -= logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def m_step_means(data, resp, eps_weight=EPS_WEIGHT):
    X = as_points(data)
    resp = np.asarray(resp, dtype=float)
    nk = resp.sum(axis=0)
    bad = np.flatnonzero(nk < eps_weight)
    if bad.size:
        raise DegenerateComponentError(int(bad[0]), float(nk[bad[0]]))
    return (resp.T @ X) / nk[:, None]


def m_step_variances(data, resp, means, eps_weight=EPS_WEIGHT):
    X = as_points(data)
    resp = np.asarray(resp, dtype=float)
    nk = resp.sum(axis=0)
    bad = np.flatnonzero(nk < eps_weight)
    if bad.size:
        raise DegenerateComponentError(int(bad[0]), float(nk[bad[0]]))
    scatter = np.einsum("ik,ik->k", resp, squared_distances(X, means))
    return scatter / (X.shape[1] * nk)


def m_step(data, resp, eps_weight=EPS_WEIGHT):
    """Closed-form M-step: weighted means, then isotropic variances."""
    means = m_step_means(data, resp, eps_weight)
    return means, m_step_variances(data, resp, means, eps_weight)


def weighted_covariance(data, weights, mean) -> np.ndarray:
    """``(1/N_k) sum_i p_ik (x_i - mu_k)(x_i - mu_k)^T`` as a D x D matrix."""
    X = as_points(data)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total < EPS_WEIGHT:
        raise DegenerateComponentError(-1, float(total))
    diff = X - np.asarray(mean, dtype=float)
    cov = (diff * w[:, None]).T @ diff / total
    return 0.5 * (cov + cov.T)


def weighted_covariances(data, resp, means) -> np.ndarray:
    """Stack of all K weighted covariances, shape (K, D, D)."""
    X = as_points(data)
    resp = np.asarray(resp, dtype=float)
    means = np.atleast_2d(means)
    nk = resp.sum(axis=0)
    bad = np.flatnonzero(nk < EPS_WEIGHT)
    if bad.size:
        raise DegenerateComponentError(int(bad[0]), float(nk[bad[0]]))
    # E[x x^T] - mu mu^T loses precision when clusters sit far from the
    # origin, so centre per component.
    covs = np.empty((means.shape[0], X.shape[1], X.shape[1]))
    for k in range(means.shape[0]):
        diff = X - means[k]
        covs[k] = (diff * resp[:, k:k + 1]).T @ diff / nk[k]
    return 0.5 * (covs + np.transpose(covs, (0, 2, 1)))


def component_scales(data, state: MixtureState) -> ComponentScales:
    covs = weighted_covariances(data, state.responsibilities, state.means)
    eig = np.linalg.eigvalsh(covs)
    return ComponentScales(gamma_max=eig[:, -1], gamma_min=np.maximum(eig[:, 0], 0.0))


def log_likelihood(data, state_or_means, variances=None) -> float:
    """Total log-likelihood under the uniform mixture ``(1/K) sum_k N(x; mu_k, sigma_k^2 I)``."""
    X = as_points(data)
    if isinstance(state_or_means, MixtureState):
        means, variances = state_or_means.means, state_or_means.variances
    else:
        means = state_or_means
    means, variances = _check_params(means, variances, X.shape[1])
    dim = X.shape[1]
    logdens = (-squared_distances(X, means) / (2.0 * variances)
               - 0.5 * dim * np.log(2.0 * np.pi * variances))
    return float(np.sum(logsumexp(logdens, axis=1)) - X.shape[0] * np.log(means.shape[0]))
