"""Critical temperatures from linear stability of the collapsed EM fixed point.

Above the critical temperature every component sits at the centre of mass
and the EM map is a contraction around that point.  The functions here
build the linearised map for the three annealing flavours and locate the
temperature at which its spectral radius reaches one.  All formulas assume
centred data; centring is done internally.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .core_em import as_points

log = logging.getLogger(__name__)

TOL_ROOT = 1e-6


class BracketError(RuntimeError):
    pass


@dataclass
class StabilityReport:
    mode: str
    t_c: float
    spectral_radius_at_tc: float
    matrix_dim: int
    sigma0_at_tc: Optional[float] = None

    def to_dict(self):
        return asdict(self)


def _centered(data):
    X = as_points(data)
    return X - X.mean(axis=0)


def data_covariance(data) -> np.ndarray:
    Xc = _centered(data)
    cov = Xc.T @ Xc / Xc.shape[0]
    return 0.5 * (cov + cov.T)


def tc_hard(data) -> StabilityReport:
    """Largest eigenvalue of the data covariance."""
    C = data_covariance(data)
    t_c = float(np.linalg.eigvalsh(C)[-1])
    return StabilityReport("hard", t_c, 1.0, C.shape[0])


def sigma0_fixed_point(data, K, lambda_sigma, sigma2) -> float:
    """Common variance of the collapsed components under the soft prior."""
    Xc = _centered(data)
    n, dim = Xc.shape
    s2 = float(np.sum(Xc * Xc))
    w = 4.0 * lambda_sigma * K
    return (w * sigma2 + s2) / (n * dim + w)


def soft_stability_matrix(data, K, lambda_sigma, sigma2) -> np.ndarray:
    """Order-(D+1) block matrix ``[[C/s0, a^T], [b, c]]`` of the soft-annealing linearisation.

    ``s0`` is :func:`sigma0_fixed_point`.  The first D rows/columns act on
    mean perturbations, the last on the variance perturbation.
    """
    Xc = _centered(data)
    n, dim = Xc.shape
    s0 = sigma0_fixed_point(Xc, K, lambda_sigma, sigma2)
    m = n * dim + 4.0 * lambda_sigma * K
    r2 = np.sum(Xc * Xc, axis=1)
    third = r2 @ Xc
    C = Xc.T @ Xc / n
    M = np.empty((dim + 1, dim + 1))
    M[:dim, :dim] = C / s0
    M[:dim, dim] = third / (2.0 * n * s0 ** 2)
    M[dim, :dim] = third / (m * s0)
    M[dim, dim] = (np.sum(r2 * r2) / s0 - dim * np.sum(r2)) / (2.0 * s0 * m)
    return M


def spectral_radius(matrix) -> float:
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue solver failed: {exc}") from exc
    return float(np.max(np.abs(eig))) if eig.size else 0.0


def _bisect_unit_radius(radius: Callable[[float], float], lo, hi, tol=TOL_ROOT,
                        grow_hi=True, max_grow=60):
    """Find sigma2 in [lo, hi] with radius(sigma2) = 1, radius > 1 below the root."""
    f_lo, f_hi = radius(lo) - 1.0, radius(hi) - 1.0
    grown = 0
    while f_hi > 0 and grow_hi and grown < max_grow:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = radius(hi) - 1.0
        grown += 1
    if not (f_lo > 0 >= f_hi):
        raise BracketError(
            f"no unit crossing of the spectral radius in [{lo:.6g}, {hi:.6g}] "
            f"(radius-1 = {f_lo:.3g} at the low end, {f_hi:.3g} at the high end)")
    # bisect in log-space; the bracket can span many decades
    while hi - lo > tol * hi:
        mid = np.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        f_mid = radius(mid) - 1.0
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    # one false-position step in log-log coordinates; exact when the radius
    # is a power law of sigma2 (e.g. the hard and lambda_mu = 0 cases)
    g_lo, g_hi = np.log1p(f_lo), np.log1p(f_hi)
    if g_lo > g_hi:
        u = np.log(lo) + g_lo * (np.log(hi) - np.log(lo)) / (g_lo - g_hi)
        root = float(np.exp(u))
        if lo <= root <= hi:
            return root
    return hi


def tc_soft(data, K, lambda_sigma, tol=TOL_ROOT) -> StabilityReport:
    if K < 2:
        raise ValueError("soft critical temperature needs K >= 2")
    if lambda_sigma <= 0:
        raise ValueError("lambda_sigma must be positive")
    Xc = _centered(data)
    t_hi = 10.0 * tc_hard(Xc).t_c

    def radius(s2):
        return spectral_radius(soft_stability_matrix(Xc, K, lambda_sigma, s2))

    t_c = _bisect_unit_radius(radius, 1e-6 * t_hi, t_hi, tol)
    return StabilityReport("soft", t_c, radius(t_c), Xc.shape[1] + 1,
                           sigma0_at_tc=sigma0_fixed_point(Xc, K, lambda_sigma, t_c))


def graph_stability_matrix(data, adjacency, lambda_mu, sigma2) -> np.ndarray:
    """``[(I - J/K) kron C] [sigma2 I + (2 lambda K sigma2^2 / N) L kron I_D]^-1``."""
    Xc = _centered(data)
    n, dim = Xc.shape
    A = np.asarray(adjacency, dtype=float)
    K = A.shape[0]
    if A.shape != (K, K) or not np.allclose(A, A.T) or np.any(np.diag(A) != 0):
        raise ValueError("adjacency must be symmetric with a zero diagonal")
    C = Xc.T @ Xc / n
    L = np.diag(A.sum(axis=0)) - A
    U = np.eye(K) - np.ones((K, K)) / K
    inner = (sigma2 * np.eye(K * dim)
             + (2.0 * lambda_mu * K * sigma2 ** 2 / n) * np.kron(L, np.eye(dim)))
    try:
        inv = np.linalg.inv(inner)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"singular graph stability system: {exc}") from exc
    return np.kron(U, C) @ inv


def tc_graph(data, adjacency, lambda_mu, K=None, tol=TOL_ROOT) -> StabilityReport:
    A = np.asarray(adjacency, dtype=float)
    if K is not None and A.shape[0] != K:
        raise ValueError(f"adjacency is {A.shape[0]} x {A.shape[0]} but K = {K}")
    if lambda_mu < 0:
        raise ValueError("lambda_mu must be non-negative")
    Xc = _centered(data)
    t_hi = 10.0 * tc_hard(Xc).t_c

    def radius(s2):
        return spectral_radius(graph_stability_matrix(Xc, A, lambda_mu, s2))

    t_c = _bisect_unit_radius(radius, 1e-6 * t_hi, t_hi, tol)
    return StabilityReport("graph", t_c, radius(t_c), A.shape[0] * Xc.shape[1])
