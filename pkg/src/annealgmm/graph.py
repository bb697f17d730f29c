"""Graph-regularised mixtures and multi-scale principal graphs.

Component means are tied by a Laplacian smoothness prior
``-lambda_mu / 2 * sum_ij A_ij ||mu_i - mu_j||^2`` whose adjacency ``A`` is
the Euclidean minimum spanning tree of the current means.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve
from scipy.spatial.distance import cdist

from . import stability
from ._kernels import em_pass
from .annealing import (AnnealConfig, AnnealTrace, converged, dumps_exact,
                        lognormalisers, record_step, resolve_schedule, respawn)
from .core_em import EPS_WEIGHT, DegenerateComponentError, as_points

log = logging.getLogger(__name__)


@dataclass
class PrincipalGraph:
    adjacency: np.ndarray
    means: np.ndarray
    frozen_variances: np.ndarray
    frozen_flags: np.ndarray
    freeze_sigma2: Optional[np.ndarray] = None

    @property
    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    def to_dict(self):
        return {
            "nodes": [
                {"id": k, "mean": self.means[k].tolist(),
                 "frozen_variance": float(self.frozen_variances[k]),
                 "frozen": bool(self.frozen_flags[k])}
                for k in range(len(self.means))
            ],
            "edges": [list(e) for e in self.edges],
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_exact(self.to_dict()) + "\n")

    def edges_to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("source,target,length\n")
            for i, j in self.edges:
                length = float(np.linalg.norm(self.means[i] - self.means[j]))
                fh.write(f"{i},{j},{length:.17g}\n")


def minimum_spanning_tree(points) -> np.ndarray:
    """Euclidean MST adjacency (0/1, symmetric) by Boruvka's algorithm.

    Edges are ordered by ``(length, min(i, j), max(i, j))`` so that ties,
    including duplicate points, resolve to a single valid tree.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    K = P.shape[0]
    A = np.zeros((K, K), dtype=int)
    if K <= 1:
        return A
    dist = cdist(P, P)
    parent = np.arange(K)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    idx = np.arange(K)
    n_edges = 0
    while n_edges < K - 1:
        comp = np.array([find(a) for a in range(K)])
        masked = np.where(comp[:, None] == comp[None, :], np.inf, dist)
        # argmin returns the lowest j among equal lengths, which is also the
        # lexicographically smallest (min, max) pair for a fixed i
        nearest = np.argmin(masked, axis=1)
        w = masked[idx, nearest]
        lo, hi = np.minimum(idx, nearest), np.maximum(idx, nearest)
        chosen = {}
        for v in np.lexsort((hi, lo, w)):
            chosen.setdefault(comp[v], (lo[v], hi[v]))
        for a, b in chosen.values():
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                A[a, b] = A[b, a] = 1
                n_edges += 1
    return A


def graph_laplacian(adjacency) -> np.ndarray:
    A = np.asarray(adjacency, dtype=float)
    return np.diag(A.sum(axis=0)) - A


def smoothness(adjacency, means) -> float:
    """``sum_ij A_ij ||mu_i - mu_j||^2`` (each edge counted in both directions)."""
    A = np.asarray(adjacency, dtype=float)
    means = np.atleast_2d(np.asarray(means, dtype=float))
    return float(np.sum(A * cdist(means, means, "sqeuclidean")))


def _solve_regularised(nk, sum_px, variances, lambda_mu, adjacency):
    L = graph_laplacian(adjacency)
    system = np.diag(nk / variances) + 2.0 * lambda_mu * L
    rhs = sum_px / variances[:, None]
    try:
        return cho_solve(cho_factor(system), rhs)
    except LinAlgError:
        pass
    try:
        return solve(system, rhs)
    except LinAlgError as exc:
        raise DegenerateComponentError(-1, float(nk.min())) from exc


def regularized_m_step_means(data, responsibilities, sigma2, lambda_mu, adjacency) -> np.ndarray:
    """Means maximising the likelihood plus the Laplacian smoothness prior.

    Solves ``(diag(N_k / sigma_k^2) + 2 lambda_mu L) mu = (sum_i p_ik x_i / sigma_k^2)_k``
    exactly, one right-hand side per dimension.  ``sigma2`` may be a scalar
    or one variance per component.
    """
    X = as_points(data)
    resp = np.asarray(responsibilities, dtype=float)
    K = resp.shape[1]
    variances = np.broadcast_to(np.asarray(sigma2, dtype=float), (K,)).astype(float)
    if np.any(variances <= 0):
        raise ValueError("sigma2 must be positive")
    if lambda_mu < 0:
        raise ValueError("lambda_mu must be non-negative")
    nk = resp.sum(axis=0)
    if lambda_mu == 0 or not np.any(adjacency):
        bad = np.flatnonzero(nk < EPS_WEIGHT)
        if bad.size:
            raise DegenerateComponentError(int(bad[0]), float(nk[bad[0]]))
    return _solve_regularised(nk, resp.T @ X, variances, lambda_mu, adjacency)


def fixed_point_residual(data, responsibilities, sigma2, lambda_mu, adjacency, means) -> float:
    """Largest relative violation of the implicit regularised mean update."""
    X = as_points(data)
    resp = np.asarray(responsibilities, dtype=float)
    K = resp.shape[1]
    variances = np.broadcast_to(np.asarray(sigma2, dtype=float), (K,))
    A = np.asarray(adjacency, dtype=float)
    num = (resp.T @ X) / variances[:, None] + 2.0 * lambda_mu * (A @ means)
    den = resp.sum(axis=0) / variances + 2.0 * lambda_mu * A.sum(axis=1)
    rhs = num / den[:, None]
    scale = max(np.max(np.abs(means)), np.max(np.abs(X)), 1e-300)
    return float(np.max(np.abs(means - rhs)) / scale)


def principal_graph_anneal(data, K=100, lambda_mu=300.0, config: Optional[AnnealConfig] = None,
                           **overrides):
    """Hard annealing with an MST smoothness prior and per-component freezing.

    The MST is rebuilt from the current means at every inner iteration.  A
    component whose smallest weighted-covariance eigenvalue first reaches
    the schedule temperature keeps that temperature as its own variance
    from then on; its mean keeps updating.  Freezing waits until the
    nearest other mean is at least one standard deviation away.  Returns ``(graph, trace)``;
    trace ratios are ``gamma_min / sigma_k^2``.
    """
    base = asdict(config or AnnealConfig())
    config = AnnealConfig(**{**base, "K": K, **overrides, "mode": "hard"})
    config.validate()
    if lambda_mu < 0:
        raise ValueError("lambda_mu must be non-negative")
    X = np.ascontiguousarray(as_points(data))
    n, dim = X.shape
    rng = np.random.default_rng(config.seed)
    # the graph threshold lies below the hard one, so the hard value is a
    # safe starting reference
    t_c, temps = resolve_schedule(X, config, t_c=stability.tc_hard(X).t_c)

    means = X.mean(axis=0) + config.jitter * math.sqrt(t_c) * rng.standard_normal((K, dim))
    variances = np.full(K, temps[0])
    frozen = np.zeros(K, dtype=bool)
    freeze_sigma2 = np.full(K, np.nan)
    trace = AnnealTrace("graph", t_c=t_c, config={**asdict(config), "lambda_mu": lambda_mu})

    for t_idx, sigma2 in enumerate(temps):
        variances[~frozen] = sigma2
        events = []
        ll_prev = None
        it = 0
        for it in range(1, config.inner_max_iter + 1):
            A = minimum_spanning_tree(means)
            nk, sum_px, _, ll = em_pass(X, means, variances, lognormalisers(variances, dim))
            old = means
            try:
                means = _solve_regularised(nk, sum_px, variances, lambda_mu, A)
            except DegenerateComponentError:
                k = int(np.argmin(nk))
                means = means.copy()
                host = respawn(means, nk, k, math.sqrt(variances[k]), rng, config.jitter)
                events.append(f"respawn component {k} next to {host}")
                ll_prev = None
                continue
            shift = math.sqrt(np.max(np.sum((means - old) ** 2, axis=1) / variances))
            objective = ll - 0.5 * lambda_mu * smoothness(A, old)
            if converged(objective, ll_prev, shift, config):
                break
            ll_prev = objective
        step = record_step(X, sigma2, means, variances, config.eps_collapse, variances,
                           it, ll, events)
        step.ratio = step.gamma_min / variances
        trace.steps.append(step)
        log.debug("step %d sigma2=%.6g K_r=%d iterations=%d frozen=%d", t_idx, sigma2,
                  step.n_macro, it, int(frozen.sum()))
        # a component overlapping its neighbours measures its soft territory,
        # not a cross-section, so it may only freeze once resolved from them
        d2 = cdist(means, means, "sqeuclidean")
        np.fill_diagonal(d2, np.inf)
        resolved = d2.min(axis=1) >= sigma2
        newly = (~frozen) & resolved & (step.gamma_min >= sigma2)
        if np.any(newly):
            frozen |= newly
            freeze_sigma2[newly] = sigma2
            step.events.append("freeze " + " ".join(map(str, np.flatnonzero(newly))))
        if frozen.all():
            break
        if t_idx + 1 < len(temps):
            scale = np.sqrt(np.where(frozen, variances, temps[t_idx + 1]))
            means = means + config.jitter * scale[:, None] * rng.standard_normal((K, dim))

    graph = PrincipalGraph(
        adjacency=minimum_spanning_tree(means),
        means=means.copy(),
        frozen_variances=variances.copy(),
        frozen_flags=frozen.copy(),
        freeze_sigma2=freeze_sigma2,
    )
    return graph, trace
