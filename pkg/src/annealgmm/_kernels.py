"""Fused single-pass EM kernels used inside the annealing loops.

Each kernel visits the points in index order and accumulates sequentially,
so results are bit-reproducible for identical inputs.
"""

import math

import numpy as np
from numba import njit

# exp(-40) < 2**-57: such terms cannot change a row sum that is >= 1
CUTOFF = -40.0


@njit(cache=True)
def em_pass(X, means, variances, lognorm):
    """One E-step folded into the sufficient statistics of the M-step.

    Responsibilities use ``exp(-||x - mu_k||^2 / (2 v_k))`` normalised over
    k.  Returns ``(nk, sum_px, scatter, loglik)`` where ``scatter[k]`` is
    ``sum_i p_ik ||x_i - mu_k||^2`` around the *input* means and
    ``loglik`` is evaluated with the per-component log-normaliser
    ``lognorm``.
    """
    n, dim = X.shape
    K = means.shape[0]
    nk = np.zeros(K)
    sum_px = np.zeros((K, dim))
    scatter = np.zeros(K)
    d2 = np.empty(K)
    e = np.empty(K)
    ln_max = lognorm.max()
    ln_min = lognorm.min()
    wnorm = np.empty(K)
    offset = np.empty(K)
    for k in range(K):
        wnorm[k] = math.exp(lognorm[k] - ln_max)
        # a skipped term must be negligible in the normalised sum as well
        offset[k] = lognorm[k] - ln_min
    inv2v = 0.5 / variances
    loglik = 0.0
    for i in range(n):
        best = -np.inf
        for k in range(K):
            acc = 0.0
            for d in range(dim):
                diff = X[i, d] - means[k, d]
                acc += diff * diff
            d2[k] = acc
            logit = -acc * inv2v[k]
            e[k] = logit
            if logit > best:
                best = logit
        s = 0.0
        sw = 0.0
        for k in range(K):
            t = e[k] - best
            v = math.exp(t) if t + offset[k] > CUTOFF else 0.0
            e[k] = v
            s += v
            sw += v * wnorm[k]
        loglik += best + ln_max + math.log(sw)
        inv_s = 1.0 / s
        for k in range(K):
            if e[k] == 0.0:
                continue
            p = e[k] * inv_s
            nk[k] += p
            scatter[k] += p * d2[k]
            for d in range(dim):
                sum_px[k, d] += p * X[i, d]
    return nk, sum_px, scatter, loglik


@njit(cache=True)
def covariance_pass(X, means, variances):
    """Responsibility-weighted covariance of every component, plus N_k."""
    n, dim = X.shape
    K = means.shape[0]
    nk = np.zeros(K)
    covs = np.zeros((K, dim, dim))
    e = np.empty(K)
    diff = np.empty(dim)
    inv2v = 0.5 / variances
    for i in range(n):
        best = -np.inf
        for k in range(K):
            acc = 0.0
            for d in range(dim):
                t = X[i, d] - means[k, d]
                acc += t * t
            e[k] = -acc * inv2v[k]
            if e[k] > best:
                best = e[k]
        s = 0.0
        for k in range(K):
            t = e[k] - best
            e[k] = math.exp(t) if t > CUTOFF else 0.0
            s += e[k]
        for k in range(K):
            p = e[k] / s
            if p == 0.0:
                continue
            nk[k] += p
            for d in range(dim):
                diff[d] = X[i, d] - means[k, d]
            for a in range(dim):
                pa = p * diff[a]
                for b in range(a, dim):
                    covs[k, a, b] += pa * diff[b]
    for k in range(K):
        if nk[k] > 0:
            for a in range(dim):
                for b in range(a, dim):
                    covs[k, a, b] /= nk[k]
                    covs[k, b, a] = covs[k, a, b]
    return covs, nk
