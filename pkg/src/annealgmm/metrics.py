"""Overlap order parameter between estimated and ground-truth labels."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .transitions import MacroClustering, hard_assign, macro_variances


@dataclass
class OverlapResult:
    q_value: Optional[float]
    best_permutation: Dict[int, int]
    applicable: bool
    matched_fraction: Optional[float] = None


def confusion_matrix(estimated, true, n_est, q) -> np.ndarray:
    """Counts ``M[a, b]`` of points with estimated label a and true label b."""
    M = np.zeros((n_est, q), dtype=np.int64)
    np.add.at(M, (estimated, true), 1)
    return M


def _check_labels(estimated, true, q):
    est = np.asarray(estimated)
    tru = np.asarray(true)
    if est.shape != tru.shape or est.ndim != 1:
        raise ValueError("estimated and true labels must be 1-d arrays of equal length")
    if est.size == 0:
        raise ValueError("empty label arrays")
    if q < 1:
        raise ValueError("q must be positive")
    for name, arr in (("estimated", est), ("true", tru)):
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ValueError(f"{name} labels must be integers")
        if arr.min() < 0:
            raise ValueError(f"{name} labels must be non-negative")
    if tru.max() >= q:
        raise ValueError(f"true labels must lie in 0..{q - 1}")
    return est.astype(int), tru.astype(int)


def overlap(estimated_labels, true_labels, q) -> OverlapResult:
    """Permutation-maximised agreement, rescaled so chance is 0 and perfect is 1.

    Estimated labels are compacted to ``0..K_r-1`` (in sorted order) before
    matching.  The best matching of estimated to true labels is an
    assignment problem on the confusion matrix.  With fewer estimated
    labels than classes the mapping is injective and unmatched classes
    count as misses.  With more estimated labels than ``q`` the overlap is
    not defined.
    """
    est, tru = _check_labels(estimated_labels, true_labels, q)
    alphabet, est = np.unique(est, return_inverse=True)
    K_r = alphabet.size
    if K_r > q:
        return OverlapResult(None, {}, False)
    M = confusion_matrix(est, tru, K_r, q)
    rows, cols = linear_sum_assignment(M, maximize=True)
    frac = M[rows, cols].sum() / est.size
    mapping = {int(alphabet[r]): int(c) for r, c in zip(rows, cols)}
    return OverlapResult(_rescale(frac, q), mapping, True, float(frac))


def _rescale(frac, q):
    if q == 1:
        return 1.0 if frac == 1.0 else 0.0
    return float((frac - 1.0 / q) / (1.0 - 1.0 / q))


def overlap_bruteforce(estimated_labels, true_labels, q) -> Optional[float]:
    """Reference implementation enumerating every injective label mapping."""
    est, tru = _check_labels(estimated_labels, true_labels, q)
    alphabet, est = np.unique(est, return_inverse=True)
    K_r = alphabet.size
    if K_r > q:
        return None
    best = 0
    for perm in itertools.permutations(range(q), K_r):
        best = max(best, int(np.sum(np.asarray(perm)[est] == tru)))
    return _rescale(best / est.size, q)


def theoretical_overlap(data, true_labels=None, true_means=None, true_variances=None, q=None):
    """Overlap of the assignment made with the generating parameters.

    Points go to the argmax responsibility under the true means and
    variances.  ``data`` may be a labelled Dataset whose ``info`` carries
    ``centers`` and ``variances``; explicit arguments take precedence.
    """
    info = getattr(data, "info", {}) or {}
    if true_labels is None:
        true_labels = data.labels
    if true_means is None:
        true_means = info["centers"]
    if true_variances is None:
        true_variances = info["variances"]
    means = np.atleast_2d(np.asarray(true_means, dtype=float))
    if q is None:
        q = getattr(data, "q", None) or means.shape[0]
    z_hat = hard_assign(data, means, true_variances)
    return overlap(z_hat, true_labels, q).q_value


def step_labels(data, step) -> np.ndarray:
    """Macro-cluster label of every point at one trace step."""
    labels = np.asarray(step.macro_labels)
    macro = MacroClustering(labels, int(labels.max()) + 1,
                            np.array([step.means[labels == j].mean(axis=0)
                                      for j in range(int(labels.max()) + 1)]))
    return hard_assign(data, macro.centers, macro_variances(macro, step.variances))


def overlap_series(trace, data, true_labels=None, q=None) -> List[Tuple[float, Optional[float]]]:
    """``(sigma2, Q)`` per trace step; ``Q`` is None where K_r exceeds q."""
    if true_labels is None:
        true_labels = data.labels
    if q is None:
        q = data.q
    out = []
    for step in trace.steps:
        if step.n_macro > q:
            out.append((float(step.sigma2), None))
            continue
        out.append((float(step.sigma2), overlap(step_labels(data, step), true_labels, q).q_value))
    return out
