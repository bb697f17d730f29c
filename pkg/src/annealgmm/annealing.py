"""Deterministic annealing drivers (hard and soft) and their trace record.

In hard mode every component variance is pinned to the schedule value
``sigma2``.  In soft mode the variances are free but pulled toward
``sigma2`` by an inverse-Gamma prior of strength ``lambda_sigma``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

import numpy as np

from . import stability
from ._kernels import covariance_pass, em_pass
from .core_em import EPS_WEIGHT, as_points
from .transitions import detect_macro_clusters, freeze_steps, predict_next_transitions

log = logging.getLogger(__name__)


@dataclass
class AnnealConfig:
    """Annealing parameters.

    ``t_start="auto"`` resolves to 1.5 times the critical temperature of the
    mode; ``t_end=None`` resolves to ``1e-3`` times that critical
    temperature.  ``shift_tol`` is the largest mean displacement per inner
    iteration, in units of the component standard deviation, still counted
    as converged.
    """

    mode: str = "hard"
    K: int = 25
    t_start: Union[float, str] = "auto"
    t_end: Optional[float] = None
    cool_factor: float = 0.99
    inner_max_iter: int = 500
    inner_tol: float = 1e-8
    shift_tol: float = 1e-6
    lambda_sigma: float = 2.0
    jitter: float = 1e-4
    eps_collapse: float = 1e-3
    seed: int = 0

    def validate(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown annealing mode {self.mode!r}")
        if self.K < 1:
            raise ValueError("K must be positive")
        if not 0 < self.cool_factor < 1:
            raise ValueError("cool_factor must lie in (0, 1)")
        if self.lambda_sigma < 0:
            raise ValueError("lambda_sigma must be non-negative")
        if self.inner_max_iter < 1:
            raise ValueError("inner_max_iter must be positive")


@dataclass
class TraceStep:
    sigma2: float
    means: np.ndarray
    variances: np.ndarray
    gamma_max: np.ndarray
    gamma_min: np.ndarray
    weights: np.ndarray
    ratio: np.ndarray
    n_macro: int
    macro_labels: np.ndarray
    next_transitions: np.ndarray
    n_iter: int = 0
    log_likelihood: float = float("nan")
    events: List[str] = field(default_factory=list)

    def to_dict(self):
        out = {}
        for key, value in asdict(self).items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, d):
        arrays = ("means", "variances", "gamma_max", "gamma_min", "weights",
                  "ratio", "next_transitions")
        kw = dict(d)
        for key in arrays:
            kw[key] = np.asarray(kw[key], dtype=float)
        kw["macro_labels"] = np.asarray(kw["macro_labels"], dtype=int)
        return cls(**kw)


@dataclass
class AnnealTrace:
    mode: str
    steps: List[TraceStep] = field(default_factory=list)
    t_c: float = float("nan")
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([s.sigma2 for s in self.steps])

    @property
    def ratio(self) -> np.ndarray:
        return np.array([s.ratio for s in self.steps])

    @property
    def n_macro(self) -> np.ndarray:
        return np.array([s.n_macro for s in self.steps])

    @property
    def macro_labels(self) -> np.ndarray:
        return np.array([s.macro_labels for s in self.steps])

    @property
    def variances(self) -> np.ndarray:
        return np.array([s.variances for s in self.steps])

    @property
    def means(self) -> np.ndarray:
        return np.array([s.means for s in self.steps])

    def truncated(self, sigma2_min):
        """Copy restricted to steps with ``sigma2 >= sigma2_min``."""
        keep = [s for s in self.steps if s.sigma2 >= sigma2_min]
        return AnnealTrace(self.mode, keep, self.t_c, dict(self.config))

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for step in self.steps:
                fh.write(dumps_exact(step.to_dict()) + "\n")

    @classmethod
    def from_jsonl(cls, path, mode=None):
        steps = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    steps.append(TraceStep.from_dict(json.loads(line)))
        if mode is None:
            mode = "hard"
            if steps and not np.allclose(steps[0].variances, steps[0].sigma2):
                mode = "soft"
        return cls(mode, steps)


def dumps_exact(obj) -> str:
    """JSON with every float printed to 17 significant digits (NaN/inf as null)."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps_exact(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps_exact(v)}"
                               for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_exact(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def cooling_schedule(t_start, t_end, cool_factor=0.99) -> List[float]:
    """Geometric temperatures from ``t_start`` down to ``t_end`` (appended last)."""
    if not (t_start > 0 and t_end > 0 and t_end < t_start):
        raise ValueError("need 0 < t_end < t_start")
    if not 0 < cool_factor < 1:
        raise ValueError("cool_factor must lie in (0, 1)")
    temps = []
    n = 0
    while True:
        t = t_start * cool_factor ** n
        if t < t_end or math.isclose(t, t_end, rel_tol=1e-12):
            break
        temps.append(t)
        n += 1
    temps.append(float(t_end))
    return temps


def critical_temperature(data, config: AnnealConfig) -> float:
    if config.mode == "soft" and config.lambda_sigma > 0 and config.K >= 2:
        return stability.tc_soft(data, config.K, config.lambda_sigma).t_c
    return stability.tc_hard(data).t_c


def resolve_schedule(data, config: AnnealConfig, t_c=None):
    if t_c is None:
        t_c = critical_temperature(data, config)
    t_start = 1.5 * t_c if config.t_start == "auto" else float(config.t_start)
    t_end = 1e-3 * t_c if config.t_end is None else float(config.t_end)
    return t_c, cooling_schedule(t_start, t_end, config.cool_factor)


def soft_variance_update(scatter, nk, dim, sigma2, lambda_sigma):
    """Variance update under the inverse-Gamma prior with mode ``sigma2``."""
    w = 4.0 * lambda_sigma
    return (scatter + w * sigma2) / (dim * nk + w)


def lognormalisers(variances, dim):
    return -0.5 * dim * np.log(2.0 * np.pi * variances)


def respawn(means, nk, k, scale, rng, jitter):
    """Move a degenerate component next to the heaviest component."""
    host = int(np.argmax(nk))
    means[k] = means[host] + jitter * scale * rng.standard_normal(means.shape[1])
    return host


def em_iteration(X, means, variances, rng, jitter, events, eps_weight=EPS_WEIGHT):
    """E-step plus means-only M-step; degenerate components are respawned.

    Returns ``(new_means, nk, scatter_about_new_means, loglik)``.
    """
    means = means.copy()
    while True:
        nk, sum_px, scatter, ll = em_pass(X, means, variances,
                                          lognormalisers(variances, X.shape[1]))
        bad = np.flatnonzero(nk < eps_weight)
        if bad.size == 0:
            break
        k = int(bad[0])
        host = respawn(means, nk, k, math.sqrt(variances[k]), rng, jitter)
        events.append(f"respawn component {k} next to {host}")
        log.warning("respawned degenerate component %d next to %d", k, host)
    new = sum_px / nk[:, None]
    # sum_i p_ik ||x_i - new_k||^2 = scatter about old means - N_k ||new_k - old_k||^2
    scatter = np.maximum(scatter - nk * np.sum((new - means) ** 2, axis=1), 0.0)
    return new, nk, scatter, ll


def record_step(X, sigma2, means, variances, eps_collapse, ratio_denominator,
                n_iter=0, ll=float("nan"), events=None) -> TraceStep:
    covs, nk = covariance_pass(X, means, variances)
    eig = np.linalg.eigvalsh(covs)
    gmax, gmin = eig[:, -1], np.maximum(eig[:, 0], 0.0)
    macro = detect_macro_clusters(means, eps_collapse * np.sqrt(variances))
    nxt, _ = predict_next_transitions(X, macro, means, variances)
    return TraceStep(
        sigma2=float(sigma2),
        means=means.copy(),
        variances=np.array(variances, dtype=float),
        gamma_max=gmax,
        gamma_min=gmin,
        weights=nk,
        ratio=gmax / ratio_denominator,
        n_macro=macro.n_macro,
        macro_labels=macro.labels,
        next_transitions=nxt,
        n_iter=n_iter,
        log_likelihood=ll,
        events=list(events or []),
    )


def converged(ll, ll_prev, shift, config):
    return (ll_prev is not None and abs(ll - ll_prev) <= config.inner_tol * abs(ll)
            and shift <= config.shift_tol)


def _anneal(data, config: AnnealConfig) -> AnnealTrace:
    config.validate()
    X = np.ascontiguousarray(as_points(data))
    n, dim = X.shape
    rng = np.random.default_rng(config.seed)
    t_c, temps = resolve_schedule(X, config)
    soft = config.mode == "soft"

    K = config.K
    means = X.mean(axis=0) + config.jitter * math.sqrt(t_c) * rng.standard_normal((K, dim))
    if soft:
        variances = np.full(K, stability.sigma0_fixed_point(X, K, config.lambda_sigma, temps[0]))

    trace = AnnealTrace(config.mode, t_c=t_c, config=asdict(config))
    for t_idx, sigma2 in enumerate(temps):
        if not soft:
            variances = np.full(K, sigma2)
        events = []
        ll_prev = None
        it = 0
        for it in range(1, config.inner_max_iter + 1):
            old = means
            means, nk, scatter, ll = em_iteration(X, means, variances, rng, config.jitter, events)
            shift = math.sqrt(np.max(np.sum((means - old) ** 2, axis=1) / variances))
            if soft:
                variances = soft_variance_update(scatter, nk, dim, sigma2, config.lambda_sigma)
            if converged(ll, ll_prev, shift, config):
                break
            ll_prev = ll
        denom = variances if soft else sigma2
        trace.steps.append(record_step(X, sigma2, means, variances, config.eps_collapse,
                                       denom, it, ll, events))
        log.debug("step %d sigma2=%.6g K_r=%d iterations=%d", t_idx, sigma2,
                  trace.steps[-1].n_macro, it)
        if t_idx + 1 < len(temps):
            scale = np.sqrt(variances if soft else np.full(K, temps[t_idx + 1]))
            means = means + config.jitter * scale[:, None] * rng.standard_normal((K, dim))
    return trace


def hard_anneal(data, config: Optional[AnnealConfig] = None, **overrides) -> AnnealTrace:
    """Anneal with all variances pinned to the schedule temperature."""
    config = AnnealConfig(**{**asdict(config or AnnealConfig()), **overrides, "mode": "hard"})
    return _anneal(data, config)


def soft_anneal(data, config: Optional[AnnealConfig] = None, **overrides) -> AnnealTrace:
    """Anneal the mode of an inverse-Gamma prior on free component variances."""
    config = AnnealConfig(**{**asdict(config or AnnealConfig()), **overrides, "mode": "soft"})
    return _anneal(data, config)


@dataclass
class FrozenClusters:
    """Physical clusters frozen from a trace, with re-estimated variances."""

    means: np.ndarray
    variances: np.ndarray
    freeze_sigma2: np.ndarray
    freeze_step: np.ndarray
    members: List[List[int]]
    component_cluster: np.ndarray
    flagged: np.ndarray
    n_iter: int = 0

    @property
    def n_clusters(self) -> int:
        return len(self.variances)

    @property
    def component_variances(self) -> np.ndarray:
        return self.variances[self.component_cluster]

    def to_dict(self):
        return {
            "clusters": [
                {"mean": self.means[j].tolist(), "variance": float(self.variances[j]),
                 "freeze_sigma2": float(self.freeze_sigma2[j]),
                 "freeze_step": int(self.freeze_step[j]),
                 "members": list(self.members[j]), "flagged": bool(self.flagged[j])}
                for j in range(self.n_clusters)
            ]
        }


def freeze_macros(trace, delta_band=None):
    """Freeze each macro-cluster at the last split before it stays at the unit line.

    Per component, :func:`~annealgmm.transitions.freeze_steps` gives the
    step before the first split of its macro-cluster after its ratio has
    settled near 1.  Walking down the trace, the first member of a macro to
    reach that step freezes every not-yet-frozen member of the same macro
    there.  Components with no such split freeze with their macro at the
    last step (``never``).  Returns ``(freeze_step, macro_label, never)``.
    """
    T, K = len(trace), len(trace[0].means)
    trigger, never = freeze_steps(trace, delta_band)
    step = np.full(K, -1)
    label = np.full(K, -1)
    for t in range(T):
        starters = np.flatnonzero((trigger == t) & ~never & (step < 0))
        if starters.size == 0:
            continue
        labels = trace[t].macro_labels
        for lab in np.unique(labels[starters]):
            group = np.flatnonzero((labels == lab) & (step < 0))
            step[group] = t
            label[group] = lab
    rest = step < 0
    step[rest] = T - 1
    label[rest] = trace[T - 1].macro_labels[rest]
    return step, label, rest


def freeze_variances(data, trace: AnnealTrace, config: Optional[AnnealConfig] = None,
                     max_iter=1000, tol=1e-10, delta_band=None) -> FrozenClusters:
    """Freeze cluster means before their first within-cluster split, then refit variances.

    Each frozen group (same macro at the same freeze step) becomes one
    physical cluster located at the macro centre.  With these means fixed
    and uniform weights, EM updates only the variances until their relative
    change is below ``tol``.
    """
    X = np.ascontiguousarray(as_points(data))
    n, dim = X.shape
    if len(trace) < 2:
        raise ValueError("freeze_variances needs a trace with at least two steps")
    step, label, never = freeze_macros(trace, delta_band)
    keys = sorted(set(zip(step.tolist(), label.tolist())), key=lambda kl: (kl[0], kl[1]))
    K_r = len(keys)
    means = np.empty((K_r, dim))
    variances = np.empty(K_r)
    freeze_sigma2 = np.empty(K_r)
    members, flagged = [], np.zeros(K_r, dtype=bool)
    comp_cluster = np.empty(len(step), dtype=int)
    for j, (t, lab) in enumerate(keys):
        s = trace[t]
        in_macro = np.flatnonzero(s.macro_labels == lab)
        means[j] = s.means[in_macro].mean(axis=0)
        variances[j] = float(np.mean(s.variances[in_macro]))
        freeze_sigma2[j] = s.sigma2
        group = np.flatnonzero((step == t) & (label == lab))
        members.append(group.tolist())
        flagged[j] = bool(np.all(never[group]))
        comp_cluster[group] = j

    it = 0
    for it in range(1, max_iter + 1):
        nk, _, scatter, _ = em_pass(X, means, variances, lognormalisers(variances, dim))
        if np.any(nk < EPS_WEIGHT):
            # an empty frozen cluster keeps its freeze variance
            nk = np.where(nk < EPS_WEIGHT, np.nan, nk)
        new = np.where(np.isnan(nk), variances, scatter / (dim * np.nan_to_num(nk, nan=1.0)))
        new = np.maximum(new, np.finfo(float).tiny)
        done = np.max(np.abs(new - variances) / variances) <= tol
        variances = new
        if done:
            break
    return FrozenClusters(means, variances, freeze_sigma2, np.array([k[0] for k in keys]),
                          members, comp_cluster, flagged, it)
