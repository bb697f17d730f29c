"""Seeded synthetic datasets.

The parameter tables below are repo-defined.  They encode the geometric
relationships the analyses rely on: separation hierarchies between blob
groups, a nested pair with a tunable contrast, and filament branches whose
widths span one decade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core_em import Dataset


@dataclass
class BlobSpec:
    centers: Sequence[Sequence[float]]
    variances: Sequence[float]
    counts: Sequence[int]
    seed: int = 0

    def __post_init__(self):
        if not (len(self.centers) == len(self.variances) == len(self.counts)):
            raise ValueError("centers, variances and counts must have equal length")
        if any(int(c) < 1 for c in self.counts):
            raise ValueError("every blob needs at least one point")
        if any(v < 0 for v in self.variances):
            raise ValueError("variances must be non-negative")


def cluster_eigenvalues(points, labels, q):
    """Eigenvalues (descending) of each ground-truth cluster's biased sample covariance."""
    out = []
    for c in range(q):
        pts = points[labels == c]
        diff = pts - pts.mean(axis=0)
        cov = diff.T @ diff / len(pts)
        out.append(np.sort(np.linalg.eigvalsh(cov))[::-1])
    return out


def _attach_truth(ds: Dataset, **extra) -> Dataset:
    eig = cluster_eigenvalues(ds.points, ds.labels, ds.q)
    ds.info.update(extra)
    ds.info["eigenvalues"] = [e.tolist() for e in eig]
    ds.info["max_eigenvalues"] = [float(e[0]) for e in eig]
    ds.info["empirical_variances"] = [float(e.mean()) for e in eig]
    return ds


def generate(spec: BlobSpec) -> Dataset:
    """Isotropic Gaussian blobs; ``labels`` hold the blob index."""
    rng = np.random.default_rng(spec.seed)
    centers = np.atleast_2d(np.asarray(spec.centers, dtype=float))
    dim = centers.shape[1]
    parts, labels = [], []
    for j, (c, v, n) in enumerate(zip(centers, spec.variances, spec.counts)):
        parts.append(c + math.sqrt(v) * rng.standard_normal((int(n), dim)))
        labels.append(np.full(int(n), j))
    ds = Dataset(np.vstack(parts), np.concatenate(labels), q=len(spec.counts))
    return _attach_truth(
        ds,
        centers=centers.tolist(),
        variances=[float(v) for v in spec.variances],
        counts=[int(n) for n in spec.counts],
    )


# ---------------------------------------------------------------- presets

# Two macro groups ({0,1,2} and {3,4}); nearest blob pair 16 apart while
# blob std <= 1.23, so intra-group scales (~64) dwarf blob sizes (<= 1.5).
FIVE_BLOBS_2D = dict(
    centers=[[0.0, 0.0], [16.0, 0.0], [8.0, 14.0], [64.0, 24.0], [80.0, 24.0]],
    variances=[1.0, 0.6, 1.5, 0.8, 1.2],
    counts=[1000] * 5,
)


def _ten_blobs_5d():
    macro = np.array([
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [120.0, 0.0, 0.0, 0.0, 0.0],
        [50.0, 110.0, 0.0, 0.0, 0.0],
    ])
    offsets = [
        # three blobs around macro 0
        [[0, 0, 0, 0, 0], [20, 0, 0, 0, 0], [10, 17, 0, 0, 0]],
        # three blobs around macro 1
        [[0, 0, 0, 0, 0], [0, 0, 20, 0, 0], [0, 0, 10, 17, 0]],
        # four blobs around macro 2
        [[0, 0, 0, 0, 0], [20, 0, 0, 0, 0], [0, 0, 0, 0, 20], [20, 0, 0, 0, 20]],
    ]
    variances = [1.0, 1.5, 0.8, 1.2, 2.0, 1.0, 0.7, 1.3, 1.0, 1.6]
    centers = [(macro[m] + np.asarray(o, float)).tolist()
               for m, group in enumerate(offsets) for o in group]
    return dict(centers=centers, variances=variances, counts=[300] * 10,
                macro_groups=[0, 0, 0, 1, 1, 1, 2, 2, 2, 2])


TEN_BLOBS_5D = _ten_blobs_5d()

# Four isolated blobs plus a nested pair: a compact blob (std 1) sitting
# inside the flank of a broad one (std 3).
SIX_NESTED_2D = dict(
    centers=[[0.0, 0.0], [24.0, 0.0], [0.0, 24.0], [24.0, 24.0],
             [60.0, 12.0], [62.5, 12.0]],
    variances=[1.0, 1.5, 0.8, 1.2, 9.0, 1.0],
    counts=[600, 600, 600, 600, 1500, 1500],
)

NESTED_OUTER_STD = 3.0
NESTED_INNER_STD = 1.0
NESTED_OUTER_COUNT = 2000
NESTED_OFFSET = 2.5

# Branches of a tree: (start, end, cross-section std).  A trunk and two
# arms meet at the origin; a twig leaves the end of the right arm.  Widths
# are geometric over one decade.  Each branch is 12 long so that, with 100
# components spread over the 48 units of filament, neighbouring components
# sit about 0.5 apart, several times the widest cross-section.  About 96
# points per component keep the sampling error of a frozen variance near
# 15%.
TREE_BRANCHES_2D = dict(
    branches=[
        ((0.0, 0.0), (0.0, -12.0), 0.1),
        ((0.0, 0.0), (-8.4853, 8.4853), 0.0464),
        ((0.0, 0.0), (8.4853, 8.4853), 0.0215),
        ((8.4853, 8.4853), (20.4853, 8.4853), 0.01),
    ],
    density=200.0,
)

PRESETS = ("five_blobs_2d", "ten_blobs_5d_three_macro", "six_nested_2d",
           "nested_pair_contrast", "tree_branches_2d")


def nested_inner_count(contrast, outer_count=NESTED_OUTER_COUNT,
                       outer_std=NESTED_OUTER_STD, inner_std=NESTED_INNER_STD):
    """Inner-blob size giving ``(outer_std/sqrt(N_out)) / (inner_std/sqrt(N_in)) = contrast``."""
    if contrast <= 0:
        raise ValueError("contrast must be positive")
    return max(1, int(round(outer_count * (contrast * inner_std / outer_std) ** 2)))


def contrast_of(outer_count, inner_count, outer_std=NESTED_OUTER_STD,
                inner_std=NESTED_INNER_STD):
    return (outer_std / math.sqrt(outer_count)) / (inner_std / math.sqrt(inner_count))


def tree_branches(branches, density, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    parts, labels, widths, counts = [], [], [], []
    for j, (start, end, width) in enumerate(branches):
        a, b = np.asarray(start, float), np.asarray(end, float)
        length = float(np.linalg.norm(b - a))
        n = int(round(density * length))
        direction = (b - a) / length
        normal = np.array([-direction[1], direction[0]])
        t = rng.uniform(0.0, 1.0, n)
        pts = a + np.outer(t, b - a) + np.outer(width * rng.standard_normal(n), normal)
        parts.append(pts)
        labels.append(np.full(n, j))
        widths.append(float(width))
        counts.append(n)
    ds = Dataset(np.vstack(parts), np.concatenate(labels), q=len(branches))
    ds.info.update(
        branches=[[list(s), list(e), w] for s, e, w in branches],
        widths=widths,
        width_variances=[w * w for w in widths],
        counts=counts,
    )
    return ds


def preset(name: str, seed: int = 0, contrast: Optional[float] = None) -> Dataset:
    """Build one of the named datasets in :data:`PRESETS`."""
    if name == "five_blobs_2d":
        ds = generate(BlobSpec(seed=seed, **FIVE_BLOBS_2D))
    elif name == "ten_blobs_5d_three_macro":
        table = dict(TEN_BLOBS_5D)
        groups = table.pop("macro_groups")
        ds = generate(BlobSpec(seed=seed, **table))
        ds.info["macro_groups"] = groups
    elif name == "six_nested_2d":
        ds = generate(BlobSpec(seed=seed, **SIX_NESTED_2D))
        ds.info["nested_pair"] = [4, 5]
    elif name == "nested_pair_contrast":
        c = 3.0 if contrast is None else float(contrast)
        n_in = nested_inner_count(c)
        spec = BlobSpec(
            centers=[[0.0, 0.0], [NESTED_OFFSET, 0.0]],
            variances=[NESTED_OUTER_STD ** 2, NESTED_INNER_STD ** 2],
            counts=[NESTED_OUTER_COUNT, n_in],
            seed=seed,
        )
        ds = generate(spec)
        ds.info["contrast"] = contrast_of(NESTED_OUTER_COUNT, n_in)
        ds.info["requested_contrast"] = c
    elif name == "tree_branches_2d":
        ds = tree_branches(seed=seed, **TREE_BRANCHES_2D)
    else:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    ds.info["preset"] = name
    ds.info["seed"] = seed
    return ds


def subsample(dataset: Dataset, rho: float, seed: int = 0) -> Dataset:
    """Uniform draw without replacement of ``ceil(rho * N)`` points."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    n = dataset.n
    m = int(math.ceil(rho * n - 1e-9))
    if m >= n:
        return Dataset(dataset.points.copy(),
                       None if dataset.labels is None else dataset.labels.copy(),
                       dataset.q, dict(dataset.info))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    labels = None if dataset.labels is None else dataset.labels[idx]
    info = {k: v for k, v in dataset.info.items()
            if k not in ("eigenvalues", "max_eigenvalues", "empirical_variances")}
    out = Dataset(dataset.points[idx], labels, dataset.q, info)
    out.info["rho"] = rho
    if labels is not None and all(np.any(labels == c) for c in range(dataset.q)):
        _attach_truth(out)
    return out
