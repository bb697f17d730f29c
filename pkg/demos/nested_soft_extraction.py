"""Soft annealing on six clusters with a nested pair, then cluster extraction.

Run with ``python demos/nested_soft_extraction.py`` (several minutes on one core).
"""

import numpy as np

from annealgmm import annealing, datagen, stability, transitions


def main():
    ds = datagen.preset("six_nested_2d")
    soft = stability.tc_soft(ds, 25, 2.0)
    print(f"T_c^hard = {stability.tc_hard(ds).t_c:.4g}, T_c^soft = {soft.t_c:.4g}")

    trace = annealing.soft_anneal(ds, K=25, lambda_sigma=2.0, t_end=0.5)
    first = next(s.sigma2 for s in trace.steps if s.n_macro > 1)
    print(f"first split at sigma^2 = {first:.4g} ({first / soft.t_c:.3f} T_c^soft)")

    centers = np.asarray(ds.info["centers"])
    variances = np.asarray(ds.info["variances"])
    print("\nextracted clusters:")
    for c in transitions.extract_clusters_soft(trace):
        j = int(np.argmin(np.linalg.norm(centers - c.mean, axis=1)))
        off = np.linalg.norm(c.mean - centers[j]) / np.sqrt(variances[j])
        print(f"  mean {np.round(c.mean, 2)} (offset {off:.2f} sd)  variance {c.variance:.3f} "
              f"vs {variances[j]:.3f}  frozen at sigma^2 = {c.freeze_sigma2:.3g}"
              + ("  [flagged]" if c.flagged else ""))


if __name__ == "__main__":
    main()
