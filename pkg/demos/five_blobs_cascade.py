"""Hard annealing on five blobs: transition cascade, hierarchy and overlap.

Run with ``python demos/five_blobs_cascade.py`` (a few minutes on one core).
"""

import numpy as np

from annealgmm import annealing, datagen, metrics, stability, transitions


def main():
    ds = datagen.preset("five_blobs_2d")
    t_c = stability.tc_hard(ds).t_c
    print(f"N = {ds.n}, T_c^hard = {t_c:.4g}")

    trace = annealing.hard_anneal(ds, K=25, t_end=0.3)
    print("\nsplits (sigma^2 -> K_r):")
    for e in transitions.classify_events(trace):
        if e.kind == "split":
            print(f"  {e.sigma2:10.4g} -> {trace[e.step].n_macro}")

    first_cross = min(e.step for e in transitions.classify_events(trace) if e.kind == "cross")
    hierarchy = transitions.build_hierarchy(trace.truncated(trace[first_cross - 1].sigma2))
    print(f"\nhierarchy before the first within-cluster split: "
          f"{len(hierarchy.nodes)} nodes, {len(hierarchy.leaves())} leaves")
    for leaf in hierarchy.leaves():
        print(f"  leaf at {np.round(leaf.center, 2)}  predicted next transition {leaf.size:.3g}")

    series = metrics.overlap_series(trace, ds)
    ones = [s2 for s2, q in series if q is not None and q > 1 - 1e-12]
    if ones:
        print(f"\nQ = 1 for sigma^2 in [{min(ones):.3g}, {max(ones):.3g}]")

    frozen = annealing.freeze_variances(ds, trace)
    truth = np.asarray(ds.info["empirical_variances"])
    centers = np.asarray(ds.info["centers"])
    print("\nfrozen clusters (estimated / empirical variance):")
    for mu, var in zip(frozen.means, frozen.variances):
        j = int(np.argmin(np.linalg.norm(centers - mu, axis=1)))
        print(f"  {np.round(mu, 2)}  {var:.3f} / {truth[j]:.3f}")


if __name__ == "__main__":
    main()
