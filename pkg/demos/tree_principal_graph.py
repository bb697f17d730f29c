"""Multi-scale principal graph on a tree whose branch widths span a decade.

Run with ``python demos/tree_principal_graph.py`` (about twenty minutes on one core).
"""

import numpy as np

from annealgmm import datagen, graph, stability


def main():
    ds = datagen.preset("tree_branches_2d")
    K, lam = 100, 300.0
    chain = graph.minimum_spanning_tree(np.outer(np.linspace(-1, 1, K), [0.0, 1.0]))
    print(f"N = {ds.n}, T_c^hard = {stability.tc_hard(ds).t_c:.4g}, "
          f"T_c^graph(lambda_mu={lam:g}) = {stability.tc_graph(ds, chain, lam).t_c:.4g}")

    # cool until half the thinnest branch's width^2 so every component can freeze
    g, trace = graph.principal_graph_anneal(ds, K=K, lambda_mu=lam, t_end=5e-5, cool_factor=0.98)
    print(f"{len(trace)} temperatures, {len(g.edges)} edges, "
          f"{int(g.frozen_flags.sum())}/{K} components frozen")

    widths = np.asarray(ds.info["widths"]) ** 2
    labels = ds.labels
    owner = np.argmin(((ds.points[:, None, :] - g.means[None]) ** 2).sum(-1), axis=1)
    print("\nbranch  width^2   median frozen variance")
    for j, w2 in enumerate(widths):
        comps = np.unique(owner[labels == j])
        print(f"  {j}     {w2:.2e}   {np.median(g.frozen_variances[comps]):.2e}")


if __name__ == "__main__":
    main()
