"""Reading an annealing trace: macro-clusters, transition events, hierarchy.

Component identity across temperatures is by index; macro labels are
recomputed at every step from the positions of the means.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .core_em import as_points

DELTA_BAND = 0.15


@dataclass
class MacroClustering:
    labels: np.ndarray
    n_macro: int
    centers: np.ndarray


@dataclass
class TransitionEvent:
    sigma2: float
    kind: str
    components: List[int]
    parent_macro: int
    step: int = -1
    parents: List[int] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def detect_macro_clusters(means, epsilon) -> MacroClustering:
    """Single-linkage grouping of component means.

    ``epsilon`` is either a scalar merge radius or one radius per
    component, in which case a pair merges when its distance is within the
    larger of the two radii.  Labels are numbered by first appearance.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    eps = np.asarray(epsilon, dtype=float)
    if np.any(eps <= 0):
        raise ValueError("epsilon must be positive")
    dist = cdist(means, means)
    radius = np.maximum.outer(eps, eps) if eps.ndim else eps
    _, raw = connected_components(csr_matrix(dist <= radius), directed=False)
    # relabel by first appearance so labels are stable across steps
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    labels = remap[raw]
    n_macro = int(labels.max()) + 1
    centers = np.array([means[labels == j].mean(axis=0) for j in range(n_macro)])
    return MacroClustering(labels, n_macro, centers)


def hard_assign(data, centers, variances) -> np.ndarray:
    """Argmax responsibility; ties go to the lowest index."""
    X = as_points(data)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (centers.shape[0],))
    if np.any(variances <= 0):
        raise ValueError("variances must be strictly positive")
    # argmax of the responsibilities is the argmax of their exponents
    return np.argmax(-cdist(X, centers, "sqeuclidean") / (2.0 * variances), axis=1)


def macro_variances(macro: MacroClustering, variances) -> np.ndarray:
    variances = np.asarray(variances, dtype=float)
    return np.array([variances[macro.labels == j].mean() for j in range(macro.n_macro)])


def predict_next_transitions(data, macro: MacroClustering, means=None, variances=None):
    """Critical temperature of each macro-cluster's sub-dataset.

    Points are assigned to the most probable macro-cluster of a K_r
    component mixture built from the macro centres; each threshold is the
    largest eigenvalue of the covariance of the points so assigned.
    Returns ``(thresholds, empty)`` where ``empty`` flags macros that own no
    point (threshold 0).
    """
    X = as_points(data)
    if variances is None:
        mvar = np.ones(macro.n_macro)
    else:
        mvar = macro_variances(macro, variances)
    assign = hard_assign(X, macro.centers, mvar)
    thresholds = np.zeros(macro.n_macro)
    empty = np.zeros(macro.n_macro, dtype=bool)
    for j in range(macro.n_macro):
        pts = X[assign == j]
        if len(pts) == 0:
            empty[j] = True
            continue
        diff = pts - pts.mean(axis=0)
        cov = diff.T @ diff / len(pts)
        thresholds[j] = float(np.linalg.eigvalsh(0.5 * (cov + cov.T))[-1])
    return thresholds, empty


# ---------------------------------------------------------------- events

MIN_RUN = 3


def _partition(labels):
    """Canonical partition of component indices: tuple of sorted tuples."""
    labels = np.asarray(labels)
    groups = {}
    for k, lab in enumerate(labels.tolist()):
        groups.setdefault(lab, []).append(k)
    return tuple(sorted(tuple(g) for g in groups.values()))


def ratio_events(r, delta_band, min_run):
    """Cross and bounce steps of one ratio series (ratio against the unit line).

    A passage through 1 counts as a cross only when the ratio then stays on
    the new side for at least ``min_run`` steps; a shorter excursion whose
    extremum lies within ``delta_band`` of 1 is a bounce that pierced the
    line.  Turning points within the band that never reach the line are
    bounces as well.
    """
    side = r >= 1.0
    T = len(r)
    crosses, bounces = [], []
    # runs of constant side
    starts = [0] + [t for t in range(1, T) if side[t] != side[t - 1]]
    ends = starts[1:] + [T]
    runs = list(zip(starts, ends))
    i = 1
    last_side = side[0]
    while i < len(runs):
        s, e = runs[i]
        is_last = i == len(runs) - 1
        short = (e - s) < min_run and not is_last
        if short:
            seg = r[s:e]
            ext = s + (int(np.argmax(seg)) if side[s] else int(np.argmin(seg)))
            if abs(r[ext] - 1.0) <= delta_band:
                bounces.append(ext)
                i += 1
                continue
        if side[s] != last_side:
            crosses.append(s)
            last_side = side[s]
        i += 1
    for t in range(1, T - 1):
        if side[t - 1] or side[t] or side[t + 1]:
            below = False
        else:
            below = True
        if below and 1.0 - delta_band <= r[t] and r[t] > r[t - 1] and r[t] >= r[t + 1]:
            bounces.append(t)
        above = side[t - 1] and side[t] and side[t + 1]
        if above and r[t] <= 1.0 + delta_band and r[t] < r[t - 1] and r[t] <= r[t + 1]:
            bounces.append(t)
    return sorted(crosses), sorted(set(bounces))


def classify_events(trace, delta_band=DELTA_BAND, min_run=MIN_RUN) -> List[TransitionEvent]:
    """Split, bounce and cross events of a trace, in step order.

    split: K_r increases from step t-1 to step t; one event per such
    step, listing every step t-1 macro (``parents``) whose members are now
    spread over several macros.  bounce / cross: see :func:`ratio_events`;
    both are reported once per (step, macro-cluster) with the components of
    that macro which registered the event.  The unit line is approached
    from either side.
    """
    steps = trace.steps
    if len(steps) < 2:
        raise ValueError("classify_events needs at least two trace steps")
    sigma2 = np.array([s.sigma2 for s in steps])
    labels = np.array([s.macro_labels for s in steps])
    n_macro = np.array([s.n_macro for s in steps])
    ratio = np.array([s.ratio for s in steps])
    events = []
    for t in range(1, len(steps)):
        if n_macro[t] <= n_macro[t - 1]:
            continue
        parents, comps = [], []
        for j in range(n_macro[t - 1]):
            members = np.flatnonzero(labels[t - 1] == j)
            if np.unique(labels[t, members]).size > 1:
                parents.append(j)
                comps.extend(members.tolist())
        if parents:
            events.append(TransitionEvent(float(sigma2[t]), "split", sorted(comps), parents[0],
                                          t, parents))
    for kind_index, kind in ((0, "cross"), (1, "bounce")):
        grouped = {}
        for k in range(ratio.shape[1]):
            found = ratio_events(ratio[:, k], delta_band, min_run)[kind_index]
            for t in found:
                parent = int(labels[max(t - 1, 0), k])
                grouped.setdefault((t, parent), []).append(k)
        for (t, parent), comps in grouped.items():
            events.append(TransitionEvent(float(sigma2[t]), kind, comps, parent, t))
    order = {"split": 0, "bounce": 1, "cross": 2}
    events.sort(key=lambda e: (e.step, order[e.kind], e.parent_macro))
    return events


def first_crossings(trace, delta_band=None, min_run=None) -> np.ndarray:
    """Per component, the step of its first persistent upward passage of ratio 1 (-1 if none)."""
    delta_band = DELTA_BAND if delta_band is None else delta_band
    min_run = MIN_RUN if min_run is None else min_run
    R = np.array([s.ratio for s in trace.steps])
    out = np.full(R.shape[1], -1)
    for k in range(R.shape[1]):
        crosses, _ = ratio_events(R[:, k], delta_band, min_run)
        up = [t for t in crosses if R[t, k] >= 1.0]
        if up:
            out[k] = up[0]
    return out


def events_to_csv(events, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,sigma2,kind,parent_macro,components\n")
        for e in events:
            comps = " ".join(map(str, e.components))
            fh.write(f"{e.step},{e.sigma2:.17g},{e.kind},{e.parent_macro},{comps}\n")


# ------------------------------------------------------------- hierarchy

@dataclass
class HierarchyNode:
    node_id: int
    members: List[int]
    birth_sigma2: float
    death_sigma2: Optional[float]
    size: float
    center: np.ndarray
    parent: Optional[int] = None
    children: List[int] = field(default_factory=list)
    birth_step: int = 0

    def to_dict(self):
        d = asdict(self)
        d["center"] = np.asarray(self.center).tolist()
        return d


@dataclass
class Hierarchy:
    nodes: List[HierarchyNode]

    @property
    def root(self) -> HierarchyNode:
        return self.nodes[0]

    def leaves(self) -> List[HierarchyNode]:
        return [n for n in self.nodes if not n.children]

    def depth(self, node_id) -> int:
        d = 0
        while self.nodes[node_id].parent is not None:
            node_id = self.nodes[node_id].parent
            d += 1
        return d

    def to_dict(self):
        return {"root": 0, "nodes": [n.to_dict() for n in self.nodes]}


def stable_steps(trace, persistence=2) -> List[int]:
    """Steps whose macro partition is unchanged over the next ``persistence - 1`` steps.

    Split steps often show a transient partition for a single step while
    the inner loop is still separating components; those are skipped.
    """
    parts = [_partition(s.macro_labels) for s in trace.steps]
    T = len(parts)
    keep = []
    for t in range(T):
        window = parts[t:min(T, t + persistence)]
        if all(p == parts[t] for p in window):
            keep.append(t)
    return keep


def build_hierarchy(trace, persistence=2) -> Hierarchy:
    """Tree of macro-clusters following their locations as the trace cools.

    Only partitions that persist for ``persistence`` consecutive steps are
    used.  Each macro of such a step is attached to the nearest macro centre
    of the previous persistent step; a macro with several successors dies
    and its successors are born as children.  Components may migrate
    between macros, so node membership is defined from the leaves up: the
    leaves are the macros of the last persistent step and partition the
    components.  A node's size is the predicted next transition of its
    macro at its birth step.
    """
    steps = trace.steps
    if not steps:
        raise ValueError("empty trace")
    keep = stable_steps(trace, persistence)
    if not keep or keep[0] != 0:
        keep = [0] + keep
    first = steps[keep[0]]
    nodes = []

    def new_node(step, t, lab, parent):
        labels = np.asarray(step.macro_labels)
        members = np.flatnonzero(labels == lab).tolist()
        node = HierarchyNode(len(nodes), members, float(step.sigma2), None,
                             float(step.next_transitions[lab]),
                             step.means[members].mean(axis=0), parent=parent, birth_step=t)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.node_id)
        return node.node_id

    if first.n_macro == 1:
        current = {0: new_node(first, keep[0], 0, None)}
    else:
        # already split at the first step: add a synthetic root
        root = HierarchyNode(0, list(range(len(first.macro_labels))), float(first.sigma2),
                             float(first.sigma2), float("nan"), first.means.mean(axis=0))
        nodes.append(root)
        current = {lab: new_node(first, keep[0], lab, 0) for lab in range(first.n_macro)}
    prev = first
    for t in keep[1:]:
        step = steps[t]
        prev_centers = _macro_centers(prev)
        centers = _macro_centers(step)
        link = np.argmin(cdist(centers, prev_centers), axis=1)
        nxt = {}
        for old_lab in range(prev.n_macro):
            succ = np.flatnonzero(link == old_lab)
            nid = current[old_lab]
            if succ.size == 1:
                nxt[int(succ[0])] = nid
                nodes[nid].center = centers[succ[0]]
                nodes[nid].members = np.flatnonzero(
                    np.asarray(step.macro_labels) == succ[0]).tolist()
            elif succ.size > 1:
                nodes[nid].death_sigma2 = float(step.sigma2)
                for lab in succ:
                    nxt[int(lab)] = new_node(step, t, int(lab), nid)
            else:
                # merged into a neighbour; membership now belongs elsewhere
                nodes[nid].death_sigma2 = float(step.sigma2)
                nodes[nid].members = []
        current = nxt
        prev = step
    _prune_and_fill(nodes)
    return Hierarchy(_renumber(nodes))


def _macro_centers(step):
    labels = np.asarray(step.macro_labels)
    return np.array([step.means[labels == j].mean(axis=0) for j in range(step.n_macro)])


def _prune_and_fill(nodes):
    """Drop subtrees without members; set internal members to the union of leaves."""
    def fill(nid):
        node = nodes[nid]
        if not node.children:
            return node.members
        members = []
        kept = []
        for c in node.children:
            sub = fill(c)
            if sub:
                members.extend(sub)
                kept.append(c)
        node.children = kept
        if not kept:
            # every successor merged away: this node is now an empty leaf
            node.members = []
            return []
        if len(kept) == 1:
            # a single surviving child continues its parent
            child = nodes[kept[0]]
            node.children = child.children
            for g in node.children:
                nodes[g].parent = nid
            node.death_sigma2 = child.death_sigma2
            child.parent = -1
        node.members = sorted(members)
        return node.members
    fill(0)


def _renumber(nodes):
    alive = []

    def walk(nid):
        alive.append(nid)
        for c in nodes[nid].children:
            walk(c)
    walk(0)
    new_id = {old: new for new, old in enumerate(alive)}
    out = []
    for old in alive:
        n = nodes[old]
        out.append(HierarchyNode(new_id[old], n.members, n.birth_sigma2, n.death_sigma2, n.size,
                                 n.center, None if n.parent is None else new_id[n.parent],
                                 [new_id[c] for c in n.children], n.birth_step))
    return out


# ------------------------------------------------------- soft extraction

@dataclass
class FrozenCluster:
    """One physical cluster read off a soft trace."""

    mean: np.ndarray
    variance: float
    freeze_sigma2: float
    freeze_step: int
    members: List[int]
    flagged: bool = False

    def to_dict(self):
        return {"mean": np.asarray(self.mean).tolist(), "variance": float(self.variance),
                "freeze_sigma2": float(self.freeze_sigma2), "freeze_step": int(self.freeze_step),
                "members": list(self.members), "flagged": bool(self.flagged)}


def freeze_steps(trace, delta_band=None):
    """Per component, the step whose state is frozen and whether it is a fallback.

    A component settles on the unit line at the start of the final run of
    steps where its ratio stays at or above ``1 - delta_band`` up to the end
    of the trace.  Its state is frozen one step before the first split of
    its macro-cluster after settling, that is the last split before it
    remains at the line.  A component with no such split is frozen where
    its ratio is closest to 1 from above (closest overall if it never
    reaches 1) and flagged.
    """
    delta_band = DELTA_BAND if delta_band is None else delta_band
    R = np.array([s.ratio for s in trace.steps])
    labels = np.array([s.macro_labels for s in trace.steps])
    T, K = R.shape
    steps = np.empty(K, dtype=int)
    flagged = np.zeros(K, dtype=bool)
    for k in range(K):
        low = np.flatnonzero(R[:, k] < 1.0 - delta_band)
        settle = T if low.size and low[-1] == T - 1 else (low[-1] + 1 if low.size else 0)
        freeze = -1
        for t in range(max(settle, 0) + 1, T):
            mates = labels[t - 1] == labels[t - 1, k]
            if np.unique(labels[t, mates]).size > 1:
                freeze = t - 1
                break
        if freeze < 0:
            flagged[k] = True
            r = R[:, k]
            above = np.flatnonzero(r >= 1.0)
            pool = above if above.size else np.arange(T)
            freeze = int(pool[np.argmin(np.abs(r[pool] - 1.0))])
        steps[k] = freeze
    return steps, flagged


def extract_clusters_soft(trace, delta_band=None) -> List[FrozenCluster]:
    """Physical clusters of a soft trace from each component's frozen state.

    Every component contributes the mean and variance it held at its freeze
    step (:func:`freeze_steps`).  Frozen states describing the same
    cluster are merged: two states are linked when their means are closer
    than the smaller of their standard deviations, and linked groups
    (single linkage) become one cluster.  A cluster's mean and variance are
    averages over its members weighted by their mixture mass at freezing.
    Clusters are ordered by freeze step.
    """
    if len(trace) < 2:
        raise ValueError("extract_clusters_soft needs a trace with at least two steps")
    steps, flagged = freeze_steps(trace, delta_band)
    K = len(steps)
    mu = np.array([trace[steps[k]].means[k] for k in range(K)])
    var = np.array([trace[steps[k]].variances[k] for k in range(K)])
    mass = np.array([trace[steps[k]].weights[k] for k in range(K)])
    mass = np.where(mass > 0, mass, np.finfo(float).tiny)
    link = cdist(mu, mu) < np.sqrt(np.minimum(var[:, None], var[None, :]))
    n_groups, group = connected_components(csr_matrix(link), directed=False)
    out = []
    for j in range(n_groups):
        m = np.flatnonzero(group == j)
        first = m[np.argmin(steps[m])]
        out.append(FrozenCluster(np.average(mu[m], axis=0, weights=mass[m]),
                                 float(np.average(var[m], weights=mass[m])),
                                 float(trace[steps[first]].sigma2), int(steps[first]),
                                 m.tolist(), bool(np.all(flagged[m]))))
    out.sort(key=lambda c: (c.freeze_step, c.members[0]))
    return out
