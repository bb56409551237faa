"""Threshold algorithms that are exact or near-exact on approximation-stable data.

``bbg_cluster`` greedily carves max-degree neighbourhoods out of a threshold
graph; ``tau_sweep`` tries every threshold, repairs capacities and keeps the
cheapest k-median result; ``kcenter_stable`` returns the connected
components of the first threshold graph with exactly k balanced components.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Assignment, Instance
from .errors import InfeasibleError, NotStableError, SuggestLargerTauError


@dataclass(eq=False)
class ThresholdClustering:
    tau: float
    clusters: list[list[int]]
    attached: list[int] = field(default_factory=list)
    moves: int = 0

    @property
    def n(self) -> int:
        return sum(len(c) for c in self.clusters)

    def labels(self) -> np.ndarray:
        lab = np.empty(self.n, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            lab[members] = c
        return lab

    def to_assignment(self, dist: np.ndarray) -> Assignment:
        centers = [medoid(dist, m) if m else -1 for m in self.clusters]
        return Assignment.from_labels(self.labels(), centers)


def medoid(dist: np.ndarray, members) -> int:
    members = list(members)
    sub = dist[np.ix_(members, members)].sum(axis=1)
    return int(members[int(np.argmin(sub))])


def kmedian_cost(dist: np.ndarray, clusters) -> float:
    total = 0.0
    for members in clusters:
        if members:
            total += float(dist[medoid(dist, members), members].sum())
    return total


def bbg_cluster(instance: Instance, k: int, tau: float) -> ThresholdClustering:
    """k rounds of carving the closed neighbourhood of a max-degree surviving vertex."""
    dist = instance.distances
    n = instance.n
    adj = dist <= tau + 1e-12
    alive = np.ones(n, dtype=bool)
    clusters: list[list[int]] = []
    for _ in range(k):
        if not alive.any():
            break
        deg = (adj & alive[None, :]).sum(axis=1)
        deg[~alive] = -1
        v = int(np.argmax(deg))
        carve = np.flatnonzero(adj[v] & alive)
        clusters.append([int(i) for i in carve])
        alive[carve] = False
    if len(clusters) < k:
        raise SuggestLargerTauError(f"only {len(clusters)} nonempty clusters at tau={tau}")
    left = [int(i) for i in np.flatnonzero(alive)]
    for j in left:
        link = [dist[j, c].min() for c in clusters]
        clusters[int(np.argmin(link))].append(j)
    return ThresholdClustering(float(tau), [sorted(c) for c in clusters], left)


def capacity_repair(clustering: ThresholdClustering, ell: float, cap_L: float,
                    dist: np.ndarray) -> ThresholdClustering:
    """Move points from the largest to the smallest cluster until all sizes fit.

    The moved point is the one in the largest cluster closest to the smallest
    cluster's medoid; an empty target takes the point farthest from its own
    medoid.
    """
    clusters = [list(c) for c in clustering.clusters]
    n = sum(len(c) for c in clusters)
    k = len(clusters)
    lo = math.ceil(n * ell - 1e-9)
    hi = math.floor(n * cap_L + 1e-9)
    if k * lo > n or k * hi < n:
        raise InfeasibleError(f"no {k}-clustering of {n} points fits [{lo}, {hi}]")
    moves = 0
    while True:
        sizes = [len(c) for c in clusters]
        if all(lo <= s <= hi for s in sizes):
            break
        big = max(range(k), key=lambda c: (sizes[c], -c))
        small = min(range(k), key=lambda c: (sizes[c], c))
        if sizes[big] - sizes[small] <= 1:
            raise InfeasibleError("capacity repair stalled")
        src = clusters[big]
        if clusters[small]:
            m = medoid(dist, clusters[small])
            pick = min(src, key=lambda j: (dist[m, j], j))
        else:
            own = medoid(dist, src)
            pick = max(src, key=lambda j: (dist[own, j], -j))
        src.remove(pick)
        clusters[small].append(pick)
        moves += 1
    return ThresholdClustering(clustering.tau, [sorted(c) for c in clusters],
                               list(clustering.attached), clustering.moves + moves)


def size_violation(sizes, n: int, ell: float, cap_L: float) -> int:
    lo = math.ceil(n * ell - 1e-9)
    hi = math.floor(n * cap_L + 1e-9)
    return int(sum(max(0, s - hi) + max(0, lo - s) for s in sizes))


def tau_sweep(instance: Instance, k: int, ell: float, cap_L: float,
              threads: int = 1) -> ThresholdClustering:
    """Best repaired BBG clustering over all thresholds, scored by k-median cost."""
    dist = instance.distances
    taus = np.unique(np.concatenate([[0.0], dist[np.triu_indices(instance.n, 1)]]))

    def probe(tau):
        try:
            cl = capacity_repair(bbg_cluster(instance, k, float(tau)), ell, cap_L, dist)
        except (SuggestLargerTauError, InfeasibleError):
            return None
        return kmedian_cost(dist, cl.clusters), cl

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(probe, taus))
    else:
        results = [probe(t) for t in taus]
    best = None
    for r in results:
        if r is not None and (best is None or r[0] < best[0]):
            best = r
    if best is None:
        raise InfeasibleError("no threshold produced a capacity-feasible clustering")
    return best[1]


def _components(adj: np.ndarray) -> list[list[int]]:
    n = adj.shape[0]
    comp = np.full(n, -1)
    out = []
    for s in range(n):
        if comp[s] >= 0:
            continue
        stack, members = [s], []
        comp[s] = len(out)
        while stack:
            v = stack.pop()
            members.append(v)
            for w in np.flatnonzero(adj[v] & (comp < 0)):
                comp[w] = len(out)
                stack.append(int(w))
        out.append(sorted(int(v) for v in members))
    return out


def kcenter_stable(instance: Instance, k: int, ell: float, cap_L: float):
    """Smallest r whose threshold graph has exactly k components, all within the size bounds.

    Returns (clustering, r); raises NotStableError when no r qualifies.
    """
    dist = instance.distances
    n = instance.n
    lo = math.ceil(n * ell - 1e-9)
    hi = math.floor(n * cap_L + 1e-9)
    for r in np.unique(np.concatenate([[0.0], dist.ravel()])):
        comps = _components(dist <= r + 1e-12)
        if len(comps) < k:
            break
        if len(comps) == k and all(lo <= len(c) <= hi for c in comps):
            return ThresholdClustering(float(r), comps), float(r)
    raise NotStableError(f"no threshold yields exactly {k} components within [{lo}, {hi}]")
