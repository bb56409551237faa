"""k-means++ seeding, greedy pruning, Lloyd iterations and size balancing.

This is the scalable p = 1 path.  Seeding oversamples N centers by D^2
sampling, greedy pruning removes the center whose loss hurts least until k
remain, Lloyd refines, and the balancing step merges clusters that are too
small and splits those that are too large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Assignment, Constraints, ViolationReport, check_capacities, nearest_index, pairwise_sq_dists
from .errors import BalclustError, InfeasibleError, InvariantError


def default_oversample(k: int) -> int:
    return k * math.ceil(math.log(k + 1)) + k


@dataclass(frozen=True)
class SeedingConfig:
    k: int
    oversample: int | None = None
    lloyd_iters: int = 10
    seed: int = 0

    @property
    def n_seeds(self) -> int:
        return default_oversample(self.k) if self.oversample is None else self.oversample

    def __post_init__(self):
        if self.k < 1:
            raise BalclustError("k must be positive")
        if self.oversample is not None and self.oversample < self.k:
            raise BalclustError("oversample count must be at least k")
        if self.lloyd_iters < 0:
            raise BalclustError("lloyd_iters must be nonnegative")


def dsquared_seed(points: np.ndarray, m: int, rng: np.random.Generator,
                  weights: np.ndarray | None = None) -> list[int]:
    """m distinct indices: the first drawn by weight, the rest by weight * D^2."""
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if m > n:
        raise BalclustError(f"cannot draw {m} distinct seeds from {n} points")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    chosen: list[int] = []
    taken = np.zeros(n, dtype=bool)
    first = w / w.sum() if w.sum() > 0 else np.full(n, 1.0 / n)
    c = int(rng.choice(n, p=first))
    chosen.append(c)
    taken[c] = True
    d2 = pairwise_sq_dists(X, X[c:c + 1])[:, 0]
    while len(chosen) < m:
        score = w * d2
        score[taken] = 0.0
        total = score.sum()
        if total <= 0:
            # Everything left coincides with a chosen seed: fall back to uniform.
            free = np.flatnonzero(~taken)
            c = int(free[rng.integers(free.size)])
        else:
            c = int(rng.choice(n, p=score / total))
        chosen.append(c)
        taken[c] = True
        d2 = np.minimum(d2, pairwise_sq_dists(X, X[c:c + 1])[:, 0])
    return chosen


def kmeans_cost(points: np.ndarray, centers: np.ndarray, weights: np.ndarray | None = None) -> float:
    d2 = pairwise_sq_dists(points, centers).min(axis=1)
    return float(d2.sum() if weights is None else d2 @ weights)


def greedy_prune(points: np.ndarray, centers: list[int], k: int,
                 weights: np.ndarray | None = None) -> list[int]:
    """Drop, one at a time, the center whose removal raises the k-means cost least."""
    X = np.asarray(points, dtype=float)
    keep = list(centers)
    if len(keep) < k:
        raise BalclustError("fewer centers than k")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    D = pairwise_sq_dists(X, X[keep])
    alive = np.ones(len(keep), dtype=bool)
    while alive.sum() > k:
        cols = np.flatnonzero(alive)
        sub = D[:, cols]
        part = np.argsort(sub, axis=1, kind="stable")[:, :2]
        best = sub[np.arange(sub.shape[0]), part[:, 0]]
        second = sub[np.arange(sub.shape[0]), part[:, 1]]
        loss = np.bincount(part[:, 0], weights=w * (second - best), minlength=cols.size)
        alive[cols[int(np.argmin(loss))]] = False
    return [keep[i] for i in np.flatnonzero(alive)]


def lloyd(points: np.ndarray, centers: np.ndarray, iters: int,
          weights: np.ndarray | None = None) -> np.ndarray:
    """Standard Lloyd steps; an empty cluster keeps its previous center."""
    X = np.asarray(points, dtype=float)
    C = np.array(centers, dtype=float, copy=True)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    prev = kmeans_cost(X, C, w)
    for _ in range(iters):
        lab = nearest_index(X, C)
        mass = np.bincount(lab, weights=w, minlength=C.shape[0])
        sums = np.zeros_like(C)
        np.add.at(sums, lab, X * w[:, None])
        nonempty = mass > 0
        C[nonempty] = sums[nonempty] / mass[nonempty, None]
        cost = kmeans_cost(X, C, w)
        if cost > prev * (1 + 1e-12) + 1e-12:
            raise InvariantError(f"Lloyd cost rose from {prev} to {cost}")
        if cost >= prev:
            break
        prev = cost
    return C


def _centroids(X, labels, w, m):
    mass = np.bincount(labels, weights=w, minlength=m)
    sums = np.zeros((m, X.shape[1]))
    np.add.at(sums, labels, X * w[:, None])
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / mass[:, None]


def balance_heuristic(points: np.ndarray, labels, ell: float, cap_L: float,
                      rng: np.random.Generator, weights: np.ndarray | None = None):
    """Merge undersized clusters into the nearest one, then split oversized ones.

    Sizes are point counts compared with [ceil(ell*n), floor(cap_L*n)], or
    weight sums compared with [ell, cap_L] when ``weights`` is given.
    Returns (labels, centroids); labels are renumbered 0..m-1.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    lab = np.unique(np.asarray(labels), return_inverse=True)[1].astype(np.int64)
    if weights is None:
        w = np.ones(n)
        lo = math.ceil(n * ell - 1e-9)
        hi = math.floor(n * cap_L + 1e-9)
    else:
        w = np.asarray(weights, dtype=float)
        lo, hi = ell, cap_L
    if lo > w.sum() + 1e-12 or hi <= 0:
        raise InfeasibleError("size bounds admit no clustering")
    clusters = {c: list(np.flatnonzero(lab == c)) for c in range(int(lab.max()) + 1)}

    def mass(c):
        return float(w[clusters[c]].sum())

    def centroid(c):
        idx = clusters[c]
        return (X[idx] * w[idx, None]).sum(axis=0) / max(w[idx].sum(), 1e-300)

    while len(clusters) > 1:
        small = [c for c in clusters if mass(c) < lo - 1e-12]
        if not small:
            break
        c = min(small, key=lambda q: (mass(q), q))
        mine = centroid(c)
        others = [q for q in clusters if q != c]
        d = [float(((centroid(q) - mine) ** 2).sum()) for q in others]
        target = others[int(np.argmin(d))]
        clusters[target] = sorted(clusters[target] + clusters.pop(c))
    parts: list[list[int]] = []
    for c in sorted(clusters):
        idx = np.array(clusters[c])
        s = mass(c)
        if s <= hi + 1e-12:
            parts.append(list(idx))
            continue
        m = math.ceil(s / hi - 1e-12)
        if weights is None and s // m < lo:
            raise InfeasibleError(f"a cluster of {int(s)} points cannot be split within [{lo}, {hi}]")
        order = idx[rng.permutation(idx.size)]
        if weights is None:
            parts.extend(list(chunk) for chunk in np.array_split(order, m))
        else:
            bins: list[list[int]] = [[] for _ in range(m)]
            load = np.zeros(m)
            for v in order:
                b = int(np.argmin(load))
                bins[b].append(int(v))
                load[b] += w[v]
            parts.extend(bins)
    out = np.empty(n, dtype=np.int64)
    for r, part in enumerate(parts):
        out[part] = r
    if weights is None:
        sizes = np.bincount(out, minlength=len(parts))
        if n >= lo and (np.any(sizes < lo) or np.any(sizes > hi)):
            raise InvariantError(f"balanced sizes {sizes.tolist()} outside [{lo}, {hi}]")
    return out, _centroids(X, out, w, len(parts))


def kmeanspp_balanced(points: np.ndarray, constraints: Constraints, config: SeedingConfig | None = None,
                      rng: np.random.Generator | None = None,
                      weights: np.ndarray | None = None) -> tuple[Assignment, ViolationReport]:
    """Seed, prune, refine and balance; returns a p = 1 assignment with centroid centers."""
    if constraints.p != 1:
        raise BalclustError("the k-means++ path supports p = 1 only")
    X = np.asarray(points, dtype=float)
    config = SeedingConfig(constraints.k) if config is None else config
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = X.shape[0]
    k = min(constraints.k, n)
    seeds = dsquared_seed(X, min(config.n_seeds, n), rng, weights)
    kept = greedy_prune(X, seeds, k, weights)
    C = lloyd(X, X[kept], config.lloyd_iters, weights)
    lab = nearest_index(X, C)
    lab, cent = balance_heuristic(X, lab, constraints.ell, constraints.cap_L, rng, weights)
    assignment = Assignment.from_labels(lab, center_coords=cent)
    return assignment, check_capacities(assignment, constraints, weights)
