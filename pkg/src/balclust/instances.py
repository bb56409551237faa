"""Synthetic instance generators and an exact brute-force oracle."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.cluster.hierarchy import linkage

from .core import Assignment, Constraints, Instance, Objective
from .errors import BalclustError, InfeasibleError
from .mincostflow import FlowNetwork, solve_mcf

ORACLE_MAX_SUBSETS = 10 ** 6
GROUP_EPS = 1e-6


def gen_star(nl: int) -> Instance:
    """Hub 0 plus 10*nl leaves; hub-leaf distance 1, leaf-leaf distance 2."""
    if nl < 3:
        raise BalclustError("the star construction needs nl >= 3")
    n = 10 * nl + 1
    d = np.full((n, n), 2.0)
    d[0, :] = d[:, 0] = 1.0
    np.fill_diagonal(d, 0.0)
    return Instance.from_distances(d, name="star", nl=nl, ell=nl / n)


def gen_groups(k_prime: int, nl: int, eps: bool = False) -> Instance:
    """k_prime groups of 2*nl - 1 points; 0 inside a group (or GROUP_EPS), 1 across."""
    if nl < 2:
        raise BalclustError("the groups construction needs nl >= 2")
    if k_prime < 1:
        raise BalclustError("k_prime must be positive")
    size = 2 * nl - 1
    group = np.repeat(np.arange(k_prime), size)
    same = group[:, None] == group[None, :]
    d = np.where(same, GROUP_EPS if eps else 0.0, 1.0)
    np.fill_diagonal(d, 0.0)
    n = group.size
    return Instance.from_distances(d, labels=group, name="groups", nl=nl, ell=nl / n)


def hierarchical_labels(centers: np.ndarray, n_labels: int, rng: np.random.Generator) -> np.ndarray:
    """Label centers so that nearby ones share labels.

    Each node of a complete-linkage tree owns a range of labels, split between
    its children in proportion to their leaf counts; a leaf picks uniformly
    from its range.
    """
    m = centers.shape[0]
    if m == 1:
        return np.array([int(rng.integers(n_labels))])
    Z = linkage(centers, method="complete")
    size = np.concatenate([np.ones(m, dtype=np.int64), Z[:, 3].astype(np.int64)])
    out = np.empty(m, dtype=np.int64)
    stack = [(2 * m - 2, 0, n_labels)]
    while stack:
        node, a, b = stack.pop()
        if node < m:
            out[node] = a if b - a == 1 else a + int(rng.integers(b - a))
            continue
        left, right = int(Z[node - m, 0]), int(Z[node - m, 1])
        span = b - a
        if span == 1:
            stack += [(left, a, b), (right, a, b)]
            continue
        share = round(span * size[left] / (size[left] + size[right]))
        share = min(max(share, 1), span - 1)
        stack += [(left, a, a + share), (right, a + share, b)]
    return out


def gen_gaussian_mixture(components: int = 20, dims: int = 5, sigma: float = 0.05, n: int = 2000,
                         rng: np.random.Generator | None = None, n_labels: int | None = None) -> Instance:
    """Equal-weight isotropic Gaussians with means uniform in the unit cube."""
    if components < 1:
        raise BalclustError("components must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    if n_labels is None:
        n_labels = max(1, math.ceil(0.15 * components))
    centers = rng.random((components, dims))
    center_labels = hierarchical_labels(centers, n_labels, rng)
    comp = rng.integers(components, size=n)
    X = centers[comp] + sigma * rng.standard_normal((n, dims))
    return Instance.from_points(X, labels=center_labels[comp], name="gmm", component=comp,
                               centers=centers, center_labels=center_labels)


def grid_class(X: np.ndarray, side: float = 10.0, cells: int = 4) -> np.ndarray:
    width = side / cells
    i = np.clip(np.floor(X[:, 0] / width), 0, cells - 1).astype(np.int64)
    j = np.clip(np.floor(X[:, 1] / width), 0, cells - 1).astype(np.int64)
    return cells * i + j


def gen_grid_rect(n: int, rng: np.random.Generator | None = None, dims: int = 100) -> Instance:
    """Uniform on [0,10]^2 x [0,1]^(dims-2); class = cell of a 4x4 grid on the first two coordinates."""
    if dims < 2:
        raise BalclustError("the grid rectangle needs at least 2 dimensions")
    rng = np.random.default_rng(0) if rng is None else rng
    X = rng.random((n, dims))
    X[:, :2] *= 10.0
    return Instance.from_points(X, labels=grid_class(X), name="grid")


def two_gaussian_label(X: np.ndarray) -> np.ndarray:
    x1 = np.asarray(X, dtype=float)[:, 0]
    return np.where(x1 <= 0, -1, np.where(x1 <= 5, 1, 2))


def gen_two_gaussians(n: int, rng: np.random.Generator | None = None, ell: float = 0.1,
                      cap_L: float = 1.0) -> Instance:
    """Unit Gaussians at (0,0) and (10,0), the second with mixing weight 0.8*ell."""
    rng = np.random.default_rng(0) if rng is None else rng
    far = rng.random(n) < 0.8 * ell
    X = rng.standard_normal((n, 2))
    X[far, 0] += 10.0
    return Instance.from_points(X, labels=two_gaussian_label(X), name="twogauss",
                                ell=ell, cap_L=cap_L)


# ---------------------------------------------------------------- oracle

def _assign_flow(cost: np.ndarray, allowed: np.ndarray, p: int, lo: int, hi: int):
    """Cheapest assignment of every point to p distinct centers with loads in [lo, hi].

    ``cost`` and ``allowed`` are (k, n).  Lower loads become node demands on the
    centers with the sink demand reduced to match; returns (cost, mult) or None.
    """
    k, n = cost.shape
    net = FlowNetwork(0)
    for _ in range(n):
        net.add_node(p)
    for _ in range(k):
        net.add_node(-lo)
    sink = net.add_node(-(n * p - k * lo))
    edges = []
    for j in range(n):
        for c in range(k):
            if allowed[c, j]:
                edges.append((c, j, net.add_edge(j, n + c, 1, float(cost[c, j]))))
    for c in range(k):
        net.add_edge(n + c, sink, hi - lo, 0.0)
    try:
        res = solve_mcf(net)
    except InfeasibleError:
        return None
    mult = np.zeros((k, n), dtype=np.int64)
    total = 0.0
    for c, j, e in edges:
        if res.flow[e]:
            mult[c, j] = 1
            total += float(cost[c, j])
    return total, mult


def _subset_bounds(C: np.ndarray, combos: np.ndarray, p: int, kcenter: bool) -> np.ndarray:
    """Capacity-free lower bound on each subset's optimum."""
    sub = np.sort(C[combos], axis=1)[:, :p, :]
    return sub[:, p - 1, :].max(axis=1) if kcenter else sub.sum(axis=(1, 2))


def _solve_subset(subset, C, dist, p, lo, hi, kcenter, bound):
    idx = list(subset)
    if not kcenter:
        return _assign_flow(C[idx], np.ones((len(idx), C.shape[1]), dtype=bool), p, lo, hi)
    sub = dist[idx]
    ts = np.unique(sub[sub >= bound - 1e-12])
    zero = np.zeros_like(sub)
    best = None
    a, b = 0, ts.size - 1
    while a <= b:
        mid = (a + b) // 2
        got = _assign_flow(zero, sub <= ts[mid] + 1e-12, p, lo, hi)
        if got is None:
            a = mid + 1
        else:
            best = (float(ts[mid]), got[1])
            b = mid - 1
    if best is None:
        return None
    t, mult = best
    return float(sub[mult > 0].max()) if mult.any() else t, mult


def brute_force_opt(instance: Instance, constraints: Constraints, objective="kmedian",
                    threads: int = 1, chunk: int = 4096):
    """Exact optimum over every choice of k distinct center points.

    Subsets are visited in order of a capacity-free lower bound, and the
    search stops once that bound exceeds the incumbent.  Equal values keep
    the lexicographically smallest center set.  Returns (value, Assignment).
    """
    objective = Objective.parse(objective)
    n, k, p = instance.n, constraints.k, constraints.p
    if k > n:
        raise InfeasibleError(f"cannot open {k} distinct centers among {n} points")
    if math.comb(n, k) > ORACLE_MAX_SUBSETS:
        raise BalclustError(f"C({n},{k}) exceeds the oracle guard of {ORACLE_MAX_SUBSETS} subsets")
    lo, hi = constraints.lower_count(n), min(constraints.upper_count(n), n)
    if k * lo > n * p or k * hi < n * p:
        raise InfeasibleError(f"loads in [{lo}, {hi}] cannot absorb {n}*{p} assignments")
    kcenter = objective is Objective.KCENTER
    dist = instance.distances
    C = instance.sq_distances if objective is Objective.KMEANS else dist
    combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64).reshape(-1, k)
    bounds = np.concatenate([_subset_bounds(C, combos[s:s + chunk], p, kcenter)
                             for s in range(0, len(combos), chunk)])
    order = np.lexsort((np.arange(len(combos)), bounds))
    best_val, best_rank, best_mult = math.inf, None, None

    def tol(v):
        return 1e-9 * max(1.0, abs(v))

    def run(rank):
        return rank, _solve_subset(combos[rank], C, dist, p, lo, hi, kcenter, bounds[rank])

    batch = max(1, threads) * 4
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        pos = 0
        while pos < len(order):
            if bounds[order[pos]] > best_val + tol(best_val):
                break
            ranks = [int(r) for r in order[pos:pos + batch]
                     if bounds[r] <= best_val + tol(best_val)]
            pos += batch
            results = pool.map(run, ranks) if pool else map(run, ranks)
            for rank, got in results:
                if got is None:
                    continue
                val, mult = got
                better = best_rank is None or val < best_val - tol(best_val)
                tie = best_rank is not None and abs(val - best_val) <= tol(best_val) and rank < best_rank
                if better or tie:
                    best_val, best_rank, best_mult = val, rank, mult
    finally:
        if pool:
            pool.shutdown()
    if best_rank is None:
        raise InfeasibleError("no center set admits a capacity-feasible assignment")
    centers = [int(c) for c in combos[best_rank]]
    return float(best_val), Assignment.from_matrix(centers, best_mult)
