"""Nearest-neighbour extension of a clustering fitted on a subsample.

A first sample S is clustered under capacities measured by Voronoi weights
estimated from a second sample S'.  Any later point x is sent to the
clusters of its nearest neighbour in S, found either exactly or with a
random-projection tree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import persist
from .bicriteria import bicriteria_cluster
from .core import Assignment, Constraints, Instance, nearest_index
from .errors import BalclustError
from .kmeanspp import SeedingConfig, kmeanspp_balanced

log = logging.getLogger(__name__)

EXACT_MAX_N = 4096


@dataclass(frozen=True, eq=False)
class WeightEstimate:
    w_hat: np.ndarray
    counts: np.ndarray


def estimate_weights(S, S_prime) -> WeightEstimate:
    """w_hat[i] = share of S' whose nearest point in S is S[i] (ties to the lowest index)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    Sp = np.atleast_2d(np.asarray(S_prime, dtype=float))
    if S.shape[0] == 0:
        raise BalclustError("S must be nonempty")
    if Sp.shape[0] == 0:
        raise BalclustError("the second sample is empty")
    counts = np.bincount(nearest_index(Sp, S), minlength=S.shape[0])
    return WeightEstimate(counts / counts.sum(), counts)


def second_sample_size(n: int, eps: float, delta: float, c: float = 2.0) -> int:
    return math.ceil(c * (n + math.log(1.0 / delta)) / eps ** 2)


@dataclass(frozen=True, eq=False)
class RpTree:
    """Flat random-projection tree.

    Internal node v has direction ``dirs[v]``, threshold ``thresh[v]`` and
    children ``left[v]``, ``right[v]``; a leaf has ``left[v] == -1`` and
    owns ``perm[start[v]:stop[v]]``.
    """

    points: np.ndarray
    dirs: np.ndarray
    thresh: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    perm: np.ndarray
    leaf_size: int

    @property
    def n_nodes(self) -> int:
        return self.thresh.size

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            v, d = stack.pop()
            best = max(best, d)
            if self.left[v] >= 0:
                stack += [(int(self.left[v]), d + 1), (int(self.right[v]), d + 1)]
        return best

    def leaf_of(self, x) -> int:
        x = np.asarray(x, dtype=float)
        v = 0
        while self.left[v] >= 0:
            v = int(self.left[v] if (x * self.dirs[v]).sum() <= self.thresh[v] else self.right[v])
        return v

    def arrays(self) -> dict[str, np.ndarray]:
        return {"tree_dirs": self.dirs, "tree_thresh": self.thresh,
                "tree_left": self.left.astype(np.int32), "tree_right": self.right.astype(np.int32),
                "tree_start": self.start.astype(np.int32), "tree_stop": self.stop.astype(np.int32),
                "tree_perm": self.perm.astype(np.int32)}

    @classmethod
    def from_arrays(cls, points, arrays, leaf_size) -> "RpTree":
        return cls(points, arrays["tree_dirs"], arrays["tree_thresh"],
                   arrays["tree_left"].astype(np.int64), arrays["tree_right"].astype(np.int64),
                   arrays["tree_start"].astype(np.int64), arrays["tree_stop"].astype(np.int64),
                   arrays["tree_perm"].astype(np.int64), leaf_size)


def build_rptree(S, leaf_size: int, rng: np.random.Generator) -> RpTree:
    """Split on a Gaussian random direction at the lower median until leaves hold <= leaf_size points."""
    if leaf_size < 1:
        raise BalclustError("leaf_size must be at least 1")
    X = np.atleast_2d(np.asarray(S, dtype=float))
    n, d = X.shape
    perm = np.arange(n)
    dirs, thresh, left, right, start, stop = [], [], [], [], [], []

    def new_node(a, b):
        dirs.append(np.zeros(d))
        thresh.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(a)
        stop.append(b)
        return len(thresh) - 1

    stack = [new_node(0, n)]
    while stack:
        v = stack.pop()
        a, b = start[v], stop[v]
        if b - a <= leaf_size:
            continue
        u = rng.standard_normal(d)
        norm = np.linalg.norm(u)
        u = u / norm if norm > 0 else np.eye(d)[0]
        idx = perm[a:b]
        proj = (X[idx] * u).sum(axis=1)
        order = np.lexsort((idx, proj))
        perm[a:b] = idx[order]
        half = (b - a + 1) // 2
        dirs[v] = u
        thresh[v] = float(proj[order[half - 1]])
        lc = new_node(a, a + half)
        rc = new_node(a + half, b)
        left[v], right[v] = lc, rc
        stack += [rc, lc]
    return RpTree(X, np.array(dirs).reshape(-1, d), np.array(thresh), np.array(left),
                  np.array(right), np.array(start), np.array(stop), perm, leaf_size)


def nn_query(tree: RpTree, x) -> int:
    """Approximate nearest neighbour: descend to one leaf and scan it exactly."""
    v = tree.leaf_of(x)
    cand = np.sort(tree.perm[tree.start[v]:tree.stop[v]])
    d2 = ((tree.points[cand] - np.asarray(x, dtype=float)) ** 2).sum(axis=1)
    return int(cand[int(np.argmin(d2))])


def nn_query_many(tree: RpTree, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = tree.left[node] >= 0
    while active.any():
        q = np.flatnonzero(active)
        v = node[q]
        go_left = (X[q] * tree.dirs[v]).sum(axis=1) <= tree.thresh[v]
        node[q] = np.where(go_left, tree.left[v], tree.right[v])
        active = tree.left[node] >= 0
    out = np.empty(X.shape[0], dtype=np.int64)
    for leaf in np.unique(node):
        q = np.flatnonzero(node == leaf)
        cand = np.sort(tree.perm[tree.start[leaf]:tree.stop[leaf]])
        out[q] = cand[nearest_index(X[q], tree.points[cand])]
    return out


@dataclass(frozen=True, eq=False)
class Dispatcher:
    """Fitted nearest-neighbour dispatcher; immutable once built."""

    S: np.ndarray
    g_S: np.ndarray
    constraints: Constraints
    algo: str
    backend: str
    n_clusters: int
    w_hat: np.ndarray
    tree: RpTree | None = None
    leaf_size: int = 32

    kind = "nn"

    @property
    def p(self) -> int:
        return self.g_S.shape[1]

    def nearest(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.backend == "rptree":
            return nn_query_many(self.tree, X)
        return nearest_index(X, self.S)

    def route(self, X) -> np.ndarray:
        """(m, p) cluster ids for the rows of X."""
        return self.g_S[self.nearest(X)]

    def save(self, path) -> None:
        c = self.constraints
        params = {"k": c.k, "p": c.p, "ell": c.ell, "cap_L": c.cap_L, "algo": self.algo,
                  "backend": self.backend, "n_clusters": self.n_clusters, "leaf_size": self.leaf_size}
        arrays = {"S": self.S.astype(np.float64), "g_S": self.g_S.astype(np.int32),
                  "w_hat": self.w_hat.astype(np.float64)}
        if self.tree is not None:
            arrays.update(self.tree.arrays())
        persist.dump(path, self.kind, params, arrays)

    @classmethod
    def from_saved(cls, params, arrays) -> "Dispatcher":
        S = arrays["S"]
        tree = None
        if params["backend"] == "rptree":
            tree = RpTree.from_arrays(S, arrays, params["leaf_size"])
        cons = Constraints(params["k"], params["p"], params["ell"], params["cap_L"])
        return cls(S, arrays["g_S"].astype(np.int64), cons, params["algo"], params["backend"],
                   params["n_clusters"], arrays["w_hat"], tree, params["leaf_size"])


def _replica_table(assignment: Assignment, p: int) -> np.ndarray:
    rows = []
    for row in assignment.assign:
        ids = sorted(c for c, m in row.items() for _ in range(m))
        if len(ids) != p:
            raise BalclustError(f"point served {len(ids)} times, expected {p}")
        rows.append(ids)
    return np.array(rows, dtype=np.int64).reshape(len(rows), p)


def fit_dispatcher(S, S_prime, constraints: Constraints, algo: str = "kmeanspp",
                   rng: np.random.Generator | None = None, *, backend: str | None = None,
                   leaf_size: int = 32, objective: str = "kmedian",
                   config: SeedingConfig | None = None) -> Dispatcher:
    """Estimate weights from S', cluster S under weighted capacities and index S for NN."""
    rng = np.random.default_rng(0) if rng is None else rng
    S = np.atleast_2d(np.asarray(S, dtype=float))
    est = estimate_weights(S, S_prime)
    if algo == "kmeanspp":
        if constraints.p != 1:
            raise BalclustError("kmeanspp dispatch requires p = 1")
        assignment, _ = kmeanspp_balanced(S, constraints, config, rng, weights=est.w_hat)
    elif algo == "lp-round":
        if constraints.p < 2:
            raise BalclustError("lp-round dispatch requires p >= 2")
        resolution = int(est.counts.sum())
        assignment, _, _ = bicriteria_cluster(Instance.from_points(S), constraints, objective,
                                              weights=est.w_hat, resolution=resolution)
    else:
        raise BalclustError(f"unknown dispatch algorithm {algo!r}")
    if backend is None:
        backend = "exact" if S.shape[0] <= EXACT_MAX_N else "rptree"
    if backend not in ("exact", "rptree"):
        raise BalclustError(f"unknown NN backend {backend!r}")
    tree = build_rptree(S, leaf_size, rng) if backend == "rptree" else None
    g = _replica_table(assignment, constraints.p)
    log.info("fitted %s dispatcher: %d subsample points, %d clusters, %s backend",
             algo, S.shape[0], assignment.n_clusters, backend)
    return Dispatcher(S, g, constraints, algo, backend, assignment.n_clusters, est.w_hat, tree, leaf_size)


def dispatch(dispatcher, x) -> tuple[int, ...]:
    return tuple(int(c) for c in np.atleast_1d(dispatcher.route(np.atleast_2d(x))[0]))


def estimate_alpha(S, holdout, power: int = 1) -> float:
    """Mean of d(x, NN_S(x)) ** power over the holdout."""
    if power not in (1, 2):
        raise BalclustError("power must be 1 or 2")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    H = np.atleast_2d(np.asarray(holdout, dtype=float))
    if H.size == 0:
        raise BalclustError("holdout is empty")
    nn = nearest_index(H, S)
    d2 = np.maximum(((H - S[nn]) ** 2).sum(axis=1), 0.0)
    return float(np.mean(d2 if power == 2 else np.sqrt(d2)))


def load_dispatcher(path):
    """Read any persisted dispatcher (nearest-neighbour or baseline)."""
    from . import baselines

    kind, params, arrays = persist.load(path)
    if kind == "nn":
        return Dispatcher.from_saved(params, arrays)
    return baselines.from_saved(kind, params, arrays)


__all__ = ["WeightEstimate", "estimate_weights", "second_sample_size", "RpTree", "build_rptree",
           "nn_query", "nn_query_many", "Dispatcher", "fit_dispatcher", "dispatch",
           "estimate_alpha", "load_dispatcher"]
