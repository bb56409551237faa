"""Balanced k-center with p-replication and no constraint violation.

For each threshold t (ascending) the threshold graph G_t is split into
connected components.  Every component gets its own k-center LP with
sum(y) = k_c, the k_c are allocated from the per-component feasible ranges,
and each component is rounded independently:

1. a tree of monarchs (adjacent monarchs are 3 hops apart),
2. an initial aggregation that fills every monarch to opening 1,
3. a bottom-up pass over the tree that makes all openings integral while
   moving opening at most 5 hops,
4. a unit-capacity min-cost flow that makes the assignment integral.

Every assigned pair ends up within 6 hops in G_t, so within 6t.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Assignment, Constraints, Instance, check_capacities
from .errors import InfeasibleError, InvariantError, NoSolutionError
from .lp_relax import FractionalSolution, kcenter_lp_feasible
from .mincostflow import FlowNetwork, check_flow, solve_mcf

ZERO = 1e-9
UNREACHABLE = 10 ** 9


@dataclass(eq=False)
class ThresholdGraph:
    t: float
    adj: list[list[int]]

    @classmethod
    def build(cls, dist: np.ndarray, t: float) -> "ThresholdGraph":
        n = dist.shape[0]
        close = dist <= t + 1e-12
        return cls(float(t), [[int(j) for j in np.flatnonzero(close[i]) if j != i] for i in range(n)])

    @property
    def n(self) -> int:
        return len(self.adj)

    def hops_from(self, src: int) -> np.ndarray:
        d = np.full(self.n, UNREACHABLE, dtype=np.int64)
        d[src] = 0
        q = deque([src])
        while q:
            v = q.popleft()
            for w in self.adj[v]:
                if d[w] == UNREACHABLE:
                    d[w] = d[v] + 1
                    q.append(w)
        return d

    def hop_matrix(self) -> np.ndarray:
        return np.stack([self.hops_from(i) for i in range(self.n)]) if self.n else np.zeros((0, 0), int)

    def components(self) -> list[list[int]]:
        seen = np.zeros(self.n, dtype=bool)
        comps = []
        for s in range(self.n):
            if seen[s]:
                continue
            reach = np.flatnonzero(self.hops_from(s) < UNREACHABLE)
            seen[reach] = True
            comps.append([int(v) for v in reach])
        return comps

    def subgraph(self, nodes: list[int]) -> "ThresholdGraph":
        pos = {v: r for r, v in enumerate(nodes)}
        return ThresholdGraph(self.t, [[pos[w] for w in self.adj[v] if w in pos] for v in nodes])


@dataclass(eq=False)
class MonarchTree:
    monarchs: list[int]
    parent: dict[int, int | None]
    children: dict[int, list[int]]
    monarch_of: np.ndarray
    child_monarchs: list[list[int]]
    dependents: list[list[int]]

    def empire(self, u: int) -> list[int]:
        return [int(v) for v in np.flatnonzero(self.monarch_of == u)]


@dataclass
class ShiftLog:
    moves: list[tuple[int, int, float, int]] = field(default_factory=list)

    def add(self, a: int, b: int, delta: float, hop: int) -> None:
        self.moves.append((a, b, float(delta), int(hop)))

    @property
    def max_hop(self) -> int:
        return max((m[3] for m in self.moves), default=0)


def build_monarch_tree(G: ThresholdGraph) -> MonarchTree:
    """Grow monarchs from the lowest index; each new monarch sits 2 hops from the marked set."""
    n = G.n
    if n == 0:
        raise InvariantError("empty component")
    hops = G.hop_matrix()
    if np.any(hops >= UNREACHABLE):
        raise InvariantError("monarch tree needs a connected graph")
    monarch_of = np.full(n, -1, dtype=np.int64)
    child_monarchs: list[list[int]] = [[] for _ in range(n)]
    dependents: list[list[int]] = [[] for _ in range(n)]
    parent: dict[int, int | None] = {}
    children: dict[int, list[int]] = {}
    monarchs: list[int] = []

    def crown(u: int, par: int | None) -> None:
        monarchs.append(u)
        parent[u] = par
        children[u] = []
        if par is not None:
            children[par].append(u)
        monarch_of[u] = u
        for w in G.adj[u]:
            monarch_of[w] = u

    crown(0, None)
    while True:
        marked = np.flatnonzero(monarch_of >= 0)
        unmarked = np.flatnonzero(monarch_of < 0)
        if unmarked.size == 0:
            break
        to_marked = hops[np.ix_(unmarked, marked)].min(axis=1)
        cand = unmarked[to_marked == 2]
        if cand.size == 0:
            break
        u = int(cand[0])
        v = int(marked[np.flatnonzero(hops[u, marked] == 2)[0]])
        crown(u, int(monarch_of[v]))
        child_monarchs[v].append(u)
    marked = monarch_of >= 0
    for v in np.flatnonzero(~marked):
        anchor = next(w for w in G.adj[v] if marked[w] and w not in monarchs)
        dependents[anchor].append(int(v))
        monarch_of[v] = monarch_of[anchor]
    return MonarchTree(monarchs, parent, children, monarch_of, child_monarchs, dependents)


def check_monarch_tree(G: ThresholdGraph, tree: MonarchTree) -> None:
    hops = G.hop_matrix()
    if np.any(tree.monarch_of < 0):
        raise InvariantError("empires do not cover the component")
    mons = set(tree.monarchs)
    for u in tree.monarchs:
        emp = set(tree.empire(u))
        closed = {u, *G.adj[u]}
        deps = {d for j in closed for d in tree.dependents[j]}
        if emp != closed | deps:
            raise InvariantError(f"empire of {u} is not N+(u) plus dependents")
        if max(hops[u, list(emp)]) > 2:
            raise InvariantError(f"empire of {u} reaches beyond 2 hops")
        par = tree.parent[u]
        if par is not None and hops[u, par] != 3:
            raise InvariantError(f"tree edge {par}-{u} is not 3 hops")
    for j in range(G.n):
        if tree.child_monarchs[j] or tree.dependents[j]:
            if not any(hops[j, m] == 1 for m in mons):
                raise InvariantError(f"vertex {j} with children is not next to a monarch")


class _Rounder:
    """Holds (x, y) of one component and applies logged Move operations."""

    def __init__(self, G: ThresholdGraph, frac: FractionalSolution):
        self.G = G
        self.hops = G.hop_matrix()
        self.x = frac.x.copy()
        self.y = frac.y.copy()
        self.log = ShiftLog()
        self.fallback_used = 0

    def move(self, a: int, b: int, delta: float) -> None:
        if delta <= 0:
            return
        ya = self.y[a]
        delta = min(delta, ya)
        if b == a:
            return
        share = min(delta / ya, 1.0)
        moved = self.x[a] * share
        self.x[b] += moved
        if share >= 1.0:
            self.x[a] = 0.0
            self.y[b] += ya
            self.y[a] = 0.0
        else:
            self.x[a] -= moved
            self.y[a] -= delta
            self.y[b] += delta
        self.log.add(a, b, delta, self.hops[a, b])

    def local_round(self, V1, V2, V3, in_residual: bool = False) -> None:
        V1 = list(V1)
        in1 = set(V1)
        guard = 0
        while True:
            needy = [i for i in V1 if self.y[i] < 1 - ZERO]
            if not needy:
                break
            i = needy[0]
            guard += 1
            if guard > 10 * (self.G.n + 1) ** 2:
                raise InvariantError("local rounding did not terminate")
            donors = [w for w in sorted(V2) if w not in in1 and self.y[w] > ZERO]
            if not donors:
                donors = [w for w in sorted(V3) if w not in in1 and self.y[w] > ZERO]
                if donors and not in_residual:
                    self.fallback_used += 1
            if not donors:
                # Nothing left to pull: the leftover stays fractional at i.
                break
            w = donors[0]
            self.move(w, i, min(1 - self.y[i], self.y[w]))
        for i in V1:
            if self.y[i] > 1 - ZERO:
                self.y[i] = 1.0


def initial_aggregation(G: ThresholdGraph, frac: FractionalSolution,
                        tree: MonarchTree | None = None) -> tuple[FractionalSolution, ShiftLog]:
    """Fill every monarch to opening 1 from its own neighbours (1-hop moves)."""
    tree = build_monarch_tree(G) if tree is None else tree
    r = _aggregate_monarchs(_Rounder(G, frac), tree)
    return FractionalSolution(r.x, r.y, frac.objective, frac.C, frac.p), r.log


def _aggregate_monarchs(r: "_Rounder", tree: MonarchTree) -> "_Rounder":
    G = r.G
    for u in tree.monarchs:
        for j in sorted(G.adj[u]):
            if r.y[u] >= 1 - ZERO:
                break
            if r.y[j] > 0:
                r.move(j, u, min(1 - r.y[u], r.y[j]))
        if r.y[u] < 1 - 1e-7:
            raise InvariantError(f"monarch {u} could not reach opening 1")
        r.y[u] = 1.0
    return r


def _pick(X: list[int], count: int, y: np.ndarray, avoid: int | None) -> list[int]:
    ranked = sorted(X, key=lambda v: (v == avoid, y[v] <= ZERO, v))
    return ranked[:count]


def round_y(tree: MonarchTree, G: ThresholdGraph,
            frac: FractionalSolution) -> tuple[FractionalSolution, ShiftLog]:
    """Bottom-up rounding of an initially aggregated solution; y ends up 0/1."""
    r = _round_tree(tree, _Rounder(G, frac))
    return FractionalSolution(r.x, r.y, frac.objective, frac.C, frac.p), r.log


def _round_tree(tree: MonarchTree, r: "_Rounder") -> "_Rounder":
    G = r.G
    order: list[int] = []
    stack = [(tree.monarchs[0], False)]
    while stack:
        u, done = stack.pop()
        if done:
            order.append(u)
            continue
        stack.append((u, True))
        for c in reversed(tree.children[u]):
            stack.append((c, False))
    for u in order:
        start = len(r.log.moves)
        nbrs = sorted(G.adj[u])
        for j in nbrs:
            X = [j] + tree.child_monarchs[j] + tree.dependents[j]
            count = math.floor(r.y[X].sum() + 1e-9)
            W = _pick(X, count, r.y, j)
            r.local_round(W, X, [])
            r.local_round([j], [v for v in X if v not in W], [])
        F = [j for j in nbrs if ZERO < r.y[j] < 1 - ZERO]
        WF = F[:math.floor(r.y[F].sum() + 1e-9)] if F else []
        WF = _pick(F, len(WF), r.y, None)
        r.local_round(WF, F, [])
        rest = [j for j in F if j not in WF]
        if rest and r.y[rest].sum() > ZERO:
            wstar = min(rest, key=lambda v: (r.y[v] <= ZERO, v))
            r.local_round([wstar], rest, [u], in_residual=True)
        for a, b, _, _ in r.log.moves[start:]:
            if b == u:
                raise InvariantError(f"monarch {u} received opening while rounding its own empire")
        for v in range(G.n):
            if r.y[v] <= ZERO:
                r.y[v] = 0.0
    root = tree.monarchs[0]
    if abs(r.y[root] - round(r.y[root])) < 1e-6:
        r.y[root] = float(round(r.y[root]))
    frac_left = [v for v in range(G.n) if ZERO < r.y[v] < 1 - ZERO]
    if frac_left:
        raise InvariantError(f"openings still fractional at {frac_left}")
    return r


def round_x_kcenter(G: ThresholdGraph, x: np.ndarray, y: np.ndarray, p: int, A: int, B: int,
                    hop_limit: int = 6, hops: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Integral 0/1 assignment with loads in [A, B] using the support of x.

    Returns (assignment matrix over open centers (rows) x points, fallback flag).
    The fallback widens the edge set to every open center within
    ``hop_limit`` hops if the support alone carries no feasible flow.
    """
    n = G.n
    opened = [int(i) for i in np.flatnonzero(y > 0.5)]
    kk = len(opened)
    hops = G.hop_matrix() if hops is None else hops

    def attempt(edge_ok):
        net = FlowNetwork(n + kk + 2)
        s, t = n + kk, n + kk + 1
        net.supply[s] = n * p
        for c in range(kk):
            net.supply[n + c] = -A
        net.supply[t] = -(n * p - kk * A)
        for j in range(n):
            net.add_edge(s, j, p, -1.0)
        edges = []
        for c, i in enumerate(opened):
            for j in range(n):
                if edge_ok(i, j):
                    edges.append((c, j, net.add_edge(j, n + c, 1, 0.0)))
        for c in range(kk):
            net.add_edge(n + c, t, B - A, 0.0)
        res = solve_mcf(net)
        check_flow(net, res)
        m = np.zeros((kk, n), dtype=np.int64)
        for c, j, e in edges:
            m[c, j] = res.flow[e]
        return m

    if n * p - kk * A < 0 or B < A:
        raise InvariantError("x-rounding network has inconsistent demands")
    try:
        return attempt(lambda i, j: x[i, j] > 1e-12 and hops[i, j] <= hop_limit), False
    except InfeasibleError:
        pass
    try:
        return attempt(lambda i, j: hops[i, j] <= hop_limit), True
    except InfeasibleError as exc:
        raise InvariantError(f"k-center x-rounding infeasible: {exc}") from exc


def _quick_possible(n_c: int, kp: int, p: int, A: int, B: int) -> bool:
    return p <= kp <= n_c and kp * A <= n_c * p <= kp * B


def feasible_k_range(instance: Instance, component: list[int], t: float, constraints: Constraints,
                     A: int | None = None, B: int | None = None, cache: dict | None = None):
    """Probe k' = 1..min(k, |component|); returns ((m, M) or None, {k': solution}).

    Loads are absolute counts computed from the global n.
    """
    n = instance.n
    A = constraints.lower_count(n) if A is None else A
    B = constraints.upper_count(n) if B is None else B
    sub = instance.subset(component)
    sols: dict[int, FractionalSolution] = {}
    for kp in range(1, min(constraints.k, len(component)) + 1):
        if not _quick_possible(len(component), kp, constraints.p, A, B):
            continue
        try:
            sols[kp] = kcenter_lp_feasible(sub, t, constraints, k=kp, load_bounds=(A, B))
        except InfeasibleError:
            continue
    if not sols:
        return None, sols
    ks = sorted(sols)
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise InvariantError(f"feasible k values {ks} are not contiguous")
    return (ks[0], ks[-1]), sols


def allocate(ranges: list[tuple[int, int]], k: int) -> list[int] | None:
    """Start every component at its minimum and raise them in order until the total is k."""
    alloc = [m for m, _ in ranges]
    if sum(alloc) > k or sum(M for _, M in ranges) < k:
        return None
    need = k - sum(alloc)
    for c, (m, M) in enumerate(ranges):
        add = min(need, M - m)
        alloc[c] += add
        need -= add
    return alloc


def _round_component(G: ThresholdGraph, frac: FractionalSolution, p: int, A: int, B: int):
    tree = build_monarch_tree(G)
    check_monarch_tree(G, tree)
    r = _Rounder(G, frac)
    _aggregate_monarchs(r, tree)
    init_moves = len(r.log.moves)
    _round_tree(tree, r)
    hops = r.hops
    support = (r.x > 1e-12) & (r.y[:, None] > 0.5)
    worst = int(hops[support].max()) if support.any() else 0
    mult, fallback = round_x_kcenter(G, r.x, r.y, p, A, B, hops=hops)
    opened = [int(i) for i in np.flatnonzero(r.y > 0.5)]
    return opened, mult, {
        "monarchs": len(tree.monarchs),
        "initial_moves": init_moves,
        "moves": len(r.log.moves),
        "max_move_hop": r.log.max_hop,
        "max_fractional_hop": worst,
        "x_fallback": fallback,
        "v3_fallback": r.fallback_used,
    }


def kcenter_cluster(instance: Instance, constraints: Constraints, thresholds=None,
                    search: str = "bisect"):
    """Return (assignment, t*, diagnostics); raises NoSolutionError.

    ``search="linear"`` scans thresholds in ascending order; the default
    bisects over the same sorted list and returns the same threshold.
    """
    n, p, k = instance.n, constraints.p, constraints.k
    A, B = constraints.lower_count(n), constraints.upper_count(n)
    dist = instance.distances
    ts = np.unique(np.concatenate([[0.0], dist.ravel()])) if thresholds is None else thresholds
    def attempt(t):
        """Allocation data at threshold t, or None when t is infeasible."""
        G = ThresholdGraph.build(dist, t)
        comps = G.components()
        if len(comps) * p > k:
            return None
        if any(not any(_quick_possible(len(c), kp, p, A, B) for kp in range(1, min(k, len(c)) + 1))
               for c in comps):
            return None
        ranges, sols = [], []
        for comp in comps:
            rng_c, s = feasible_k_range(instance, comp, t, constraints, A, B)
            if rng_c is None:
                return None
            ranges.append(rng_c)
            sols.append(s)
        alloc = allocate(ranges, k)
        return None if alloc is None else (G, comps, alloc, sols)

    ts = [float(t) for t in ts]
    if search == "linear":
        for t in ts:
            found = attempt(t)
            if found is not None:
                return _finish(instance, constraints, t, *found, A, B)
        raise NoSolutionError("no threshold admits a feasible split of k across components")
    # Feasibility is up-closed in t, so bisection finds the same first threshold.
    lo, hi, best = 0, len(ts) - 1, None
    while lo <= hi:
        mid = (lo + hi) // 2
        found = attempt(ts[mid])
        if found is None:
            lo = mid + 1
        else:
            best = (ts[mid], found)
            hi = mid - 1
    if best is None:
        raise NoSolutionError("no threshold admits a feasible split of k across components")
    return _finish(instance, constraints, best[0], *best[1], A, B)


def _finish(instance, constraints, t, G, comps, alloc, sols, A, B):
    n, p = instance.n, constraints.p
    centers: list[int] = []
    assign: list[dict[int, int]] = [dict() for _ in range(n)]
    comp_diag = []
    for comp, kc, s in zip(comps, alloc, sols):
        sub = G.subgraph(comp)
        opened, mult, diag = _round_component(sub, s[kc], p, A, B)
        diag.update(size=len(comp), k=kc)
        comp_diag.append(diag)
        if len(opened) != kc:
            raise InvariantError(f"component opened {len(opened)} centers, expected {kc}")
        hops = sub.hop_matrix()
        for c, i_loc in enumerate(opened):
            cid = len(centers)
            centers.append(comp[i_loc])
            for j_loc in np.flatnonzero(mult[c]):
                if hops[i_loc, j_loc] > 6:
                    raise InvariantError("assigned pair more than 6 hops apart")
                assign[comp[j_loc]][cid] = int(mult[c, j_loc])
    result = Assignment(tuple(centers), tuple(assign))
    counts = result.multiplicity_matrix().sum(axis=1)
    if np.any(counts < A) or np.any(counts > B):
        raise InvariantError("capacity violated by the k-center rounding")
    if any(len(row) != p or any(m != 1 for m in row.values()) for row in result.assign):
        raise InvariantError("a point lacks p distinct centers")
    dist = instance.distances
    radius = max((dist[result.centers[c], j] for j, row in enumerate(result.assign) for c in row),
                 default=0.0)
    if radius > 6 * t + 1e-9:
        raise InvariantError("radius beyond 6t")
    report = check_capacities(result, constraints)
    diagnostics = {
        "threshold": t,
        "radius": float(radius),
        "components": comp_diag,
        "allocation": list(alloc),
        "violations": report.as_dict(),
    }
    return result, t, diagnostics
