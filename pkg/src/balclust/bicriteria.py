"""Bicriteria LP rounding for balanced, p-replicated clustering.

Pipeline: LP relaxation -> monarchs and empires -> per-empire aggregation of
the openings -> integral assignment by min-cost flow.  Each point may use the
same center twice and center loads may exceed the upper bound by a factor
below (p+2)/p (for even p).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (Assignment, Constraints, CostMatrix, Instance, Objective, ViolationReport,
                   check_capacities, cost_matrix, evaluate)
from .errors import BalclustError, InfeasibleError, InvariantError
from .lp_relax import FractionalSolution, build_lp, kcenter_lp_feasible, solve_lp
from .mincostflow import FlowNetwork, check_flow, solve_mcf

ZERO = 1e-9
LEMMA_SLACK = 1e-6
RHO = {Objective.KCENTER: 1, Objective.KMEDIAN: 2, Objective.KMEANS: 4}
RATIO = {Objective.KCENTER: 5.0, Objective.KMEDIAN: 11.0, Objective.KMEANS: 95.0}


@dataclass(eq=False)
class Empires:
    monarchs: list[int]
    empire_of: np.ndarray  # monarch point index for every point
    rho: int

    def members(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.empire_of == u)


@dataclass(eq=False)
class AggregatedSolution:
    x: np.ndarray
    y: np.ndarray
    # (j, original center, final center) for every demand that changed center
    moved_from: list[tuple[int, int, int]] = field(default_factory=list)
    targets: dict[int, tuple[float, int]] = field(default_factory=dict)  # monarch -> (z_u, floor Y_u)
    dust_moves: int = 0

    @property
    def open_centers(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.y > ZERO)]


def _monarch_metric(cost: CostMatrix, dist: np.ndarray | None) -> np.ndarray:
    if dist is not None:
        return dist
    c = cost.c
    if not np.all(np.isfinite(c)):
        raise BalclustError("k-center monarchs need the distance matrix")
    return c


def run_monarchs(frac: FractionalSolution, cost: CostMatrix, rho: int,
                 dist: np.ndarray | None = None) -> Empires:
    """Greedy monarch selection in order of connection cost, then Voronoi empires.

    A point becomes a monarch when no existing monarch is within cost
    2*rho*C_i of it.  For k-center the costs are all t, so admission uses the
    distance test d <= 2t instead.
    """
    n = frac.n
    C = frac.C
    order = sorted(range(n), key=lambda i: (C[i], i))
    monarchs: list[int] = []
    kcenter = cost.objective is Objective.KCENTER
    for i in order:
        if kcenter:
            far = all(dist[m, i] > 2.0 * cost.threshold + 1e-12 for m in monarchs)
        else:
            far = all(cost.c[m, i] > 2.0 * rho * C[i] for m in monarchs)
        if far:
            monarchs.append(i)
    metric = _monarch_metric(cost, dist)
    mon = np.array(monarchs)
    # argmin picks the first minimum; order columns by monarch index for the tie rule.
    by_index = mon[np.argsort(mon)]
    empire_of = by_index[np.argmin(metric[by_index], axis=0)]
    return Empires(monarchs, empire_of, rho)


def check_lemma1(frac: FractionalSolution, cost: CostMatrix, emp: Empires,
                 dist: np.ndarray | None = None) -> None:
    """Assert the four empire properties; raises InvariantError."""
    n = frac.n
    mons = set(emp.monarchs)
    if emp.empire_of.shape != (n,) or not set(emp.empire_of.tolist()) <= mons:
        raise InvariantError("empires do not partition the points")
    for u in emp.monarchs:
        if emp.empire_of[u] != u:
            raise InvariantError(f"monarch {u} outside its own empire")
    kcenter = cost.objective is Objective.KCENTER
    t = cost.threshold
    for j in range(n):
        u = emp.empire_of[j]
        if kcenter:
            ok = dist[u, j] <= 2 * t + LEMMA_SLACK
        else:
            ok = cost.c[u, j] <= 2 * emp.rho * frac.C[j] + LEMMA_SLACK
        if not ok:
            raise InvariantError(f"point {j} too far from its monarch {u}")
    for a in emp.monarchs:
        for b in emp.monarchs:
            if a >= b:
                continue
            if kcenter:
                ok = dist[a, b] > 2 * t
            else:
                ok = cost.c[a, b] > 2 * emp.rho * max(frac.C[a], frac.C[b]) - LEMMA_SLACK
            if not ok:
                raise InvariantError(f"monarchs {a} and {b} are too close")
    need = frac.p if kcenter else frac.p / 2
    for u in emp.monarchs:
        if frac.y[emp.members(u)].sum() < need - LEMMA_SLACK:
            raise InvariantError(f"empire of {u} has opening below {need}")


def move_opening(x: np.ndarray, y: np.ndarray, a: int, b: int, delta: float,
                 inplace: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Move ``delta`` opening from a to b, dragging a's demand along proportionally."""
    if delta < 0 or delta > y[a] + 1e-12:
        raise BalclustError(f"delta {delta} outside [0, y_a={y[a]}]")
    if not inplace:
        x, y = x.copy(), y.copy()
    if delta == 0:
        return x, y
    if y[a] <= 0:
        raise BalclustError("cannot move opening out of a closed point")
    frac_moved = min(delta / y[a], 1.0)
    shift = x[a] * frac_moved
    x[b] += shift
    if frac_moved >= 1.0:
        x[a] = 0.0
        y[b] += y[a]
        y[a] = 0.0
    else:
        x[a] -= shift
        y[a] -= delta
        y[b] += delta
    return x, y


def aggregate(frac: FractionalSolution, empires: Empires, constraints: Constraints,
              dist: np.ndarray) -> AggregatedSolution:
    """Concentrate each empire's opening Y_u on its floor(Y_u) points closest to the monarch."""
    if constraints.p < 2:
        raise BalclustError("aggregation needs p >= 2; use the kmeanspp path for p = 1")
    n = frac.n
    x = frac.x.copy()
    y = frac.y.copy()
    origins = np.zeros((n, n, n), dtype=bool)  # origins[i, i', j]
    ii, jj = np.nonzero(x > 0)
    origins[ii, ii, jj] = True
    out = AggregatedSolution(x, y)
    cap = 4 * n * n
    steps = 0

    def do_move(v, w, delta):
        moving = x[v] > 0
        origins[w][:, moving] |= origins[v][:, moving]
        move_opening(x, y, v, w, delta, inplace=True)
        if y[v] == 0.0:
            origins[v] = False

    for u in sorted(empires.monarchs):
        members = empires.members(u)
        order = members[np.lexsort((members, dist[u, members]))]  # closest first
        Y = float(y[members].sum())
        fl = math.floor(Y + 1e-9)
        if fl < 1:
            raise InvariantError(f"empire of {u} has total opening {Y} < 1")
        z = Y / fl
        out.targets[int(u)] = (z, fl)
        while True:
            nonzero = [v for v in order if y[v] > 0]
            if all(abs(y[v] - z) <= ZERO for v in nonzero):
                break
            steps += 1
            if steps > cap:
                raise InvariantError("aggregation did not terminate")
            v = nonzero[-1]
            receiver = next((w for w in order if abs(y[w] - z) > ZERO), None)
            pos = {int(w): r for r, w in enumerate(order)}
            if receiver is None or pos[int(receiver)] >= pos[int(v)]:
                # Float dust: hand it to the closest other open point.
                if y[v] > ZERO:
                    raise InvariantError("aggregation stalled with real mass left")
                w = next(w for w in order if w != v and y[w] > 0)
                do_move(v, w, y[v])
                out.dust_moves += 1
                continue
            do_move(v, receiver, max(0.0, min(y[v], z - y[receiver])))
        # Snap the survivors onto z exactly; the change is below ZERO.
        for v in order:
            if y[v] > 0:
                y[v] = z
    for i in range(n):
        for j in range(n):
            if x[i, j] > 0:
                for orig in np.flatnonzero(origins[i, :, j]):
                    if orig != i:
                        out.moved_from.append((j, int(orig), i))
    return out


def check_lemma2(frac: FractionalSolution, agg: AggregatedSolution, constraints: Constraints,
                 lo: float, hi: float, weights: np.ndarray) -> bool:
    """Assert the aggregated-solution properties.

    Returns whether every opening also lies below (p+2)/p, which the
    per-empire bound implies only for even p.
    """
    p, k = constraints.p, constraints.k
    y, x = agg.y, agg.x
    tol = LEMMA_SLACK
    open_ = y > ZERO
    if np.any(open_ & (y < 1 - tol)):
        raise InvariantError("an open point has opening below 1")
    for z, fl in agg.targets.values():
        if z >= (fl + 1) / fl:
            raise InvariantError("aggregated opening beyond its empire bound")
    within_p_bound = bool(np.all(y[open_] < (p + 2) / p + tol))
    load = weights @ x.T
    if np.any(load < lo * y - tol) or np.any(load > hi * y + tol):
        raise InvariantError("capacity rows broken after aggregation")
    if abs(y.sum() - frac.y.sum()) > tol or y.sum() > k + tol:
        raise InvariantError("total opening changed during aggregation")
    if np.any(x > y[:, None] + tol):
        raise InvariantError("x exceeds y after aggregation")
    if np.any(np.abs(x.sum(axis=0) - p) > tol):
        raise InvariantError("demand rows broken after aggregation")
    if int(open_.sum()) > k:
        raise InvariantError("more than k open points after aggregation")
    return within_p_bound


def lemma3_bound(objective: Objective, d_orig: float, C_j: float, t: float | None) -> float:
    if objective is Objective.KCENTER:
        return 5.0 * t
    if objective is Objective.KMEDIAN:
        return 3.0 * d_orig + 8.0 * C_j
    return 15.0 * d_orig ** 2 + 80.0 * C_j


def check_lemma3(frac: FractionalSolution, agg: AggregatedSolution, objective,
                 dist: np.ndarray, t: float | None = None) -> int:
    """Check every reassigned demand against the cost bound; returns the pair count."""
    objective = Objective.parse(objective)
    for j, orig, new in agg.moved_from:
        d_new = dist[new, j] if objective is not Objective.KMEANS else dist[new, j] ** 2
        bound = lemma3_bound(objective, dist[orig, j], frac.C[j], t)
        if d_new > bound + LEMMA_SLACK * max(1.0, bound):
            raise InvariantError(f"reassignment of {j} from {orig} to {new} costs {d_new} > {bound}")
    return len(agg.moved_from)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _upper_units(y_open: np.ndarray, p: int, B: float, integral_B: bool) -> int:
    """Per-center load cap used on the sink edges.

    ceil((p+2)/p * B) covers every opening when p is even; the per-opening
    term only matters for odd p, where an empire may carry more.
    """
    if integral_B:
        base = _ceil_div((p + 2) * int(B), p)
    else:
        base = math.ceil((p + 2) * B / p - 1e-9)
    per_open = max((math.ceil(yi * B - 1e-9) for yi in y_open), default=0)
    return int(max(base, per_open))


def round_x_mcf(agg: AggregatedSolution, cost: CostMatrix, constraints: Constraints,
                dist: np.ndarray | None = None, weights: np.ndarray | None = None,
                resolution: int | None = None) -> tuple[Assignment, float, int]:
    """Integral assignment to the open centers via min-cost flow.

    Returns (assignment, flow cost, upper load cap in flow units).  Edges
    carry capacity 2, so a point may use a center twice.  With weights, a
    point of weight m/N' ships p*m units and its integral split is turned
    into multiplicities by largest remainder.
    """
    n = agg.y.size
    p = constraints.p
    opened = agg.open_centers
    if not opened:
        raise InvariantError("no open centers after aggregation")
    kcenter = cost.objective is Objective.KCENTER
    if kcenter:
        if dist is None:
            raise BalclustError("k-center rounding needs distances")
        t = cost.threshold
        admissible = dist[opened] <= 5.0 * t + 1e-12
        edge_cost = np.where(admissible, 5.0 * t, np.inf)
    else:
        edge_cost = cost.c[opened]
    if weights is None:
        units = np.ones(n, dtype=np.int64)
        A = constraints.lower_count(n)
        B = constraints.upper_count(n)
        U = _upper_units(agg.y[opened], p, B, True)
    else:
        if resolution is None:
            raise BalclustError("weighted rounding needs the weight resolution N'")
        units = np.rint(np.asarray(weights) * resolution).astype(np.int64)
        if units.sum() != resolution or np.any(np.abs(units - np.asarray(weights) * resolution) > 1e-6):
            raise BalclustError("weights are not multiples of 1/resolution")
        A = int(math.floor(constraints.ell * resolution + 1e-9))
        B = constraints.cap_L * resolution
        U = _upper_units(agg.y[opened], p, B, False)
    kh = len(opened)
    total = int(p * units.sum())
    if total - kh * A < 0 or U < A:
        raise InvariantError("rounding network has inconsistent demands")
    net = FlowNetwork(n + kh + 1)
    sink = n + kh
    for j in range(n):
        net.supply[j] = int(p * units[j])
    for c in range(kh):
        net.supply[n + c] = -A
    net.supply[sink] = -(total - kh * A)
    edges = []
    for c in range(kh):
        for j in range(n):
            if units[j] > 0 and np.isfinite(edge_cost[c, j]):
                edges.append((c, j, net.add_edge(j, n + c, int(2 * units[j]), float(edge_cost[c, j]))))
    for c in range(kh):
        net.add_edge(n + c, sink, U - A, 0.0)
    try:
        res = solve_mcf(net)
    except InfeasibleError as exc:
        raise InvariantError(f"x-rounding flow infeasible: {exc}") from exc
    check_flow(net, res)
    flow = np.zeros((kh, n), dtype=np.int64)
    for c, j, e in edges:
        flow[c, j] = res.flow[e]
    mult = np.zeros((kh, n), dtype=np.int64)
    for j in range(n):
        if units[j] == 1:
            mult[:, j] = flow[:, j]
        elif units[j] > 1:
            mult[:, j] = _largest_remainder(flow[:, j] / units[j], p)
        else:
            finite = np.flatnonzero(np.isfinite(edge_cost[:, j]))
            order = finite[np.lexsort((finite, edge_cost[finite, j]))]
            if order.size == 0:
                raise InvariantError(f"point {j} has no admissible center")
            for r in range(p):
                mult[order[r % order.size], j] += 1
    return Assignment.from_matrix(opened, mult), float(res.cost), U


def _largest_remainder(share: np.ndarray, p: int) -> np.ndarray:
    base = np.floor(share + 1e-9).astype(np.int64)
    rest = p - int(base.sum())
    if rest > 0:
        frac = share - base
        order = np.lexsort((np.arange(share.size), -frac))
        base[order[:rest]] += 1
    return base


def _kcenter_threshold(instance: Instance, constraints: Constraints, weights):
    """Smallest pairwise distance at which the k-center LP (sum y <= k) is feasible."""
    ts = np.unique(instance.distances)
    lo, hi = 0, ts.size - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        try:
            sol = kcenter_lp_feasible(instance, float(ts[mid]), constraints, weights,
                                      cardinality="<=")
        except InfeasibleError:
            lo = mid + 1
            continue
        best = (float(ts[mid]), sol)
        hi = mid - 1
    if best is None:
        raise InfeasibleError("k-center LP infeasible at every threshold")
    return best


def bicriteria_cluster(instance: Instance, constraints: Constraints, objective,
                       weights=None, resolution: int | None = None, check: bool = True):
    """Run the full LP-rounding pipeline.

    Returns (assignment, violation report, diagnostics).  Every structural
    guarantee is asserted along the way when ``check`` is set; a failure
    raises InvariantError.
    """
    objective = Objective.parse(objective)
    if constraints.p < 2:
        raise BalclustError("LP rounding needs p >= 2; use the kmeanspp path for p = 1")
    if not constraints.necessary_ok():
        raise InfeasibleError("k*ell <= p <= k*cap_L does not hold")
    w = None if weights is None else np.asarray(weights, dtype=float)
    dist = instance.distances
    n, p = instance.n, constraints.p
    t = None
    if objective is Objective.KCENTER:
        t, frac = _kcenter_threshold(instance, constraints, w)
        cost = cost_matrix(instance, objective, t)
        c_lp = t * n * p
    else:
        problem = build_lp(instance, constraints, objective, w)
        frac = solve_lp(problem)
        cost = problem.cost
        c_lp = frac.objective
    lp = build_lp(instance, constraints, objective, w, threshold=t)
    empires = run_monarchs(frac, cost, RHO[objective], dist)
    if check:
        check_lemma1(frac, cost, empires, dist)
    agg = aggregate(frac, empires, constraints, dist)
    within = None
    n_pairs = len(agg.moved_from)
    if check:
        within = check_lemma2(frac, agg, constraints, lp.lo, lp.hi, lp.weights)
        n_pairs = check_lemma3(frac, agg, objective, dist, t)
    assignment, flow_cost, U = round_x_mcf(agg, cost, constraints, dist, w, resolution)
    value = evaluate(instance, assignment, objective)
    report = check_capacities(assignment, constraints, w)
    mult = assignment.multiplicity_matrix()
    if check:
        if np.any(mult > 2) or np.any(assignment.totals() != p):
            raise InvariantError("multiplicity or replication broken after rounding")
        if w is None and np.any(mult.sum(axis=1) > U):
            raise InvariantError("center load above the rounding cap")
        if objective is Objective.KCENTER:
            ratio = value / t if t > 0 else 0.0
        else:
            ratio = value / c_lp if c_lp > 0 else (0.0 if value <= 1e-9 else math.inf)
        if w is None and ratio > RATIO[objective] + 1e-9:
            raise InvariantError(f"cost ratio {ratio} exceeds {RATIO[objective]}")
    if objective is Objective.KCENTER:
        ratio = value / t if t and t > 0 else 0.0
    else:
        ratio = value / c_lp if c_lp > 0 else (0.0 if value <= 1e-9 else math.inf)
    agg_cost = None
    if objective is not Objective.KCENTER:
        agg_cost = float((cost.c * agg.x).sum())
    diagnostics = {
        "objective": objective.value,
        "lp_objective": float(frac.objective),
        "C_LP": float(c_lp),
        "threshold": t,
        "monarchs": [int(u) for u in empires.monarchs],
        "k_hat": len(agg.open_centers),
        "aggregated_cost": agg_cost,
        "flow_cost": flow_cost,
        "value": float(value),
        "ratio": float(ratio),
        "ratio_bound": RATIO[objective],
        "upper_load_cap": int(U),
        "openings_below_(p+2)/p": within,
        "reassigned_pairs": n_pairs,
        "dust_moves": agg.dust_moves,
    }
    return assignment, report, diagnostics
