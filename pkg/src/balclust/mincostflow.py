"""Integral minimum-cost flow by successive shortest augmenting paths.

Negative-cost edges are pre-saturated (their residual twins then carry
positive cost), which also neutralises negative cycles.  Node potentials
start from a Bellman-Ford pass over the residual graph and are kept valid by
Dijkstra with reduced costs.  Ties in Dijkstra pop the smaller node index
first, which makes the result a deterministic function of the input.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .errors import BalclustError, InfeasibleError

_EPS = 1e-12


@dataclass
class FlowNetwork:
    n_nodes: int
    supply: list[int] = field(default_factory=list)
    tails: list[int] = field(default_factory=list)
    heads: list[int] = field(default_factory=list)
    caps: list[int] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.supply:
            self.supply = [0] * self.n_nodes

    def add_node(self, supply: int = 0) -> int:
        self.supply.append(int(supply))
        self.n_nodes += 1
        return self.n_nodes - 1

    def add_edge(self, u: int, v: int, cap: int, cost: float = 0.0) -> int:
        if cap < 0 or int(cap) != cap:
            raise BalclustError(f"capacity must be a nonnegative integer, got {cap}")
        if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
            raise BalclustError("edge endpoint out of range")
        self.tails.append(u)
        self.heads.append(v)
        self.caps.append(int(cap))
        self.costs.append(float(cost))
        return len(self.tails) - 1

    @property
    def n_edges(self) -> int:
        return len(self.tails)


@dataclass
class FlowResult:
    flow: list[int]
    cost: float


class _Residual:
    """Adjacency-list residual graph; arc e and e ^ 1 are twins."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []

    def add(self, u: int, v: int, cap: int, cost: float) -> int:
        e = len(self.to)
        self.to += [v, u]
        self.cap += [cap, 0]
        self.cost += [cost, -cost]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def push(self, e: int, amount: int) -> None:
        self.cap[e] -= amount
        self.cap[e ^ 1] += amount


def _bellman_ford(g: _Residual, src: int) -> list[float]:
    dist = [math.inf] * g.n
    dist[src] = 0.0
    for _ in range(g.n):
        changed = False
        for u in range(g.n):
            du = dist[u]
            if du == math.inf:
                continue
            for e in g.adj[u]:
                if g.cap[e] > 0:
                    nd = du + g.cost[e]
                    v = g.to[e]
                    if nd < dist[v] - _EPS:
                        dist[v] = nd
                        changed = True
        if not changed:
            break
    return dist


def solve_mcf(network: FlowNetwork) -> FlowResult:
    """Return an integral, cost-minimal flow meeting every supply and demand.

    Raises InfeasibleError when no such flow exists.
    """
    if sum(network.supply) != 0:
        raise BalclustError("supplies must sum to zero")
    n = network.n_nodes
    excess = [int(s) for s in network.supply]
    g = _Residual(n + 2)
    src, snk = n, n + 1
    arc_of_edge = []
    for u, v, cap, cost in zip(network.tails, network.heads, network.caps, network.costs):
        e = g.add(u, v, cap, cost)
        arc_of_edge.append(e)
        if cost < 0 and cap > 0:
            g.push(e, cap)
            excess[u] -= cap
            excess[v] += cap
    need = 0
    for v in range(n):
        if excess[v] > 0:
            g.add(src, v, excess[v], 0.0)
            need += excess[v]
        elif excess[v] < 0:
            g.add(v, snk, -excess[v], 0.0)

    pot = _bellman_ford(g, src)
    pot = [0.0 if p == math.inf else p for p in pot]
    sent = 0
    while sent < need:
        dist = [math.inf] * g.n
        prev = [-1] * g.n
        dist[src] = 0.0
        heap = [(0.0, src)]
        done = [False] * g.n
        while heap:
            du, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            pu = pot[u]
            for e in g.adj[u]:
                if g.cap[e] <= 0:
                    continue
                v = g.to[e]
                if done[v]:
                    continue
                rc = g.cost[e] + pu - pot[v]
                if rc < 0.0:
                    rc = 0.0
                nd = du + rc
                if nd < dist[v]:
                    dist[v] = nd
                    prev[v] = e
                    heapq.heappush(heap, (nd, v))
        if dist[snk] == math.inf:
            raise InfeasibleError("supplies and demands cannot be met")
        for v in range(g.n):
            if dist[v] < math.inf:
                pot[v] += dist[v]
        push = need - sent
        v = snk
        while v != src:
            e = prev[v]
            push = min(push, g.cap[e])
            v = g.to[e ^ 1]
        v = snk
        while v != src:
            e = prev[v]
            g.push(e, push)
            v = g.to[e ^ 1]
        sent += push

    flow = []
    total = 0.0
    for idx, e in enumerate(arc_of_edge):
        f = network.caps[idx] - g.cap[e]
        flow.append(f)
        total += f * network.costs[idx]
    return FlowResult(flow, total)


def residual_negative_cycle(network: FlowNetwork, result: FlowResult, tol: float = 1e-9) -> bool:
    """True when the residual graph of ``result`` has a negative-cost cycle."""
    n = network.n_nodes
    arcs = []
    for u, v, cap, cost, f in zip(network.tails, network.heads, network.caps,
                                  network.costs, result.flow):
        if f < cap:
            arcs.append((u, v, cost))
        if f > 0:
            arcs.append((v, u, -cost))
    dist = [0.0] * n
    for _ in range(n):
        changed = False
        for u, v, c in arcs:
            if dist[u] + c < dist[v] - tol:
                dist[v] = dist[u] + c
                changed = True
        if not changed:
            return False
    return True


def check_flow(network: FlowNetwork, result: FlowResult) -> None:
    """Raise if ``result`` breaks capacities, integrality or conservation."""
    net = [0] * network.n_nodes
    for u, v, cap, f in zip(network.tails, network.heads, network.caps, result.flow):
        if not isinstance(f, int) or f < 0 or f > cap:
            raise BalclustError(f"bad flow {f} on edge {u}->{v} (cap {cap})")
        net[u] += f
        net[v] -= f
    if net != list(network.supply):
        raise BalclustError("flow conservation violated")
