"""Instance model, cost matrices, objective evaluation and capacity checks."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BalclustError

FEAS_TOL = 1e-7
_COUNT_EPS = 1e-9


class Objective(str, enum.Enum):
    KMEDIAN = "kmedian"
    KMEANS = "kmeans"
    KCENTER = "kcenter"

    @classmethod
    def parse(cls, value: "str | Objective") -> "Objective":
        if isinstance(value, Objective):
            return value
        try:
            return cls(value.lower().replace("-", ""))
        except ValueError:
            raise BalclustError(f"unknown objective {value!r}") from None


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Squared Euclidean distances from differences (no sqrt, no Gram trick)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise BalclustError(f"dimension mismatch: {a.shape} vs {b.shape}")
    out = np.empty((a.shape[0], b.shape[0]))
    for s in range(0, a.shape[0], chunk):
        diff = a[s : s + chunk, None, :] - b[None, :, :]
        out[s : s + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_index(queries: np.ndarray, refs: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Exact nearest neighbour of every query row in refs; ties go to the lowest index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    refs = np.asarray(refs, dtype=float)
    if queries.shape[1] != refs.shape[1]:
        raise BalclustError(f"dimension mismatch: {queries.shape} vs {refs.shape}")
    out = np.empty(queries.shape[0], dtype=np.int64)
    ref_sq = np.einsum("ij,ij->i", refs, refs)
    for s in range(0, queries.shape[0], chunk):
        q = queries[s : s + chunk]
        # Gram trick for the coarse pass, then exact re-check of near-ties.
        d2 = ref_sq[None, :] - 2.0 * q @ refs.T
        best = d2.min(axis=1)
        scale = np.abs(best) + np.einsum("ij,ij->i", q, q) + 1.0
        close = d2 <= (best + 1e-9 * scale)[:, None]
        rows = np.flatnonzero(close.sum(axis=1) > 1)
        idx = d2.argmin(axis=1)
        for r in rows:
            cand = np.flatnonzero(close[r])
            diff = refs[cand] - q[r]
            exact = np.einsum("ij,ij->i", diff, diff)
            idx[r] = cand[np.argmin(exact)]
        out[s : s + chunk] = idx
    return out


@dataclass(frozen=True, eq=False)
class Instance:
    """A point set given either as feature vectors or as a distance matrix."""

    points: np.ndarray | None = None
    dist: np.ndarray | None = None
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.points is None) == (self.dist is None):
            raise BalclustError("give exactly one of points or dist")
        if self.points is not None:
            pts = np.asarray(self.points, dtype=float)
            if pts.ndim != 2 or pts.shape[0] < 1:
                raise BalclustError("points must be a non-empty 2-D array")
            object.__setattr__(self, "points", pts)
        else:
            d = np.asarray(self.dist, dtype=float)
            if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
                raise BalclustError("dist must be a non-empty square matrix")
            object.__setattr__(self, "dist", d)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (self.n,):
                raise BalclustError("labels must have one entry per point")
            object.__setattr__(self, "labels", lab)

    @classmethod
    def from_points(cls, points, labels=None, **meta) -> "Instance":
        return cls(points=np.asarray(points, dtype=float), labels=labels, meta=meta)

    @classmethod
    def from_distances(cls, dist, labels=None, **meta) -> "Instance":
        return cls(dist=np.asarray(dist, dtype=float), labels=labels, meta=meta)

    @property
    def n(self) -> int:
        return (self.points if self.points is not None else self.dist).shape[0]

    @property
    def has_vectors(self) -> bool:
        return self.points is not None

    @cached_property
    def sq_distances(self) -> np.ndarray:
        if self.points is not None:
            d2 = pairwise_sq_dists(self.points, self.points)
            np.fill_diagonal(d2, 0.0)
            return d2
        return self.dist * self.dist

    @cached_property
    def distances(self) -> np.ndarray:
        if self.dist is not None:
            return self.dist
        return np.sqrt(self.sq_distances)

    def subset(self, idx: Sequence[int]) -> "Instance":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        if self.points is not None:
            return Instance(points=self.points[idx], labels=labels, meta=dict(self.meta))
        return Instance(dist=self.dist[np.ix_(idx, idx)], labels=labels, meta=dict(self.meta))

    def metric_violation(self, tol: float = 1e-9) -> tuple[int, int, int] | None:
        """First (i, j, m) with d(i,j) > d(i,m) + d(m,j) + tol, or a broken
        symmetry/diagonal pair reported as (i, j, -1). O(n^3)."""
        d = self.distances
        n = self.n
        for i in range(n):
            if abs(d[i, i]) > tol:
                return (i, i, -1)
        bad = np.argwhere((np.abs(d - d.T) > tol) | (d < -tol))
        if len(bad):
            i, j = bad[0]
            return (int(i), int(j), -1)
        for m in range(n):
            through = d[:, m][:, None] + d[m, :][None, :]
            viol = np.argwhere(d > through + tol)
            if len(viol):
                i, j = viol[0]
                return (int(i), int(j), m)
        return None


@dataclass(frozen=True)
class Constraints:
    """Cluster count k, replication p and capacity fractions [ell, cap_L]."""

    k: int
    p: int = 1
    ell: float = 0.0
    cap_L: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise BalclustError("k must be positive")
        if not 1 <= self.p <= self.k:
            raise BalclustError("p must satisfy 1 <= p <= k")
        if not 0.0 <= self.ell < 1.0 and not (self.ell == 1.0 and self.cap_L == 1.0):
            raise BalclustError("ell must lie in [0, 1)")
        if not 0.0 < self.cap_L <= 1.0:
            raise BalclustError("cap_L must lie in (0, 1]")
        if self.ell > self.cap_L + _COUNT_EPS:
            raise BalclustError("ell must not exceed cap_L")

    def necessary_ok(self) -> bool:
        return self.k * self.ell <= self.p + 1e-9 and self.p <= self.k * self.cap_L + 1e-9

    def lower_count(self, n: int) -> int:
        return int(math.ceil(n * self.ell - _COUNT_EPS))

    def upper_count(self, n: int) -> int:
        return int(math.floor(n * self.cap_L + _COUNT_EPS))


@dataclass(frozen=True, eq=False)
class CostMatrix:
    objective: Objective
    c: np.ndarray
    threshold: float | None = None


def cost_matrix(instance: Instance, objective, threshold: float | None = None) -> CostMatrix:
    """c[i, j] = cost of serving point j from center i.

    For k-center the entries are ``threshold`` where d(i, j) <= threshold and
    ``inf`` elsewhere.
    """
    objective = Objective.parse(objective)
    if objective is Objective.KMEDIAN:
        return CostMatrix(objective, instance.distances.copy())
    if objective is Objective.KMEANS:
        return CostMatrix(objective, instance.sq_distances.copy())
    if threshold is None:
        raise BalclustError("k-center cost matrix needs a threshold")
    c = np.where(instance.distances <= threshold + 1e-12, float(threshold), np.inf)
    return CostMatrix(objective, c, float(threshold))


@dataclass(frozen=True, eq=False)
class Assignment:
    """Clusters plus a per-point multiset of cluster ids.

    ``assign[j]`` maps a cluster id (position in ``centers``) to the
    multiplicity with which point j is served by it.  ``centers[c]`` is the
    point index of cluster c's center, or -1 when the center is only known
    as a coordinate vector (``center_coords``).
    """

    centers: tuple[int, ...]
    assign: tuple[Mapping[int, int], ...]
    center_coords: np.ndarray | None = None

    @classmethod
    def from_labels(cls, labels: Sequence[int], centers: Sequence[int] | None = None,
                    center_coords: np.ndarray | None = None) -> "Assignment":
        labels = np.asarray(labels, dtype=np.int64)
        m = int(labels.max()) + 1 if labels.size else 0
        if centers is None:
            centers = [-1] * m
        return cls(tuple(int(c) for c in centers),
                   tuple({int(c): 1} for c in labels),
                   None if center_coords is None else np.asarray(center_coords, dtype=float))

    @classmethod
    def from_matrix(cls, centers: Sequence[int], mult: np.ndarray) -> "Assignment":
        """Build from an (m, n) integer matrix of multiplicities."""
        mult = np.asarray(mult)
        rows = []
        for j in range(mult.shape[1]):
            nz = np.flatnonzero(mult[:, j])
            rows.append({int(c): int(round(mult[c, j])) for c in nz})
        return cls(tuple(int(c) for c in centers), tuple(rows))

    @property
    def n(self) -> int:
        return len(self.assign)

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    def multiplicity_matrix(self) -> np.ndarray:
        m = np.zeros((self.n_clusters, self.n), dtype=np.int64)
        for j, row in enumerate(self.assign):
            for c, mult in row.items():
                m[c, j] += mult
        return m

    def totals(self) -> np.ndarray:
        return np.array([sum(row.values()) for row in self.assign], dtype=np.int64)

    def labels(self) -> np.ndarray:
        """Single cluster id per point (the one with the largest multiplicity, lowest id)."""
        return np.array([min(row, key=lambda c: (-row[c], c)) for row in self.assign], dtype=np.int64)

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_clusters)]
        for j, row in enumerate(self.assign):
            for c in sorted(row):
                out[c].append(j)
        return out

    def remap(self, perm: Sequence[int]) -> "Assignment":
        """Relabel cluster c as perm[c]."""
        inv = np.argsort(perm)
        centers = tuple(self.centers[i] for i in inv)
        coords = None if self.center_coords is None else self.center_coords[inv]
        assign = tuple({int(perm[c]): m for c, m in row.items()} for row in self.assign)
        return Assignment(centers, assign, coords)


def _pair_costs(instance: Instance, assignment: Assignment, squared: bool):
    """Yield (j, multiplicity, distance-or-squared) for every assigned pair."""
    m = assignment.n_clusters
    coords = assignment.center_coords
    for j, row in enumerate(assignment.assign):
        for c, mult in row.items():
            if not 0 <= c < m:
                raise BalclustError(f"center index {c} out of range for point {j}")
            ci = assignment.centers[c]
            if ci >= 0:
                if not 0 <= ci < instance.n:
                    raise BalclustError(f"center point {ci} out of range")
                val = instance.sq_distances[ci, j] if squared else instance.distances[ci, j]
            else:
                if coords is None or instance.points is None:
                    raise BalclustError(f"cluster {c} has no point center and no coordinates")
                diff = instance.points[j] - coords[c]
                sq = float(diff @ diff)
                val = sq if squared else math.sqrt(sq)
            yield j, mult, float(val)


def evaluate(instance: Instance, assignment: Assignment, objective) -> float:
    objective = Objective.parse(objective)
    if objective is Objective.KCENTER:
        return max((v for _, _, v in _pair_costs(instance, assignment, False)), default=0.0)
    squared = objective is Objective.KMEANS
    return float(sum(m * v for _, m, v in _pair_costs(instance, assignment, squared)))


@dataclass(frozen=True)
class ViolationReport:
    loads: tuple[float, ...]
    max_upper_factor: float
    max_lower_factor: float
    worst_multiplicity: int
    feasible: bool

    def as_dict(self) -> dict:
        return {
            "loads": list(self.loads),
            "max_upper_factor": self.max_upper_factor,
            "max_lower_factor": self.max_lower_factor,
            "worst_multiplicity": self.worst_multiplicity,
            "feasible": self.feasible,
        }


def cluster_loads(assignment: Assignment, weights: np.ndarray | None = None) -> np.ndarray:
    """Load of each cluster as a fraction: sum of multiplicity * weight (1/n when unweighted)."""
    n = assignment.n
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    loads = np.zeros(assignment.n_clusters)
    for j, row in enumerate(assignment.assign):
        for c, mult in row.items():
            loads[c] += mult * w[j]
    return loads


def check_capacities(assignment: Assignment, constraints: Constraints,
                     weights: np.ndarray | None = None) -> ViolationReport:
    """Report per-cluster loads and how far they stray from [ell, cap_L].

    Unweighted feasibility uses the integer bounds ceil(n*ell) and
    floor(n*cap_L); weighted mode compares the fractional loads directly.
    """
    n = assignment.n
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if abs(weights.sum() - 1.0) > 1e-9:
            raise BalclustError("weights must sum to 1")
    loads = cluster_loads(assignment, weights)
    ell, cap = constraints.ell, constraints.cap_L
    upper = max([1.0] + [ld / cap for ld in loads])
    lower = 1.0
    for ld in loads:
        if ell > 0 and ld < ell:
            lower = max(lower, math.inf if ld <= 0 else ell / ld)
    worst = max((max(row.values()) for row in assignment.assign if row), default=0)
    if weights is None:
        counts = assignment.multiplicity_matrix().sum(axis=1)
        lo, hi = constraints.lower_count(n), constraints.upper_count(n)
        feasible = bool(np.all((counts >= lo) & (counts <= hi)))
    else:
        feasible = bool(np.all((loads >= ell - FEAS_TOL) & (loads <= cap + FEAS_TOL)))
    # Loads within tolerance of a bound count as tight, not violated.
    if abs(upper - 1.0) < FEAS_TOL:
        upper = 1.0
    if abs(lower - 1.0) < FEAS_TOL:
        lower = 1.0
    return ViolationReport(tuple(float(x) for x in loads), float(upper), float(lower), int(worst), feasible)


def averaged_kmeans_objective(instance: Instance, assignment: Assignment) -> float:
    """sum_i (1/|f(x_i)|) sum_{c in f(x_i)} ||x_i - c||^2 with multiplicities counted in |f|."""
    totals = assignment.totals()
    if np.any(totals == 0):
        raise BalclustError("every point needs at least one center")
    acc = 0.0
    for j, mult, sq in _pair_costs(instance, assignment, True):
        acc += mult * sq / totals[j]
    return float(acc)


def class_entropy(assignment: Assignment, labels: Sequence, k: int | None = None) -> float:
    """Mean over clusters of the class-label entropy (bits); empty clusters add 0."""
    labels = np.asarray(labels)
    _, codes = np.unique(labels, return_inverse=True)
    m = assignment.n_clusters if k is None else k
    total = 0.0
    for members in assignment.members():
        if not members:
            continue
        counts = np.bincount(codes[members])
        prob = counts[counts > 0] / counts.sum()
        total -= float(np.sum(prob * np.log2(prob)))
    return total / m if m else 0.0


# ---------------------------------------------------------------- I/O

def read_points_csv(path) -> Instance:
    """Points CSV with header f0,f1,...[,label]."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    has_label = header and header[-1].strip() == "label"
    nfeat = len(header) - (1 if has_label else 0)
    pts = np.array([[float(v) for v in r[:nfeat]] for r in rows], dtype=float)
    labels = None
    if has_label:
        raw = [r[nfeat] for r in rows]
        try:
            labels = np.array([int(v) for v in raw])
        except ValueError:
            labels = np.array(raw)
    return Instance(points=pts, labels=labels)


def read_distance_csv(path) -> Instance:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return Instance(dist=data)


def read_instance_csv(path) -> Instance:
    """Sniff the format: a header line starting with 'f0' means points."""
    with open(path) as fh:
        first = fh.readline().strip()
    if first.split(",")[0].strip() == "f0":
        return read_points_csv(path)
    return read_distance_csv(path)


def write_points_csv(path, instance: Instance) -> None:
    pts = instance.points
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"f{i}" for i in range(pts.shape[1])]
        if instance.labels is not None:
            header.append("label")
        w.writerow(header)
        for i, row in enumerate(pts):
            vals = [repr(float(v)) for v in row]
            if instance.labels is not None:
                vals.append(str(instance.labels[i]))
            w.writerow(vals)


def write_distance_csv(path, instance: Instance) -> None:
    np.savetxt(path, instance.distances, delimiter=",", fmt="%.17g")


def write_instance_csv(path, instance: Instance) -> None:
    if instance.points is not None:
        write_points_csv(path, instance)
    else:
        write_distance_csv(path, instance)


def assignment_to_json(assignment: Assignment, objective=None, value=None,
                       violations: ViolationReport | None = None, **extra) -> dict:
    doc = {
        "centers": list(assignment.centers),
        "assign": [[{"c": int(c), "m": int(m)} for c, m in sorted(row.items())]
                   for row in assignment.assign],
        "objective": None if objective is None else Objective.parse(objective).value,
        "value": value,
        "violations": None if violations is None else violations.as_dict(),
    }
    if assignment.center_coords is not None:
        doc["center_coords"] = assignment.center_coords.tolist()
    doc.update(extra)
    return doc


def assignment_from_json(doc: Mapping | str) -> Assignment:
    if isinstance(doc, str):
        doc = json.loads(doc)
    coords = doc.get("center_coords")
    return Assignment(
        tuple(int(c) for c in doc["centers"]),
        tuple({int(e["c"]): int(e["m"]) for e in row} for row in doc["assign"]),
        None if coords is None else np.asarray(coords, dtype=float),
    )


def iter_pairs(assignment: Assignment) -> Iterable[tuple[int, int, int]]:
    """(point, cluster, multiplicity) triples."""
    for j, row in enumerate(assignment.assign):
        for c, m in row.items():
            yield j, c, m
