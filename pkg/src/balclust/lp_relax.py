"""LP relaxation of balanced, p-replicated clustering.

Variables are ``x[i, j]`` (fraction of point j served by center i, stored
at column ``i * n + j``) followed by ``y[i]`` (opening of i, column
``n * n + i``).  Rows, in order:

* demand      sum_i x_ij = p                              (one per point)
* capacity    lo * y_i <= sum_j w_j x_ij <= hi * y_i      (two per center)
* cardinality sum_i y_i <= k   (``=`` for k-center)
* linking     x_ij <= y_i

Unweighted problems use w_j = 1/n and the integerized bounds
ceil(n*ell)/n, floor(n*cap_L)/n; weighted problems use the given reals.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import Constraints, CostMatrix, Instance, Objective, cost_matrix
from .errors import BalclustError, InfeasibleError, InvariantError
from .simplex import simplex_solve


@dataclass(eq=False)
class LpProblem:
    n: int
    p: int
    c: np.ndarray
    A: sp.csr_matrix
    senses: list[str]
    b: np.ndarray
    ub: np.ndarray
    row_names: list[str]
    weights: np.ndarray
    lo: float
    hi: float
    cost: CostMatrix

    @property
    def n_vars(self) -> int:
        return self.c.size

    def x_index(self, i: int, j: int) -> int:
        return i * self.n + j

    def y_index(self, i: int) -> int:
        return self.n * self.n + i

    def var_name(self, col: int) -> str:
        nn = self.n * self.n
        if col < nn:
            return f"x_{col // self.n}_{col % self.n}"
        return f"y_{col - nn}"

    def dump(self) -> str:
        """Plain-text listing: objective, one line per row, then bounds."""
        out = io.StringIO()
        terms = [f"{v:+.10g} {self.var_name(k)}" for k, v in enumerate(self.c) if v != 0]
        out.write("minimize\n  " + (" ".join(terms) if terms else "0") + "\n")
        out.write("subject to\n")
        A = self.A.tocsr()
        for r in range(A.shape[0]):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            row = " ".join(f"{A.data[t]:+.10g} {self.var_name(A.indices[t])}" for t in range(lo, hi))
            out.write(f"  {self.row_names[r]}: {row} {self.senses[r]} {self.b[r]:.10g}\n")
        out.write("bounds\n")
        for k, u in enumerate(self.ub):
            out.write(f"  0 <= {self.var_name(k)} <= {u:.10g}\n")
        return out.getvalue()


@dataclass(eq=False)
class FractionalSolution:
    x: np.ndarray  # (n, n), x[i, j]
    y: np.ndarray
    objective: float
    C: np.ndarray  # per-point connection cost
    p: int

    @property
    def n(self) -> int:
        return self.y.size


def build_lp(instance: Instance, constraints: Constraints, objective, weights=None,
             threshold: float | None = None, *, k: int | None = None,
             load_bounds: tuple[float, float] | None = None,
             cardinality: str | None = None) -> LpProblem:
    """Assemble the relaxation.

    ``k`` overrides ``constraints.k`` and ``load_bounds`` gives absolute
    (count) bounds on every center's load; both exist for the per-component
    k-center problems, which keep the global n.  ``cardinality`` ("<=" or
    "=") defaults to "=" for k-center and "<=" otherwise.
    """
    objective = Objective.parse(objective)
    n = instance.n
    p = constraints.p
    kk = constraints.k if k is None else int(k)
    cost = cost_matrix(instance, objective, threshold)
    if weights is None:
        w = np.full(n, 1.0 / n)
        if load_bounds is None:
            lo_c, hi_c = constraints.lower_count(n), constraints.upper_count(n)
        else:
            lo_c, hi_c = load_bounds
        # Rows are scaled by 1/n so uniform weights give identical rows.
        lo, hi = lo_c / n, hi_c / n
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise BalclustError("weights must be n nonnegative reals summing to 1")
        if load_bounds is not None:
            raise BalclustError("load_bounds apply to unweighted problems only")
        lo, hi = constraints.ell, constraints.cap_L

    nn = n * n
    nvar = nn + n
    c = np.zeros(nvar)
    if objective is not Objective.KCENTER:
        c[:nn] = cost.c.ravel()
    rows, cols, vals = [], [], []
    senses: list[str] = []
    b: list[float] = []
    names: list[str] = []

    def add_row(idx, coef, sense, rhs, name):
        r = len(senses)
        rows.extend([r] * len(idx))
        cols.extend(idx)
        vals.extend(coef)
        senses.append(sense)
        b.append(rhs)
        names.append(name)

    ar = np.arange(n)
    for j in range(n):
        add_row(list(ar * n + j), [1.0] * n, "=", float(p), f"demand_{j}")
    for i in range(n):
        xs = list(i * n + ar)
        add_row(xs + [nn + i], list(w) + [-lo], ">=", 0.0, f"lower_{i}")
        add_row(xs + [nn + i], list(w) + [-hi], "<=", 0.0, f"upper_{i}")
    card = cardinality or ("=" if objective is Objective.KCENTER else "<=")
    add_row(list(nn + ar), [1.0] * n, card, float(kk), "cardinality")
    admissible = np.isfinite(cost.c)
    for i in range(n):
        for j in range(n):
            # Pairs beyond the k-center threshold are fixed at 0; their link row is void.
            if admissible[i, j]:
                add_row([i * n + j, nn + i], [1.0, -1.0], "<=", 0.0, f"link_{i}_{j}")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(senses), nvar))
    ub = np.ones(nvar)
    if objective is Objective.KCENTER:
        ub[:nn][~np.isfinite(cost.c.ravel())] = 0.0
    return LpProblem(n, p, c, A, senses, np.asarray(b), ub, names, w, lo, hi, cost)


def solve_lp(problem: LpProblem) -> FractionalSolution:
    """Optimal fractional solution; raises InfeasibleError."""
    n, nn = problem.n, problem.n * problem.n
    keep = np.flatnonzero(problem.ub > 0)
    A = problem.A.tocsc()[:, keep]
    ub = problem.ub[keep].copy()
    # x_ij <= 1 follows from x_ij <= y_i <= 1, so only y needs an explicit bound.
    ub[keep < nn] = np.inf
    res = simplex_solve(problem.c[keep], A, problem.senses, problem.b, ub)
    full = np.zeros(problem.n_vars)
    full[keep] = np.clip(res.x, 0.0, None)
    x = full[:nn].reshape(n, n)
    y = full[nn:]
    cst = np.where(np.isfinite(problem.cost.c), problem.cost.c, 0.0)
    C = (cst * x).sum(axis=0) / problem.p
    sol = FractionalSolution(x, y, float(problem.c @ full), C, problem.p)
    violation = lp_violation(problem, sol)
    if violation > 1e-6:
        raise InvariantError(f"LP solution violates its rows by {violation:.3g}")
    return sol


def lp_violation(problem: LpProblem, sol: FractionalSolution) -> float:
    """Largest violation of any row or bound (0 when feasible)."""
    v = np.concatenate([sol.x.ravel(), sol.y])
    lhs = problem.A @ v
    worst = 0.0
    for s, a, rhs in zip(problem.senses, lhs, problem.b):
        if s == "=":
            worst = max(worst, abs(a - rhs))
        elif s == "<=":
            worst = max(worst, a - rhs)
        else:
            worst = max(worst, rhs - a)
    worst = max(worst, float(np.max(v - problem.ub, initial=0.0)), float(np.max(-v, initial=0.0)))
    return float(worst)


def solve_relaxation(instance: Instance, constraints: Constraints, objective,
                     weights=None) -> FractionalSolution:
    if not constraints.necessary_ok():
        raise InfeasibleError("k*ell <= p <= k*cap_L does not hold")
    return solve_lp(build_lp(instance, constraints, objective, weights))


def kcenter_lp_feasible(instance: Instance, t: float, constraints: Constraints, weights=None, *,
                        k: int | None = None,
                        load_bounds: tuple[float, float] | None = None,
                        cardinality: str = "=") -> FractionalSolution:
    """Feasibility witness of the k-center LP at threshold t (sum(y) = k by default)."""
    kk = constraints.k if k is None else int(k)
    if kk < constraints.p or (cardinality == "=" and kk > instance.n):
        raise InfeasibleError(f"k={kk} cannot host p={constraints.p} distinct centers")
    prob = build_lp(instance, constraints, Objective.KCENTER, weights, threshold=t,
                    k=kk, load_bounds=load_bounds, cardinality=cardinality)
    return solve_lp(prob)


__all__ = ["LpProblem", "FractionalSolution", "build_lp", "solve_lp", "lp_violation",
           "solve_relaxation", "kcenter_lp_feasible"]
