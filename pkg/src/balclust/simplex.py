"""Dense revised primal simplex (two-phase) for small LPs.

Problem form::

    min c.x  s.t.  A x (<=, =, >=) b,  0 <= x <= ub

Internally every equality becomes two inequalities, ``>=`` rows are negated,
finite upper bounds become rows, and each row gets a slack.  Rows whose
right-hand side is negative get an artificial variable for phase 1.

The basis inverse is kept explicitly and refreshed from scratch every
``REFACTOR`` pivots.  Pricing is Dantzig (most negative reduced cost, lowest
index on ties); after ``10 * nvars`` consecutive degenerate pivots it falls
back to Bland's rule for the rest of the phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import BalclustError, InfeasibleError, InvariantError

REFACTOR = 50
PIVOT_TOL = 1e-9
OPT_TOL = 1e-9
PHASE1_TOL = 1e-7


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    iterations: int
    bland_used: bool


def _to_standard(A: sp.csr_matrix, senses, b, ub):
    """Rows a.x <= b only (slacks added later)."""
    rows, rhs = [], []
    A = sp.csr_matrix(A)
    for i, s in enumerate(senses):
        r = A.getrow(i)
        if s == "<=":
            rows.append(r)
            rhs.append(b[i])
        elif s == ">=":
            rows.append(-r)
            rhs.append(-b[i])
        elif s == "=":
            rows.append(r)
            rhs.append(b[i])
            rows.append(-r)
            rhs.append(-b[i])
        else:
            raise BalclustError(f"unknown sense {s!r}")
    nvar = A.shape[1]
    finite = np.flatnonzero(np.isfinite(ub))
    if finite.size:
        rows.append(sp.csr_matrix((np.ones(finite.size), (np.arange(finite.size), finite)),
                                  shape=(finite.size, nvar)))
        rhs.extend(ub[finite])
    M = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, nvar))
    return M, np.asarray(rhs, dtype=float)


class _Tableau:
    def __init__(self, M: sp.csr_matrix, rhs: np.ndarray):
        m, nvar = M.shape
        neg = rhs < 0
        sign = np.where(neg, -1.0, 1.0)
        # Row i: sign_i * (M_i x + s_i) (+ a_i) = |rhs_i|
        S = sp.diags(sign, format="csr")
        art_rows = np.flatnonzero(neg)
        n_art = art_rows.size
        Art = sp.csr_matrix((np.ones(n_art), (art_rows, np.arange(n_art))), shape=(m, n_art))
        self.A = sp.hstack([S @ M, S, Art], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = np.abs(rhs)
        self.m = m
        self.nvar = nvar
        self.n_slack = m
        self.n_art = n_art
        self.ncol = nvar + m + n_art
        basis = np.arange(nvar, nvar + m)
        basis[art_rows] = nvar + m + np.arange(n_art)
        self.basis = basis
        self.is_art = np.zeros(self.ncol, dtype=bool)
        self.is_art[nvar + m:] = True
        self.iterations = 0
        self.bland_used = False
        self._refactor()

    def column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        start, end = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[start:end]] = self.A.data[start:end]
        return col

    def _refactor(self):
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise InvariantError("singular simplex basis") from exc
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.since_refactor = 0

    def run(self, cost: np.ndarray, allowed: np.ndarray, max_degenerate: int) -> None:
        """Minimise cost over the current basis until optimal."""
        degenerate = 0
        bland = False
        max_iter = 50 * (self.m + self.ncol) + 1000
        for _ in range(max_iter):
            cB = cost[self.basis]
            pi = cB @ self.Binv
            red = cost - self.AT @ pi
            red[self.basis] = 0.0
            red[~allowed] = 0.0
            if bland:
                cand = np.flatnonzero(red < -OPT_TOL)
                if cand.size == 0:
                    return
                q = int(cand[0])
            else:
                q = int(np.argmin(red))
                if red[q] >= -OPT_TOL:
                    return
            alpha = self.Binv @ self.column(q)
            pos = alpha > PIVOT_TOL
            if not pos.any():
                raise InvariantError("LP unbounded; impossible for a bounded clustering LP")
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / alpha[pos]
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Prefer large pivots for stability, then the lowest basic index.
                best = alpha[ties].max()
                good = ties[alpha[ties] >= best * (1 - 1e-9)]
                r = int(good[np.argmin(self.basis[good])])
            self._pivot(r, q, alpha)
            self.iterations += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > max_degenerate and not bland:
                    bland = True
                    self.bland_used = True
            else:
                degenerate = 0
        raise InvariantError("simplex iteration limit reached")

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        piv = alpha[r]
        theta = self.xB[r] / piv
        self.xB -= theta * alpha
        self.xB[r] = theta
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = q
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR:
            self._refactor()
        else:
            self.xB[np.abs(self.xB) < 1e-13] = 0.0

    def drive_out_artificials(self) -> None:
        for r in range(self.m):
            j = self.basis[r]
            if not self.is_art[j]:
                continue
            row = np.asarray(self.AT @ self.Binv[r]).ravel()
            row[self.is_art] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-7)
            if cand.size == 0:
                continue  # redundant row; artificial stays basic at zero
            q = int(cand[np.argmax(np.abs(row[cand]))])
            self._pivot(r, q, self.Binv @ self.column(q))

    def solution(self) -> np.ndarray:
        full = np.zeros(self.ncol)
        full[self.basis] = self.xB
        return full


def simplex_solve(c, A, senses, b, ub=None) -> SimplexResult:
    """Solve ``min c.x`` subject to the rows and bounds; raises InfeasibleError."""
    c = np.asarray(c, dtype=float)
    nvar = c.size
    b = np.asarray(b, dtype=float)
    ub = np.full(nvar, np.inf) if ub is None else np.asarray(ub, dtype=float)
    M, rhs = _to_standard(sp.csr_matrix(A, shape=(len(senses), nvar)), list(senses), b, ub)
    tab = _Tableau(M, rhs)
    max_deg = 10 * nvar
    if tab.n_art:
        cost1 = np.zeros(tab.ncol)
        cost1[tab.is_art] = 1.0
        tab.run(cost1, np.ones(tab.ncol, dtype=bool), max_deg)
        tab._refactor()
        infeas = float(tab.solution()[tab.is_art].sum())
        if infeas > PHASE1_TOL * max(1.0, float(np.abs(tab.b).max(initial=0.0))):
            raise InfeasibleError(f"LP infeasible (phase-1 residual {infeas:.3g})")
        tab.drive_out_artificials()
    cost2 = np.zeros(tab.ncol)
    cost2[:nvar] = c
    tab.run(cost2, ~tab.is_art, max_deg)
    tab._refactor()
    x = tab.solution()[:nvar]
    x[np.abs(x) < 1e-12] = 0.0
    return SimplexResult(x, float(c @ x), tab.iterations, tab.bland_used)
