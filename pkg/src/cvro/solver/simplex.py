"""Bounded-variable primal simplex on a dense tableau.

Problem form::

    minimize  c @ x
    s.t.      row_lo <= A @ x <= row_hi
              lb <= x <= ub

Each row gets a logical variable ``w = A @ x`` carrying the row range as its
bounds, so every constraint is the equality ``A x - w = 0``. Nonbasic
variables may sit anywhere inside their bounds (the starting point can be a
hint), which makes the method usable as a warm-startable crash for
branch-and-bound nodes. Rows infeasible at the start receive an artificial
column (phase 1) unless a column singleton can absorb the infeasibility.

Pricing is Dantzig's rule with a Harris-style two-pass ratio test; after
``bland_after`` consecutive degenerate pivots the method switches to Bland's
smallest-index rule until a nondegenerate step is made.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

FEAS_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    objective: float
    pivots: int


class _Tableau:
    def __init__(self, c, A, row_lo, row_hi, lb, ub, x0):
        m, n = A.shape
        self.m, self.n = m, n
        x = np.clip(x0, lb, ub)
        w = A @ x

        lo = np.concatenate([lb, row_lo])
        hi = np.concatenate([ub, row_hi])
        z = np.concatenate([x, w])

        # column singletons: structural columns with exactly one nonzero
        nnz = np.count_nonzero(A, axis=0)
        singleton_row = np.full(n, -1)
        for j in np.flatnonzero(nnz == 1):
            singleton_row[j] = int(np.flatnonzero(A[:, j])[0])
        by_row: dict[int, list[int]] = {}
        for j in np.flatnonzero(singleton_row >= 0):
            by_row.setdefault(int(singleton_row[j]), []).append(int(j))

        basis = np.arange(n, n + m)
        diag = -np.ones(m)
        art_rows, art_sign = [], []
        for r in range(m):
            if row_lo[r] - FEAS_TOL <= w[r] <= row_hi[r] + FEAS_TOL:
                continue
            target = row_lo[r] if w[r] < row_lo[r] else row_hi[r]
            absorbed = False
            for j in by_row.get(r, ()):
                a = A[r, j]
                xj = x[j] + (target - w[r]) / a
                if lb[j] - FEAS_TOL <= xj <= ub[j] + FEAS_TOL:
                    basis[r] = j
                    diag[r] = a
                    z[n + r] = target
                    z[j] = min(max(xj, lb[j]), ub[j])
                    absorbed = True
                    break
            if absorbed:
                continue
            z[n + r] = target
            art_rows.append(r)
            art_sign.append(1.0 if target - w[r] > 0 else -1.0)

        k = len(art_rows)
        N = n + m + k
        T = np.zeros((m + 1, N))
        T[:m, :n] = A
        T[:m, n:n + m] = -np.eye(m)
        for a_idx, (r, s) in enumerate(zip(art_rows, art_sign)):
            T[r, n + m + a_idx] = s
            basis[r] = n + m + a_idx
            diag[r] = s
        T[:m] /= diag[:, None]

        self.T = T
        self.basis = basis
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[basis] = True
        self.lo = np.concatenate([lo, np.zeros(k)])
        self.hi = np.concatenate([hi, np.full(k, np.inf)])
        self.z = np.concatenate([z, np.zeros(k)])
        self.n_art = k
        self.art_origin = list(zip(art_rows, art_sign))
        self.cost = np.concatenate([c, np.zeros(m + k)])
        self.recompute_basics()

    @property
    def N(self):
        return self.T.shape[1]

    def recompute_basics(self):
        nb = ~self.is_basic
        self.z[self.basis] = -(self.T[:self.m, nb] @ self.z[nb])

    def set_costs(self, cost):
        self.T[self.m] = cost - cost[self.basis] @ self.T[:self.m]

    def drop_nonbasic_artificials(self):
        first = self.n + self.m
        keep = np.ones(self.N, dtype=bool)
        keep[first:] = self.is_basic[first:]
        if keep.all():
            return
        remap = np.cumsum(keep) - 1
        first_keep = keep[first:]
        self.art_origin = [o for o, kk in zip(self.art_origin, first_keep) if kk]
        self.T = self.T[:, keep]
        self.basis = remap[self.basis]
        self.is_basic = self.is_basic[keep]
        self.lo, self.hi, self.z = self.lo[keep], self.hi[keep], self.z[keep]
        self.cost = self.cost[keep]

    def pivot(self, r, q):
        T = self.T
        T[r] /= T[r, q]
        col = T[:, q].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        # only rows with a nonzero in the pivot column change
        T[rows] -= np.outer(col[rows], T[r])
        T[:, q] = 0.0
        T[r, q] = 1.0
        self.is_basic[self.basis[r]] = False
        self.basis[r] = q
        self.is_basic[q] = True

    def run(self, max_pivots, bland_after):
        """Primal simplex iterations on the current cost row."""
        m = self.m
        pivots = 0
        stalled = 0
        bland = False
        while True:
            if pivots >= max_pivots:
                return ITERATION_LIMIT, pivots
            d = self.T[m]
            z, lo, hi = self.z, self.lo, self.hi
            nb = ~self.is_basic
            can_inc = nb & (z < hi - FEAS_TOL) & (d < -DUAL_TOL)
            can_dec = nb & (z > lo + FEAS_TOL) & (d > DUAL_TOL)
            cand = can_inc | can_dec
            if not cand.any():
                return OPTIMAL, pivots
            if bland:
                q = int(np.flatnonzero(cand)[0])
            else:
                q = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            direction = 1.0 if can_inc[q] else -1.0

            alpha = direction * self.T[:m, q]
            xb = z[self.basis]
            lob, hib = lo[self.basis], hi[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = alpha > PIVOT_TOL
                inc = alpha < -PIVOT_TOL
                ratio = np.full(m, np.inf)
                ratio[dec] = (xb[dec] - lob[dec]) / alpha[dec]
                ratio[inc] = (hib[inc] - xb[inc]) / -alpha[inc]
                ratio[~np.isfinite(ratio)] = np.inf
            own = (hi[q] - z[q]) if direction > 0 else (z[q] - lo[q])

            r = -1
            if np.isfinite(ratio).any():
                if bland:
                    theta = max(ratio.min(), 0.0)
                    ties = np.flatnonzero(ratio <= theta + FEAS_TOL)
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    relaxed = np.full(m, np.inf)
                    relaxed[dec] = (xb[dec] - lob[dec] + FEAS_TOL) / alpha[dec]
                    relaxed[inc] = (hib[inc] - xb[inc] + FEAS_TOL) / -alpha[inc]
                    relaxed[~np.isfinite(relaxed)] = np.inf
                    bound = relaxed.min()
                    ok = np.flatnonzero(ratio <= bound)
                    r = int(ok[np.argmax(np.abs(alpha[ok]))])
                theta = max(ratio[r], 0.0)
            else:
                theta = np.inf

            if own <= theta:
                if not np.isfinite(own):
                    return UNBOUNDED, pivots
                theta = own
                r = -1

            if theta <= 1e-12:
                stalled += 1
                if stalled > bland_after:
                    bland = True
            else:
                stalled = 0
                bland = False

            z[self.basis] = xb - theta * alpha
            if r < 0:
                z[q] = hi[q] if direction > 0 else lo[q]
                continue
            leave = self.basis[r]
            z[leave] = lob[r] if alpha[r] > 0 else hib[r]
            z[q] = z[q] + direction * theta
            self.pivot(r, q)
            pivots += 1
            if pivots % 100 == 0:
                self.recompute_basics()

    def refactor(self, M_full):
        """Rebuild the tableau from the original columns for the current basis."""
        B = M_full[:, self.basis]
        self.T[:self.m] = np.linalg.solve(B, M_full)
        self.recompute_basics()


def solve_lp(c, A, row_lo, row_hi, lb, ub, *, x_hint=None, max_pivots=10**6,
             bland_after=200) -> LPResult:
    """Solve a bounded LP; returns status, primal point, objective and pivot count."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    row_lo = np.asarray(row_lo, dtype=float)
    row_hi = np.asarray(row_hi, dtype=float)
    if np.any(lb > ub + FEAS_TOL) or np.any(row_lo > row_hi + FEAS_TOL):
        return LPResult(INFEASIBLE, None, np.inf, 0)

    if x_hint is None:
        x0 = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
    else:
        x0 = np.asarray(x_hint, dtype=float)
        x0 = np.where(np.isfinite(x0), x0, 0.0)
    x0 = np.clip(x0, lb, ub)

    if m == 0:
        x = x0.copy()
        for j in range(n):
            if c[j] > 0:
                x[j] = lb[j]
            elif c[j] < 0:
                x[j] = ub[j]
            if not np.isfinite(x[j]):
                return LPResult(UNBOUNDED, None, -np.inf, 0)
        return LPResult(OPTIMAL, x, float(c @ x), 0)

    tab = _Tableau(c, A, row_lo, row_hi, lb, ub, x0)
    total = 0
    if tab.n_art:
        phase1 = np.zeros(tab.N)
        phase1[n + m:] = 1.0
        tab.set_costs(phase1)
        status, piv = tab.run(max_pivots, bland_after)
        total += piv
        if status == ITERATION_LIMIT:
            return LPResult(ITERATION_LIMIT, None, np.inf, total)
        tab.recompute_basics()
        infeas = tab.z[n + m:].sum()
        scale = 1.0 + np.abs(row_lo[np.isfinite(row_lo)]).max(initial=0.0) \
            + np.abs(row_hi[np.isfinite(row_hi)]).max(initial=0.0)
        if infeas > 1e-7 * scale:
            return LPResult(INFEASIBLE, None, np.inf, total)
        tab.hi[n + m:] = 0.0
        tab.z[n + m:] = np.minimum(tab.z[n + m:], 0.0)
        tab.drop_nonbasic_artificials()

    tab.set_costs(tab.cost)
    for attempt in range(3):
        status, piv = tab.run(max_pivots - total, bland_after)
        total += piv
        if status != OPTIMAL:
            return LPResult(status, None, -np.inf if status == UNBOUNDED else np.inf, total)
        tab.recompute_basics()
        x = tab.z[:n].copy()
        act = A @ x
        viol = max(
            np.max(lb - x, initial=0.0), np.max(x - ub, initial=0.0),
            np.max(row_lo - act, initial=0.0), np.max(act - row_hi, initial=0.0),
        )
        basics = tab.z[tab.basis]
        bviol = max(np.max(tab.lo[tab.basis] - basics, initial=0.0),
                    np.max(basics - tab.hi[tab.basis], initial=0.0))
        if viol <= 1e-8 and bviol <= 1e-8:
            break
        # drift: refactor from the original columns and re-run
        M_full = np.zeros((m, tab.N))
        M_full[:, :n] = A
        M_full[:, n:n + m] = -np.eye(m)
        for col, (r, s) in enumerate(tab.art_origin, start=n + m):
            M_full[r, col] = s
        tab.refactor(M_full)
        tab.set_costs(tab.cost)
    x = np.clip(tab.z[:n], lb, ub)
    return LPResult(OPTIMAL, x, float(c @ x), total)
