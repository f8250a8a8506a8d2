"""Best-first branch-and-bound over binary variables.

Every node runs activity-based bound propagation, then a light presolve
(fixed columns substituted, rows implied by bounds dropped, positively priced
column singletons folded into the objective) before its LP relaxation goes to
the bounded simplex. Branching picks the most fractional binary.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import simplex
from .model import LinearModel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
CUTOFF = "cutoff"

INT_TOL = 1e-6
BIN_ROUND_TOL = 1e-6


@dataclass
class Solution:
    status: str
    x: np.ndarray | None
    objective: float
    nodes: int = 0
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Sparse:
    """Coordinate view of the constraint matrix used by propagation."""

    def __init__(self, A):
        self.m, self.n = A.shape
        self.rows, self.cols = np.nonzero(A)
        self.vals = A[self.rows, self.cols]


def propagate(sp: _Sparse, row_lo, row_hi, lb, ub, is_int, max_passes: int = 25):
    """Tighten bounds from row activities; returns ``(lb, ub)`` or ``None`` if infeasible."""
    lb = lb.copy()
    ub = ub.copy()
    rows, cols, vals = sp.rows, sp.cols, sp.vals
    m = sp.m
    pos = vals > 0
    for _ in range(max_passes):
        lo_c = np.where(pos, vals * lb[cols], vals * ub[cols])
        hi_c = np.where(pos, vals * ub[cols], vals * lb[cols])
        lo_inf = np.isinf(lo_c)
        hi_inf = np.isinf(hi_c)
        lo_sum = np.bincount(rows, np.where(lo_inf, 0.0, lo_c), minlength=m)
        hi_sum = np.bincount(rows, np.where(hi_inf, 0.0, hi_c), minlength=m)
        lo_cnt = np.bincount(rows, lo_inf, minlength=m)
        hi_cnt = np.bincount(rows, hi_inf, minlength=m)

        if np.any(lo_cnt == 0) or np.any(hi_cnt == 0):
            bad_hi = (lo_cnt == 0) & (lo_sum > row_hi + 1e-7 * (1 + np.abs(row_hi)))
            bad_lo = (hi_cnt == 0) & (hi_sum < row_lo - 1e-7 * (1 + np.abs(row_lo)))
            if np.any(bad_hi) or np.any(bad_lo):
                return None

        # residual activity of each row with the entry's own contribution removed
        r_lo_cnt = lo_cnt[rows] - lo_inf
        r_hi_cnt = hi_cnt[rows] - hi_inf
        r_lo = np.where(r_lo_cnt == 0, lo_sum[rows] - np.where(lo_inf, 0.0, lo_c), -np.inf)
        r_hi = np.where(r_hi_cnt == 0, hi_sum[rows] - np.where(hi_inf, 0.0, hi_c), np.inf)
        with np.errstate(invalid="ignore"):
            from_hi = (row_hi[rows] - r_lo) / vals   # a x <= hi - rmin
            from_lo = (row_lo[rows] - r_hi) / vals   # a x >= lo - rmax
        new_ub_c = np.where(pos, from_hi, from_lo)
        new_lb_c = np.where(pos, from_lo, from_hi)
        new_ub_c = np.where(np.isnan(new_ub_c), np.inf, new_ub_c)
        new_lb_c = np.where(np.isnan(new_lb_c), -np.inf, new_lb_c)

        cand_ub = np.full(sp.n, np.inf)
        cand_lb = np.full(sp.n, -np.inf)
        np.minimum.at(cand_ub, cols, new_ub_c)
        np.maximum.at(cand_lb, cols, new_lb_c)

        slack = 1e-9 * (1.0 + np.abs(cand_ub))
        cand_ub = np.where(np.isfinite(cand_ub), cand_ub + slack, cand_ub)
        slack = 1e-9 * (1.0 + np.abs(cand_lb))
        cand_lb = np.where(np.isfinite(cand_lb), cand_lb - slack, cand_lb)
        cand_ub = np.where(is_int, np.floor(cand_ub + BIN_ROUND_TOL), cand_ub)
        cand_lb = np.where(is_int, np.ceil(cand_lb - BIN_ROUND_TOL), cand_lb)

        with np.errstate(invalid="ignore"):
            thresh = 1e-6 * (1.0 + np.abs(ub))
            tighter_ub = cand_ub < ub - np.where(is_int, 0.5, thresh)
            thresh = 1e-6 * (1.0 + np.abs(lb))
            tighter_lb = cand_lb > lb + np.where(is_int, 0.5, thresh)
        if not (tighter_ub.any() or tighter_lb.any()):
            break
        ub = np.where(tighter_ub, cand_ub, ub)
        lb = np.where(tighter_lb, cand_lb, lb)
        if np.any(lb > ub + 1e-7 * (1 + np.abs(ub))):
            return None
    lb = np.minimum(lb, ub)
    return lb, ub


class _NodeLP:
    """Presolve-reduce a node LP, solve it, and map the answer back."""

    def __init__(self, c, A, row_lo, row_hi):
        self.c, self.A, self.row_lo, self.row_hi = c, A, row_lo, row_hi
        nnz = np.count_nonzero(A, axis=0)
        self.singleton_row = np.full(A.shape[1], -1)
        for j in np.flatnonzero(nnz == 1):
            self.singleton_row[j] = int(np.flatnonzero(A[:, j])[0])

    def solve(self, lb, ub, hint, max_pivots):
        c, A, row_lo, row_hi = self.c, self.A, self.row_lo, self.row_hi
        m, n = A.shape
        fixed = np.abs(ub - lb) <= 1e-12
        x_fixed = np.where(fixed, lb, 0.0)
        offset = A @ x_fixed
        free = ~fixed

        # activity bounds of the free part, infinite contributions counted apart
        Af = np.where(free[None, :], A, 0.0)
        pos = Af > 0
        neg = Af < 0
        with np.errstate(invalid="ignore"):
            lo_c = np.where(pos, Af * lb, np.where(neg, Af * ub, 0.0))
            hi_c = np.where(pos, Af * ub, np.where(neg, Af * lb, 0.0))
        lo_inf = np.isinf(lo_c)
        hi_inf = np.isinf(hi_c)
        lo_fin = np.where(lo_inf, 0.0, lo_c).sum(axis=1) + offset
        hi_fin = np.where(hi_inf, 0.0, hi_c).sum(axis=1) + offset
        lo_cnt = lo_inf.sum(axis=1)
        hi_cnt = hi_inf.sum(axis=1)
        act_lo = np.where(lo_cnt > 0, -np.inf, lo_fin)
        act_hi = np.where(hi_cnt > 0, np.inf, hi_fin)
        tol = 1e-9 * (1 + np.abs(row_lo)), 1e-9 * (1 + np.abs(row_hi))
        keep_row = ~((act_lo >= row_lo - tol[0]) & (act_hi <= row_hi + tol[1]))

        # positively priced column singletons with one-sided rows
        elim = []  # (col, row, coef, side_value)
        elim_col = np.zeros(n, dtype=bool)
        drop_row = np.zeros(m, dtype=bool)
        for j in np.flatnonzero((self.singleton_row >= 0) & free & (c > 0) & np.isinf(ub)):
            i = self.singleton_row[j]
            if not keep_row[i] or drop_row[i]:
                continue
            a = A[i, j]
            if a > 0 and np.isinf(row_hi[i]):
                side = row_lo[i]
            elif a < 0 and np.isinf(row_lo[i]):
                side = row_hi[i]
            else:
                continue
            # rest activity range (excluding j)
            rest_lo = -np.inf if lo_cnt[i] - lo_inf[i, j] else lo_fin[i] - (0.0 if lo_inf[i, j] else lo_c[i, j])
            rest_hi = np.inf if hi_cnt[i] - hi_inf[i, j] else hi_fin[i] - (0.0 if hi_inf[i, j] else hi_c[i, j])
            need_hi = (side - rest_lo) / a if a > 0 else (side - rest_hi) / a
            need_lo = (side - rest_hi) / a if a > 0 else (side - rest_lo) / a
            if need_hi <= lb[j] + 1e-12 * (1 + abs(lb[j])):
                # row never pushes above the lower bound: column sits at lb
                drop_row[i] = True
                elim_col[j] = True
                elim.append((j, i, a, side, False))
            elif need_lo >= lb[j] - 1e-12 * (1 + abs(lb[j])) and np.isfinite(need_lo):
                drop_row[i] = True
                elim_col[j] = True
                elim.append((j, i, a, side, True))
        keep_row &= ~drop_row

        cols = np.flatnonzero(free & ~elim_col)
        rows = np.flatnonzero(keep_row)
        c_red = c[cols].copy()
        for j, i, a, side, tight in elim:
            if tight:
                # column j equals (side - rest) / a at the optimum
                c_red -= (c[j] / a) * A[i, cols]

        A_red = A[np.ix_(rows, cols)]
        lo_red = row_lo[rows] - offset[rows]
        hi_red = row_hi[rows] - offset[rows]
        res = simplex.solve_lp(c_red, A_red, lo_red, hi_red, lb[cols], ub[cols],
                               x_hint=None if hint is None else hint[cols],
                               max_pivots=max_pivots)
        if res.status != simplex.OPTIMAL:
            return res.status, None, res.pivots
        x = x_fixed.copy()
        x[cols] = res.x
        for j, i, a, side, tight in elim:
            row = A[i].copy()
            row[j] = 0.0
            x[j] = max(lb[j], (side - row @ x) / a)
        return simplex.OPTIMAL, x, res.pivots


def solve(model: LinearModel, *, max_pivots: int = 10**6, incumbent=None,
          cutoff: float = math.inf, max_nodes: int | None = None) -> Solution:
    """Minimize ``model``; binaries are resolved by best-first branch-and-bound.

    ``incumbent`` is an optional feasible starting point (full variable
    vector) used as the initial upper bound. With a finite ``cutoff`` only
    solutions strictly better than it are sought; if none exists the status
    is ``"cutoff"``.
    """
    c, A, row_lo, row_hi, lb0, ub0, is_int = model.arrays()
    const = model.objective_constant
    sp = _Sparse(A)
    node_lp = _NodeLP(c, A, row_lo, row_hi)

    best_x = None
    best_val = cutoff - const
    if incumbent is not None:
        x_in = np.asarray(incumbent, dtype=float)
        if model.max_violation(x_in) <= 1e-6 and np.all(
                np.abs(x_in[is_int] - np.round(x_in[is_int])) <= 1e-9):
            if float(c @ x_in) < best_val:
                best_x = x_in.copy()
                best_val = float(c @ x_in)

    def prune_level(val):
        return val - 1e-9 * max(1.0, abs(val))

    root = propagate(sp, row_lo, row_hi, lb0, ub0, is_int)
    if root is None:
        return Solution(INFEASIBLE, None, math.inf)

    heap = [(-math.inf, 0, root[0], root[1], None)]
    seq = 1
    pivots = 0
    nodes = 0
    hit_limit = False
    while heap:
        bound, _, lb, ub, hint = heapq.heappop(heap)
        if bound >= prune_level(best_val):
            continue
        if max_nodes is not None and nodes >= max_nodes:
            hit_limit = True
            break
        nodes += 1
        status, x, piv = node_lp.solve(lb, ub, hint, max_pivots - pivots)
        pivots += piv
        if status == simplex.ITERATION_LIMIT:
            hit_limit = True
            break
        if status == simplex.UNBOUNDED:
            return Solution(UNBOUNDED, None, -math.inf, nodes, pivots)
        if status != simplex.OPTIMAL:
            continue
        val = float(c @ x)
        if val >= prune_level(best_val):
            continue
        xi = x[is_int]
        frac = np.abs(xi - np.round(xi))
        if not np.any(frac > INT_TOL):
            if np.any(frac > 1e-12):
                # snap binaries and re-solve the continuous part
                fix_lb = lb.copy()
                fix_ub = ub.copy()
                fix_lb[is_int] = fix_ub[is_int] = np.round(xi)
                status, x2, piv = node_lp.solve(fix_lb, fix_ub, x, max_pivots - pivots)
                pivots += piv
                if status != simplex.OPTIMAL:
                    continue
                x, val = x2, float(c @ x2)
                if val >= prune_level(best_val):
                    continue
            best_x, best_val = x, val
            continue
        int_idx = np.flatnonzero(is_int)
        j = int(int_idx[np.argmax(frac)])
        for side in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = side
            tightened = propagate(sp, row_lo, row_hi, clb, cub, is_int)
            if tightened is None:
                continue
            heapq.heappush(heap, (val, seq, tightened[0], tightened[1], x))
            seq += 1

    if hit_limit:
        return Solution(ITERATION_LIMIT, best_x,
                        best_val + const if best_x is not None else math.inf, nodes, pivots)
    if best_x is None:
        status = CUTOFF if math.isfinite(cutoff) else INFEASIBLE
        return Solution(status, None, math.inf, nodes, pivots)
    return Solution(OPTIMAL, best_x, best_val + const, nodes, pivots)
