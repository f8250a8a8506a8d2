"""Independent reference computations used by the tests.

Everything here relies on scipy or brute force, never on the package's own solver.
"""
import itertools

import numpy as np
from scipy.optimize import linprog

from cvro.solver import LinearModel


def random_milp(rng, max_binaries=6, max_continuous=24, max_rows=12):
    """Random model built around a known feasible point, so it is rarely infeasible."""
    nb = int(rng.integers(1, max_binaries + 1))
    nc = int(rng.integers(1, max_continuous + 1))
    m = int(rng.integers(2, max_rows + 1))
    mdl = LinearModel("random")
    for j in range(nc):
        mdl.add_var(f"x{j}", 0.0, float(rng.choice([np.inf, 10.0])))
    for j in range(nb):
        mdl.add_var(f"b{j}", binary=True)
    n = nc + nb
    x0 = np.concatenate([rng.uniform(0, 3, nc), rng.integers(0, 2, nb)])
    for _ in range(m):
        a = rng.normal(size=n).round(2)
        a[rng.random(n) < 0.5] = 0.0
        if not a.any():
            a[0] = 1.0
        sense = str(rng.choice(["<=", ">="]))
        slack = rng.uniform(0, 2)
        rhs = float(a @ x0) + (slack if sense == "<=" else -slack)
        mdl.add_constraint({j: float(a[j]) for j in range(n)}, sense, rhs)
    # mostly positive costs on continuous variables keep most instances bounded
    mdl.set_objective({j: float(rng.normal() + (1.0 if j < nc else 0.0)) for j in range(n)})
    return mdl


def scipy_lp(c, A, row_lo, row_hi, lb, ub):
    """Return (status, objective) with status in optimal/infeasible/unbounded."""
    fin_hi, fin_lo = np.isfinite(row_hi), np.isfinite(row_lo)
    A_ub = np.vstack([A[fin_hi], -A[fin_lo]])
    b_ub = np.concatenate([row_hi[fin_hi], -row_lo[fin_lo]])
    bounds = [(lo, hi if np.isfinite(hi) else None) for lo, hi in zip(lb, ub)]
    r = linprog(c, A_ub=A_ub if len(A_ub) else None, b_ub=b_ub if len(b_ub) else None,
                bounds=bounds, method="highs")
    if r.status == 0:
        return "optimal", float(r.fun)
    if r.status == 3:
        return "unbounded", -np.inf
    if r.status == 2:
        # HiGHS may report "infeasible or unbounded"; settle it with a zero objective
        feas = linprog(np.zeros_like(c), A_ub=A_ub if len(A_ub) else None,
                       b_ub=b_ub if len(b_ub) else None, bounds=bounds, method="highs")
        return ("unbounded", -np.inf) if feas.status == 0 else ("infeasible", np.inf)
    raise RuntimeError(f"linprog failed: {r.message}")


def enumerate_milp(model):
    """Best objective over every binary assignment, each solved as an LP by scipy."""
    c, A, lo, hi, lb, ub, is_int = model.arrays()
    ints = np.flatnonzero(is_int)
    best = np.inf
    for bits in itertools.product([0.0, 1.0], repeat=len(ints)):
        lb2, ub2 = lb.copy(), ub.copy()
        lb2[ints] = bits
        ub2[ints] = bits
        status, val = scipy_lp(c, A, lo, hi, lb2, ub2)
        if status == "unbounded":
            return -np.inf
        if status == "optimal":
            best = min(best, val)
    return best + model.objective_constant if np.isfinite(best) else best


def milp_agrees(model, sol, tol=1e-6):
    """True when ``sol`` matches exhaustive enumeration and is feasible if optimal."""
    best = enumerate_milp(model)
    if sol.status == "optimal":
        return (np.isfinite(best) and abs(sol.objective - best) <= tol * max(1.0, abs(best))
                and model.max_violation(sol.x) <= tol)
    if sol.status == "infeasible":
        return best == np.inf
    if sol.status == "unbounded":
        return best == -np.inf
    return False


def tightness_violations(inst, rates, res, tol=1e-6):
    """Differences between a solve result and the closed-form evaluation of its plan."""
    from cvro.timing import Mode, cyclic_arrival_terms, evaluate_plan_closed_form

    real_time = inst.mode is Mode.REAL_TIME
    ev = evaluate_plan_closed_form(res.plan, rates, inst.cv_arrivals, inst.alpha,
                                   inst.movements, red_start=inst.red_start if real_time else None)
    out = []

    def close(a, b):
        return abs(a - b) <= tol * max(1.0, abs(b))

    if not close(res.objective, ev.objective):
        out.append(f"objective {res.objective} vs closed form {ev.objective}")
    for k, q in ev.residual_queues.items():
        if not close(res.residual_queues[k], q):
            out.append(f"Q_{k} {res.residual_queues[k]} vs {q}")
    C = res.plan.cycle_length
    by_id = inst.by_id
    seen = {k: 0 for k in by_id}
    for r in res.cvs:
        i = seen[r.movement_id]
        seen[r.movement_id] += 1
        if not close(r.delay, float(ev.delays[r.movement_id][i])):
            out.append(f"d for {r.movement_id}#{i}: {r.delay} vs {ev.delays[r.movement_id][i]}")
        if not real_time:
            m = by_id[r.movement_id]
            _, b, t = cyclic_arrival_terms(r.t0, C, res.plan.windows[r.movement_id].end, m.yellow)
            if r.b != b:
                out.append(f"b for {r.movement_id}#{i}: {r.b} vs {b}")
            if not (-tol <= r.t < C) or not close(r.t, t):
                out.append(f"t for {r.movement_id}#{i}: {r.t} (closed form {t}, C {C})")
    return out
