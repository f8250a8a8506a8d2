"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``[criterion N] PASS|FAIL`` line straight to the
terminal (bypassing capture) before asserting, so a plain ``pytest -v`` run
shows the full scorecard.
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from cvro.cli import main
from cvro.config import load_config
from cvro.experiment import run_sweep
from cvro.sim import MovementDemand, ScenarioConfig, generate_demand, measure, sample_cvs, simulate
from cvro.solver import solve as bnb_solve
from cvro.timing import (Mode, MovementParams, OptimizationInstance, PhaseStructure, SignalPlan,
                         Stage, build_fixed_time_model, evaluate_plan_closed_form, min_green_plan,
                         optimize_fixed_time, optimize_real_time)
from cvro.trajectory import ObservationParams, observe_cycles
from cvro.uncertainty import BoundsParams, BoxUncertaintySet, build_box_set, cycle_arrival_bounds

from conftest import by_id, two_stage
from oracles import milp_agrees, random_milp, tightness_violations

DATA = Path(__file__).parent / "data"


def verdict(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


# ------------------------------------------------------------------ 1

def _bound_audit(res, plan, movements, cfg, penetration, seed):
    """(lower == A, upper >= A, lower <= A) tallies over valid undersaturated cycles."""
    trajs = sample_cvs(res, penetration, seed, cfg)
    params = ObservationParams(cfg.free_flow_speed, cfg.jam_spacing)
    n_cycles = int(res.horizon_s // plan.cycle_length)
    n = exact = upper_ok = lower_ok = 0
    for m in movements:
        k = m.movement_id
        truth = {c.cycle_index: c for c in res.cycles if c.movement_id == k}
        specs = plan.cycle_specs(m, n_cycles)
        bp = BoundsParams.from_headway(m.headway)
        for spec, obs in zip(specs, observe_cycles(trajs, specs, params, k)):
            rec, prev = truth.get(spec.cycle_index), truth.get(spec.cycle_index - 1)
            if rec is None or rec.residual or prev is None or prev.residual:
                continue
            b = cycle_arrival_bounds(obs, bp)
            if not b.valid:
                continue
            A, C = rec.arrivals, spec.cycle_length
            n += 1
            exact += abs(b.lower * C - A) <= 1e-9
            upper_ok += b.upper * C >= A - 1e-9
            lower_ok += b.lower * C <= A + 1e-9
    return n, exact, upper_ok, lower_ok


def test_criterion_1_bound_validity(capsys):
    start = time.perf_counter()
    movements, phase = two_stage()
    plan = SignalPlan.from_stage_ends(90.0, [42.0, 87.0], phase, by_id(movements))
    cfg = ScenarioConfig((MovementDemand("NS", 500.0), MovementDemand("EW", 400.0)),
                         fluctuation_cv=0.3)
    horizon = 800 * plan.cycle_length
    arr = {m.movement_id: generate_demand(cfg, m.movement_id, 101, horizon) for m in movements}
    res = simulate(plan, arr, cfg, movements, horizon)
    # the upper bound needs lambda_max above the true peak; check the realized peak
    peak = max(c.arrivals / plan.cycle_length for c in res.cycles)
    lam_max = min(1.0 / m.headway for m in movements)
    n1, exact, upper_ok, _ = _bound_audit(res, plan, movements, cfg, 1.0, 7)
    n2, _, _, lower_ok = _bound_audit(res, plan, movements, cfg, 0.2, 8)
    elapsed = time.perf_counter() - start
    ok = (peak <= lam_max and n1 >= 500 and exact == n1 and upper_ok == n1
          and lower_ok >= 0.99 * n2 and n2 > 0 and elapsed < 30)
    verdict(capsys, 1, "bound validity", ok,
            f"p=1: lower*C == A in {exact}/{n1}, upper*C >= A in {upper_ok}/{n1} "
            f"(peak {peak:.3f} <= lambda_max {lam_max}); p=0.2: lower*C <= A in "
            f"{lower_ok}/{n2}; {elapsed:.1f} s")


# ------------------------------------------------------------------ 2

def test_criterion_2_median_coverage(capsys):
    movements, phase = two_stage()
    plan = SignalPlan.from_stage_ends(90.0, [42.0, 87.0], phase, by_id(movements))
    checked = failures = 0
    for seed, (p, cv) in enumerate(itertools.product([0.1, 0.2, 0.5, 1.0], [0.0, 0.3, 0.6])):
        cfg = ScenarioConfig((MovementDemand("NS", 600.0), MovementDemand("EW", 450.0)),
                             fluctuation_cv=cv)
        horizon = 40 * plan.cycle_length
        arr = {m.movement_id: generate_demand(cfg, m.movement_id, seed, horizon) for m in movements}
        res = simulate(plan, arr, cfg, movements, horizon)
        trajs = sample_cvs(res, p, seed + 100, cfg)
        obs_params = ObservationParams(cfg.free_flow_speed, cfg.jam_spacing)
        bounds = []
        for m in movements:
            specs = plan.cycle_specs(m, 41)
            bp = BoundsParams.from_headway(m.headway)
            bounds += [cycle_arrival_bounds(o, bp)
                       for o in observe_cycles(trajs, specs, obs_params, m.movement_id)]
        box = build_box_set(bounds, {m.movement_id: BoundsParams.from_headway(m.headway)
                                     for m in movements})
        for k, iv in box.intervals.items():
            valid = [b for b in bounds if b.movement_id == k and b.valid]
            if not valid:
                continue
            checked += 1
            need = math.ceil(len(valid) / 2)
            if (sum(iv.u_hat >= b.lower for b in valid) < need
                    or sum(iv.l_hat <= b.upper for b in valid) < need):
                failures += 1
    verdict(capsys, 2, "median coverage", failures == 0 and checked >= 20,
            f"{checked - failures}/{checked} movement boxes cover at least half of their cycles")


# ------------------------------------------------------------------ 3

def _random_fixture(rng):
    n_mov = int(rng.integers(1, 4))
    ids = [f"k{i}" for i in range(n_mov)]
    n_stage = int(rng.integers(1, n_mov + 1)) if n_mov > 1 else 1
    assign = [i % n_stage for i in range(n_mov)]
    movements = tuple(MovementParams(k, float(rng.uniform(1.8, 2.5)), 3.0, 2.0, 2.0, s)
                      for k, s in zip(ids, assign))
    stages = tuple(Stage(float(rng.uniform(6, 12)), tuple(k for k, s in zip(ids, assign) if s == j))
                   for j in range(n_stage))
    phase = PhaseStructure(stages, 40.0, 160.0)
    C = float(rng.choice([60.0, 80.0, 100.0, 120.0]))
    arrivals = {k: tuple(rng.uniform(0, 4 * C, rng.integers(0, 4))) for k in ids}
    lo = rng.uniform(0, 0.15, n_mov)
    box = BoxUncertaintySet.from_intervals({k: (float(a), float(a + rng.uniform(0, 0.25)))
                                            for k, a in zip(ids, lo)})
    inst = OptimizationInstance(Mode.FIXED_TIME, movements, phase, arrivals,
                                float(rng.uniform(1, 500)))
    return inst, box, C


def _worst(plan, inst, box, points):
    ids = [m.movement_id for m in inst.movements]
    grids = [np.linspace(box[k].l_hat, box[k].u_hat, points) for k in ids]
    return max(evaluate_plan_closed_form(plan, dict(zip(ids, lam)), inst.cv_arrivals,
                                         inst.alpha, inst.movements).objective
               for lam in itertools.product(*grids))


def test_criterion_3_robust_counterpart_exactness(capsys):
    rng = np.random.default_rng(2024)
    worst_gap = 0.0
    bad = 0
    for _ in range(50):
        inst, box, C = _random_fixture(rng)
        res = optimize_fixed_time(inst, box, [C])
        assert res.optimal
        rel = lambda a: abs(a - res.objective) / max(1.0, abs(res.objective))
        gaps = [rel(_worst(res.plan, inst, box, 2)), rel(_worst(res.plan, inst, box, 5))]
        # no other plan does better against its own worst case
        ig = inst.phase.intergreens(inst.by_id)
        spare = C - inst.phase.min_cycle(inst.by_id)
        for _ in range(10):
            greens = [s.min_green for s in inst.phase.stages]
            cut = np.sort(rng.uniform(0, spare, len(greens) - 1))
            share = np.diff(np.concatenate([[0.0], cut, [spare]]))
            ends, t = [], 0.0
            for j, g in enumerate(greens):
                t += g + share[j]
                ends.append(t)
                t += ig[j]
            other = SignalPlan.from_stage_ends(C, ends, inst.phase, inst.by_id)
            if _worst(other, inst, box, 2) < res.objective - 1e-6 * max(1.0, res.objective):
                bad += 1
        worst_gap = max(worst_gap, *gaps)
        bad += any(g > 1e-6 for g in gaps)
    verdict(capsys, 3, "robust counterpart exactness", bad == 0,
            f"50 fixtures; largest relative gap to the vertex/grid worst case {worst_gap:.2e}; "
            f"{bad} violations")


# ------------------------------------------------------------------ 4

def test_criterion_4_solver_correctness(capsys):
    rng = np.random.default_rng(4)
    models = [random_milp(rng, max_binaries=6, max_continuous=24) for _ in range(150)]
    movements, phase = two_stage()
    for _ in range(50):
        arrivals = {k: tuple(rng.uniform(0, 300, rng.integers(0, 4))) for k in ("NS", "EW")}
        inst = OptimizationInstance(Mode.FIXED_TIME, movements, phase, arrivals,
                                    float(rng.uniform(1, 200)))
        rates = {k: float(rng.uniform(0, 0.45)) for k in ("NS", "EW")}
        models.append(build_fixed_time_model(inst, rates, float(rng.choice([50, 80, 110]))))
    assert all(len(m.binaries) <= 6 and m.n_vars - len(m.binaries) <= 30 for m in models)
    start = time.perf_counter()
    solutions = [bnb_solve(m) for m in models]
    solve_time = time.perf_counter() - start
    agree = sum(milp_agrees(m, s) for m, s in zip(models, solutions))
    total = time.perf_counter() - start
    n_opt = sum(s.optimal for s in solutions)
    verdict(capsys, 4, "solver correctness", agree == len(models) and total < 60,
            f"{agree}/{len(models)} match enumeration ({n_opt} optimal, all feasible within 1e-6); "
            f"solve {solve_time:.1f} s, with oracle {total:.1f} s")


# ------------------------------------------------------------------ 5

def test_criterion_5_closed_form_tightness(capsys):
    rng = np.random.default_rng(5)
    solves = problems = 0
    for i in range(60):
        inst, box, C = _random_fixture(rng)
        rates = box.upper()
        if i % 2:
            res = optimize_fixed_time(inst, rates=rates, cycle_grid=[C, C + 20.0])
        else:
            rs = {m.movement_id: float(rng.uniform(0, 60)) for m in inst.movements}
            rt = OptimizationInstance(Mode.REAL_TIME, inst.movements, inst.phase,
                                      inst.cv_arrivals, inst.alpha, red_start=rs)
            res, inst = optimize_real_time(rt, rates=rates), rt
        assert res.optimal
        solves += 1
        problems += len(tightness_violations(inst, rates, res))
    verdict(capsys, 5, "closed-form tightness", problems == 0,
            f"{solves} solves here, {problems} mismatches; every other optimal solve in the "
            f"suite is checked by the same oracle")


# ------------------------------------------------------------------ 6

def test_criterion_6_penetration_trend(capsys):
    cfg = load_config(DATA / "penetration_trend.toml")
    start = time.perf_counter()
    report = run_sweep(cfg)
    elapsed = time.perf_counter() - start
    means = report.cell_means("CV-RO", "penetration")
    rho = spearmanr(list(means), list(means.values())).statistic
    ok = not report.failed and len(means) == 5 and rho < 0 and elapsed < 600
    shown = ", ".join(f"{p:g}: {d:.2f}" for p, d in means.items())
    verdict(capsys, 6, "delay falls with penetration", ok,
            f"CV-RO mean delay by penetration {{{shown}}} s; Spearman rho {rho:.2f}; "
            f"{len(report.failed)} failed rows; {elapsed:.0f} s")


# ------------------------------------------------------------------ 7

def test_criterion_7_fluctuation_trend(capsys):
    cfg = load_config(DATA / "fluctuation_trend.toml")
    report = run_sweep(cfg)
    ro = report.cell_means("CV-RO", "fluctuation_cv")
    do = report.cell_means("CV-DO", "fluctuation_cv")
    gain = {cv: do[cv] - ro[cv] for cv in ro}
    levels = sorted(gain)
    top = levels[-1]
    monotone = all(gain[b] >= gain[a] for a, b in zip(levels, levels[1:]))
    ok = not report.failed and top >= 0.4 and len(levels) >= 3 and ro[top] <= do[top] and monotone
    shown = ", ".join(f"{cv:g}: {g:+.2f}" for cv, g in gain.items())
    verdict(capsys, 7, "robust advantage grows with fluctuation", ok,
            f"CV-DO minus CV-RO mean delay by fluctuation level {{{shown}}} s; "
            f"at {top:g}: RO {ro[top]:.2f} vs DO {do[top]:.2f}; non-decreasing: {monotone}")


# ------------------------------------------------------------------ 8

def test_criterion_8_degenerate_scenarios(capsys):
    movements, phase = two_stage(cycle_min=26.0)
    c_min = phase.min_cycle(by_id(movements))
    grid = [c_min, 40.0, 60.0, 90.0]
    idle = OptimizationInstance(Mode.FIXED_TIME, movements, phase, {}, 3600.0)
    zero = {"NS": 0.0, "EW": 0.0}
    ft = optimize_fixed_time(idle, rates=zero, cycle_grid=grid)
    rt = optimize_real_time(OptimizationInstance(Mode.REAL_TIME, movements, phase, {}, 90.0,
                                                 red_start=zero), rates=zero)
    ref = min_green_plan(movements, phase)

    def same(a, b):
        return abs(a.cycle_length - b.cycle_length) <= 1e-6 and all(
            abs(a.windows[k].start - w.start) <= 1e-6 and abs(a.windows[k].end - w.end) <= 1e-6
            for k, w in b.windows.items())

    empty_cfg = ScenarioConfig((MovementDemand("NS", 0.0), MovementDemand("EW", 0.0)))
    arr = {m.movement_id: generate_demand(empty_cfg, m.movement_id, 1, 3600.0) for m in movements}
    idle_delay = measure(simulate(ft.plan, arr, empty_cfg, movements, 3600.0)).mean_delay

    # both approaches above what the longest cycle can discharge
    heavy = {"NS": 0.45, "EW": 0.4}
    over = optimize_fixed_time(idle, rates=heavy, cycle_grid=[60.0, 90.0, 120.0])
    hv_cfg = ScenarioConfig((MovementDemand("NS", 0.45 * 3600), MovementDemand("EW", 0.4 * 3600)))
    h_arr = {m.movement_id: generate_demand(hv_cfg, m.movement_id, 2, 3600.0) for m in movements}
    sim = simulate(over.plan, h_arr, hv_cfg, movements, 3600.0)
    q_model = sum(over.residual_queues.values())
    left = sum(sim.residual_at_horizon.values())
    ok = (same(ft.plan, ref) and same(rt.plan, ref) and ft.objective == 0.0 and idle_delay == 0.0
          and q_model > 0 and left > 0 and measure(sim).residual_frequency > 0)
    verdict(capsys, 8, "degenerate scenarios", ok,
            f"zero demand: min-green plan at C={ft.cycle_length:g} s (fixed and real time), "
            f"mean delay {idle_delay:g} s; over capacity: modeled Q sum {q_model:.1f} veh, "
            f"{left} vehicles still queued at the horizon")


# ------------------------------------------------------------------ 9

def test_criterion_9_determinism(capsys, tmp_path):
    conf = DATA / "small.toml"
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["simulate", "--config", str(conf), "--plan", str(DATA / "plan_60.json"),
                     "--penetration", "0.5", "--out", str(d / "sim")]) == 0
        assert main(["bounds", "--config", str(conf), "--trajectories",
                     str(d / "sim" / "trajectories.csv"), "--out", str(d / "bounds")]) == 0
        assert main(["optimize", "--config", str(conf), "--bounds", str(d / "bounds" / "bounds.csv"),
                     "--trajectories", str(d / "sim" / "trajectories.csv"), "--dump-model",
                     "--out", str(d / "opt")]) == 0
        assert main(["sweep", "--config", str(conf), "--out", str(d / "sweep")]) == 0
        outputs[run] = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*"))
                        if p.is_file() and p.name != "timings.csv"}
    same = outputs["a"] == outputs["b"]
    verdict(capsys, 9, "determinism", same and len(outputs["a"]) >= 10,
            f"{len(outputs['a'])} output files byte-identical across two runs of every command")
