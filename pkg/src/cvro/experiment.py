"""Training, optimization and evaluation loop for sweep experiments.

One sweep cell is a (penetration, fluctuation, replication) triple. All
methods in a cell share the same training demand, CV sample and
evaluation demand, so their delays are paired.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .sim import ScenarioConfig, generate_demand, sample_cvs, simulate
from .timing import (Mode, OptimizationInstance, SignalPlan, SolveResult, optimize_fixed_time,
                     optimize_real_time)
from .trajectory import CVTrajectory, CycleSpec, observe_cycles, virtual_arrival_time
from .uncertainty import (ArrivalBounds, BoundsParams, BoxUncertaintySet, bounds_to_csv,
                          build_box_set, cycle_arrival_bounds, mean_rate_estimate)

REPORT_FIELDS = ("method", "penetration", "fluctuation_cv", "replication", "status",
                 "avg_delay_s", "residual_frequency", "cycle_length_s", "objective", "error")


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(master) & 0xFFFFFFFF, *path]).generate_state(1)[0])


def bounds_params(cfg: ExperimentConfig) -> dict[str, BoundsParams]:
    return {m.movement_id: BoundsParams.from_headway(m.headway, cfg.lambda_max)
            for m in cfg.intersection.movements}


def cycle_specs_for(plan: SignalPlan, cfg: ExperimentConfig, horizon_s: float) -> dict[str, list[CycleSpec]]:
    n = int(math.ceil(horizon_s / plan.cycle_length)) + 1
    return {m.movement_id: plan.cycle_specs(m, n) for m in cfg.intersection.movements}


def estimate_bounds(trajs: list[CVTrajectory], cycles: dict[str, list[CycleSpec]],
                    cfg: ExperimentConfig) -> list[ArrivalBounds]:
    """Per-cycle bounds of every movement, in movement then cycle order."""
    params = bounds_params(cfg)
    out = []
    for k in sorted(cycles):
        obs = observe_cycles(trajs, cycles[k], cfg.observation, k)
        out.extend(cycle_arrival_bounds(o, params[k]) for o in obs)
    return out


def cv_arrival_times(trajs: list[CVTrajectory], cfg: ExperimentConfig) -> dict[str, tuple[float, ...]]:
    out: dict[str, list[float]] = {m.movement_id: [] for m in cfg.intersection.movements}
    for tr in trajs:
        out.setdefault(tr.movement_id, []).append(
            virtual_arrival_time(tr, cfg.observation.free_flow_speed))
    return {k: tuple(sorted(v)) for k, v in out.items()}


def default_alpha(cfg: ExperimentConfig, mode: Mode, base_cycle: float) -> float:
    if cfg.optimization.alpha is not None:
        return cfg.optimization.alpha
    return 3600.0 if mode is Mode.FIXED_TIME else base_cycle


def make_instance(cfg: ExperimentConfig, cv_arrivals, mode: Mode | None = None,
                  red_start=None, alpha: float | None = None) -> OptimizationInstance:
    mode = cfg.optimization.mode if mode is None else mode
    return OptimizationInstance(
        mode=mode,
        movements=cfg.intersection.movements,
        phase=cfg.intersection.phase,
        cv_arrivals={k: tuple(v) for k, v in cv_arrivals.items()},
        alpha=alpha if alpha is not None else default_alpha(cfg, mode, cfg.base_cycle),
        red_start=red_start if red_start is not None else cfg.optimization.red_start,
        big_m=cfg.optimization.big_m,
        epsilon=cfg.optimization.epsilon,
    )


def optimize(inst: OptimizationInstance, rates: dict[str, float], cfg: ExperimentConfig,
             grid: list[float] | None = None) -> SolveResult:
    if inst.mode is Mode.FIXED_TIME:
        return optimize_fixed_time(inst, rates=rates, cycle_grid=grid or cfg.cycle_grid,
                                   max_pivots=cfg.optimization.max_pivots)
    return optimize_real_time(inst, rates=rates, max_pivots=cfg.optimization.max_pivots)


@dataclass
class Training:
    plan: SignalPlan
    horizon_s: float
    arrivals: dict[str, np.ndarray]
    trajectories: list[CVTrajectory]
    bounds: list[ArrivalBounds]
    box: BoxUncertaintySet
    mean_rates: dict[str, float]
    true_rates: dict[str, float]
    cv_arrivals: dict[str, tuple[float, ...]]


def train(cfg: ExperimentConfig, scenario: ScenarioConfig, penetration: float,
          demand_seed: int, cv_seed: int) -> Training:
    """Simulate the base plan, sample CVs and estimate the rate intervals."""
    plan = cfg.intersection.equal_split_plan(cfg.base_cycle)
    horizon = cfg.train_cycles * cfg.base_cycle
    movements = cfg.intersection.movements
    arrivals = {m.movement_id: generate_demand(scenario, m.movement_id, demand_seed, horizon)
                for m in movements}
    result = simulate(plan, arrivals, scenario, movements, horizon)
    trajs = sample_cvs(result, penetration, cv_seed, scenario)
    cycles = cycle_specs_for(plan, cfg, horizon)
    bounds = estimate_bounds(trajs, cycles, cfg)
    params = bounds_params(cfg)
    box = build_box_set(bounds, params, [m.movement_id for m in movements])
    mean_rates = {k: mean_rate_estimate([b for b in bounds if b.movement_id == k], params[k])
                  for k in sorted(params)}
    true_rates = {k: len(a) / horizon for k, a in arrivals.items()}
    return Training(plan, horizon, arrivals, trajs, bounds, box, mean_rates, true_rates,
                    cv_arrival_times(trajs, cfg))


def method_rates(method: str, tr: Training) -> dict[str, float]:
    if method == "CV-RO":
        return tr.box.upper()
    if method == "CV-DO":
        return dict(tr.mean_rates)
    if method == "TrueRate":
        return dict(tr.true_rates)
    raise ValueError(f"unknown method {method}")


@dataclass
class CellRow:
    method: str
    penetration: float
    fluctuation_cv: float
    replication: int
    status: str
    avg_delay_s: float | None = None
    residual_frequency: float | None = None
    cycle_length_s: float | None = None
    objective: float | None = None
    error: str = ""
    solve_time_s: float = field(default=0.0, compare=False)


def run_cell(cfg: ExperimentConfig, penetration: float, fluctuation: float, replication: int,
             cell_dir: Path | None = None) -> list[CellRow]:
    """Every configured method on one paired cell."""
    scenario = ScenarioConfig(**{**asdict_shallow(cfg.scenario),
                                 "fluctuation_cv": fluctuation,
                                 "penetration_rate": penetration})
    demand_seed = derive_seed(cfg.seed, replication, 1)
    cv_seed = derive_seed(cfg.seed, replication, 2)
    eval_seed = derive_seed(cfg.seed, replication, 3)
    base = dict(penetration=penetration, fluctuation_cv=fluctuation, replication=replication)
    try:
        tr = train(cfg, scenario, penetration, demand_seed, cv_seed)
    except Exception as exc:  # recorded per cell, sweep goes on
        return [CellRow(m, status="failed", error=f"training: {exc}", **base) for m in cfg.methods]

    if cell_dir is not None:
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "bounds.csv").write_text(bounds_to_csv(tr.bounds))
        (cell_dir / "box.json").write_text(tr.box.to_json())

    eval_horizon = cfg.eval_cycles * cfg.base_cycle
    movements = cfg.intersection.movements
    eval_arrivals = {m.movement_id: generate_demand(scenario, m.movement_id, eval_seed, eval_horizon)
                     for m in movements}
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            inst = make_instance(cfg, tr.cv_arrivals, mode=Mode.FIXED_TIME)
            res = optimize(inst, method_rates(method, tr), cfg)
        except Exception as exc:
            rows.append(CellRow(method, status="failed", error=f"optimize: {exc}", **base))
            continue
        elapsed = time.perf_counter() - t0
        if not res.optimal:
            rows.append(CellRow(method, status=res.status, error="no optimal plan",
                                solve_time_s=elapsed, **base))
            continue
        if cell_dir is not None:
            (cell_dir / f"plan_{method}.json").write_text(res.to_json())
        try:
            sim = simulate(res.plan, eval_arrivals, scenario, movements, eval_horizon)
        except Exception as exc:
            rows.append(CellRow(method, status="failed", error=f"evaluate: {exc}",
                                solve_time_s=elapsed, **base))
            continue
        freq = float(np.mean([c.residual for c in sim.cycles])) if sim.cycles else 0.0
        rows.append(CellRow(method, status=res.status, avg_delay_s=sim.average_delay,
                            residual_frequency=freq, cycle_length_s=res.plan.cycle_length,
                            objective=res.objective, solve_time_s=elapsed, **base))
    return rows


def asdict_shallow(obj) -> dict:
    return {f: getattr(obj, f) for f in obj.__dataclass_fields__}


@dataclass
class EvaluationReport:
    rows: list[CellRow]

    @property
    def failed(self) -> list[CellRow]:
        return [r for r in self.rows if r.status != "Optimal"]

    def cell_means(self, method: str, axis: str) -> dict[float, float]:
        """Mean delay per value of ``axis`` ("penetration" or "fluctuation_cv")."""
        groups: dict[float, list[float]] = {}
        for r in self.rows:
            if r.method == method and r.avg_delay_s is not None:
                groups.setdefault(getattr(r, axis), []).append(r.avg_delay_s)
        return {k: float(np.mean(v)) for k, v in sorted(groups.items())}

    def aggregate(self) -> list[dict]:
        groups: dict[tuple, list[CellRow]] = {}
        for r in self.rows:
            groups.setdefault((r.method, r.penetration, r.fluctuation_cv), []).append(r)
        out = []
        for (method, p, cv), rows in sorted(groups.items()):
            d = [r.avg_delay_s for r in rows if r.avg_delay_s is not None]
            q = [r.residual_frequency for r in rows if r.residual_frequency is not None]
            out.append({
                "method": method, "penetration": p, "fluctuation_cv": cv,
                "n": len(d), "failed": len(rows) - len(d),
                "mean_delay_s": float(np.mean(d)) if d else None,
                "std_delay_s": float(np.std(d, ddof=1)) if len(d) > 1 else (0.0 if d else None),
                "mean_residual_frequency": float(np.mean(q)) if q else None,
            })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([_cell(getattr(r, f)) for f in REPORT_FIELDS])
        return buf.getvalue()

    def to_json(self) -> str:
        data = {"rows": [{f: getattr(r, f) for f in REPORT_FIELDS} for r in self.rows],
                "summary": self.aggregate(),
                "failed_cells": [{f: getattr(r, f) for f in
                                  ("method", "penetration", "fluctuation_cv", "replication",
                                   "status", "error")} for r in self.failed]}
        return json.dumps(data, indent=2) + "\n"

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "penetration", "fluctuation_cv", "replication", "solve_time_s"])
        for r in self.rows:
            w.writerow([r.method, r.penetration, r.fluctuation_cv, r.replication,
                        f"{r.solve_time_s:.3f}"])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cell_name(p: float, cv: float, rep: int) -> str:
    return f"p{p:g}_cv{cv:g}_r{rep}"


def _run_cell_job(args):
    cfg, p, cv, rep, out = args
    return run_cell(cfg, p, cv, rep, Path(out) / "cells" / _cell_name(p, cv, rep) if out else None)


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[float, float, int]]:
    """(penetration, fluctuation, replication) triples in report order."""
    return [(p, cv, rep) for p in cfg.penetration_rates for cv in cfg.fluctuation_cvs
            for rep in range(cfg.replications)]


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None,
              workers: int | None = None) -> EvaluationReport:
    """Full cross product of the sweep axes; rows come back in a fixed order."""
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, p, cv, rep, str(out_dir) if out_dir else None)
            for p, cv, rep in sweep_cells(cfg)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_job, jobs))
    else:
        results = [_run_cell_job(j) for j in jobs]
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [r for cell in results for r in sorted(cell, key=lambda r: order[r.method])]
    report = EvaluationReport(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        (out / "report.json").write_text(report.to_json())
        (out / "timings.csv").write_text(report.timings_csv())
    return report
