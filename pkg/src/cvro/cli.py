"""Command-line entry point: ``cvro {bounds,optimize,simulate,sweep}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import (bounds_params, cv_arrival_times, derive_seed, estimate_bounds,
                         make_instance, optimize, run_sweep)
from .sim import generate_demand, measure, sample_cvs, simulate
from .timing import (INFEASIBLE, ITERATION_LIMIT, Mode, SignalPlan, build_fixed_time_model,
                     build_real_time_model, result_from_json)
from .trajectory import CVTrajectory, CycleSpec, parse_trajectories, trajectories_to_csv
from .uncertainty import (BoxUncertaintySet, bounds_from_csv, bounds_to_csv, build_box_set,
                          mean_rate_estimate)

log = logging.getLogger("cvro")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2


def _read_trajectories(path: str | None) -> list[CVTrajectory]:
    if not path:
        return []
    with open(path, "rb") as fh:
        return parse_trajectories(fh)


def _cycles(cfg: ExperimentConfig, trajs: list[CVTrajectory]) -> dict[str, list[CycleSpec]]:
    """Explicit cycles from the config, else base-plan cycles spanning the data."""
    ids = [m.movement_id for m in cfg.intersection.movements]
    if cfg.cycles:
        out: dict[str, list[CycleSpec]] = {k: [] for k in ids}
        for k, spec in zip(cfg.cycle_movements, cfg.cycles):
            if k not in out:
                raise ConfigError(f"cycle for unknown movement {k}")
            out[k].append(spec)
        return out
    plan = cfg.intersection.equal_split_plan(cfg.base_cycle)
    if not trajs:
        return {k: [] for k in ids}
    end = max(float(tr.times[-1]) for tr in trajs)
    n = max(1, int(math.ceil(end / plan.cycle_length)) + 1)
    by_id = cfg.intersection.by_id
    return {k: plan.cycle_specs(by_id[k], n) for k in ids}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_bounds(args, cfg: ExperimentConfig) -> int:
    trajs = _read_trajectories(args.trajectories)
    known = set(cfg.intersection.by_id)
    stray = sorted({t.movement_id for t in trajs} - known)
    if stray:
        raise ConfigError(f"trajectories reference unknown movements {stray}")
    bounds = estimate_bounds(trajs, _cycles(cfg, trajs), cfg)
    box = build_box_set(bounds, bounds_params(cfg), sorted(known))
    out = Path(args.out)
    _write(out / "bounds.csv", bounds_to_csv(bounds))
    _write(out / "box.json", box.to_json())
    for k, b in box.intervals.items():
        note = " (fallback)" if b.fallback else ""
        print(f"{k}: [{b.l_hat:.6f}, {b.u_hat:.6f}] veh/s from {b.support_count} cycles{note}")
    return EXIT_OK


def _rates(args, cfg: ExperimentConfig) -> dict[str, float]:
    params = bounds_params(cfg)
    ids = sorted(cfg.intersection.by_id)
    if args.bounds:
        bounds = bounds_from_csv(Path(args.bounds).read_text(encoding="utf-8"))
        box = build_box_set(bounds, params, ids)
        if args.baseline == "cv-do":
            return {k: mean_rate_estimate([b for b in bounds if b.movement_id == k], params[k])
                    for k in ids}
    elif args.box:
        box = BoxUncertaintySet.from_json(Path(args.box).read_text(encoding="utf-8"))
        if args.baseline == "cv-do":
            return {k: (b.l_hat + b.u_hat) / 2 for k, b in box.intervals.items()}
    else:
        raise ConfigError("optimize needs --box or --bounds")
    missing = set(ids) - set(box.intervals)
    if missing:
        raise ConfigError(f"box set lacks movements {sorted(missing)}")
    return box.upper()


def cmd_optimize(args, cfg: ExperimentConfig) -> int:
    mode = Mode(args.mode.replace("-", "_")) if args.mode else cfg.optimization.mode
    rates = _rates(args, cfg)
    trajs = _read_trajectories(args.trajectories)
    inst = make_instance(cfg, cv_arrival_times(trajs, cfg), mode=mode)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else None
    res = optimize(inst, rates, cfg, grid)
    out = Path(args.out)
    _write(out / "solve.json", res.to_json())
    if args.dump_model:
        if mode is Mode.FIXED_TIME:
            C = res.cycle_length if res.optimal else (grid or cfg.cycle_grid)[0]
            model = build_fixed_time_model(inst, rates, C)
        else:
            model = build_real_time_model(inst, rates)
        _write(out / "model.lp", model.dump())
    if res.status == INFEASIBLE:
        print("infeasible: " + "; ".join(str(d) for d in res.diagnostics), file=sys.stderr)
        return EXIT_INFEASIBLE
    if res.status == ITERATION_LIMIT:
        print("iteration limit reached without an optimal plan", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"{res.status}: objective {res.objective:.6f}, C = {res.cycle_length:g} s")
    return EXIT_OK


def _load_plan(path: str) -> SignalPlan:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "status" in data:
        res = result_from_json(json.dumps(data))
        if res.plan is None:
            raise ConfigError(f"{path}: result holds no plan (status {res.status})")
        return res.plan
    return SignalPlan.from_dict(data)


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    plan = _load_plan(args.plan)
    movements = cfg.intersection.movements
    bad = plan.violations(movements, cfg.intersection.phase)
    if bad:
        raise ConfigError("invalid plan: " + "; ".join(bad))
    scenario = cfg.scenario
    horizon = scenario.horizon_s
    seed = derive_seed(cfg.seed, 0, 3)
    arrivals = {m.movement_id: generate_demand(scenario, m.movement_id, seed, horizon)
                for m in movements}
    result = simulate(plan, arrivals, scenario, movements, horizon)
    out = Path(args.out)
    _write(out / "sim.json", result.to_json())
    s = measure(result)
    summary = {"n_vehicles": s.n_vehicles, "mean_delay_s": s.mean_delay,
               "median_delay_s": s.median_delay, "residual_frequency": s.residual_frequency,
               "spillback": result.spillback, "empty": s.empty}
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.penetration is not None:
        trajs = sample_cvs(result, args.penetration, derive_seed(cfg.seed, 0, 2), scenario)
        _write(out / "trajectories.csv", trajectories_to_csv(trajs))
    print(f"{s.n_vehicles} vehicles, mean delay {s.mean_delay:.3f} s")
    return EXIT_OK


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    report = run_sweep(cfg, args.out, workers=args.workers)
    n_fail = len(report.failed)
    print(f"{len(report.rows)} rows written to {args.out}; {n_fail} failed cells")
    for r in report.failed:
        print(f"  failed: {r.method} p={r.penetration:g} cv={r.fluctuation_cv:g} "
              f"rep={r.replication}: {r.status} {r.error}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("bounds", help="per-cycle arrival bounds and the box set")
    common(p)
    p.add_argument("--trajectories", help="trajectory CSV")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("optimize", help="solve for a signal plan")
    common(p)
    p.add_argument("--box", help="box set JSON")
    p.add_argument("--bounds", help="bounds CSV")
    p.add_argument("--trajectories", help="trajectory CSV supplying CV arrival times")
    p.add_argument("--mode", choices=["fixed_time", "real_time", "fixed-time", "real-time"])
    p.add_argument("--baseline", choices=["cv-ro", "cv-do"], default="cv-ro")
    p.add_argument("--grid", help="comma-separated cycle lengths")
    p.add_argument("--dump-model", action="store_true", help="write model.lp")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="simulate a plan")
    common(p)
    p.add_argument("--plan", required=True, help="plan or solve-result JSON")
    p.add_argument("--penetration", type=float, help="also emit CV trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a penetration and fluctuation sweep")
    common(p)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        if args.out is None:
            args.out = cfg.output_dir
        return args.func(args, cfg)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
