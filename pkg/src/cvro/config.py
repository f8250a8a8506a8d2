"""TOML configuration for intersections, scenarios and sweeps.

Example::

    seed = 7

    [scenario]
    fluctuation_cv = 0.2
    penetration_rate = 0.4
    horizon_cycles = 40

    [[movements]]
    id = "NS"
    demand_vph = 500
    headway = 2.0
    stage = 0

    [[stages]]
    min_green = 10
    movements = ["NS"]

    [phase]
    cycle_min = 40
    cycle_max = 160

Every key except the movement and stage lists has a default; see
:func:`load_config` for the full set.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .sim import MovementDemand, ScenarioConfig
from .timing import (DEFAULT_BIG_M, DEFAULT_EPSILON, Mode, MovementParams, PhaseStructure,
                     SignalPlan, Stage, default_cycle_grid)
from .trajectory import CycleSpec, ObservationParams

METHODS = ("CV-RO", "CV-DO", "TrueRate")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Intersection:
    movements: tuple[MovementParams, ...]
    phase: PhaseStructure

    @property
    def by_id(self) -> dict[str, MovementParams]:
        return {m.movement_id: m for m in self.movements}

    def equal_split_plan(self, C: float) -> SignalPlan:
        """Spare green shared evenly across stages on top of min greens."""
        ig = self.phase.intergreens(self.by_id)
        spare = C - self.phase.min_cycle(self.by_id)
        if spare < 0:
            raise ConfigError(f"cycle {C} s cannot hold the min greens")
        J = len(self.phase.stages)
        ends, t = [], 0.0
        for j, s in enumerate(self.phase.stages):
            t += s.min_green + spare / J
            ends.append(t)
            t += ig[j]
        return SignalPlan.from_stage_ends(C, ends, self.phase, self.by_id)


@dataclass(frozen=True)
class OptimizationSettings:
    mode: Mode = Mode.FIXED_TIME
    alpha: float | None = None
    big_m: float = DEFAULT_BIG_M
    epsilon: float = DEFAULT_EPSILON
    cycle_grid: tuple[float, ...] = ()
    max_pivots: int = 10**6
    red_start: dict[str, float] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    intersection: Intersection
    optimization: OptimizationSettings
    observation: ObservationParams
    lambda_max: float | None = None
    methods: tuple[str, ...] = METHODS
    penetration_rates: tuple[float, ...] = (0.2,)
    fluctuation_cvs: tuple[float, ...] = (0.0,)
    replications: int = 1
    train_cycles: int = 40
    eval_cycles: int = 100
    base_cycle: float = 90.0
    workers: int = 1
    cycles: tuple[CycleSpec, ...] = ()
    cycle_movements: tuple[str, ...] = ()
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.penetration_rates or not self.fluctuation_cvs:
            raise ConfigError("sweep lists must be nonempty")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")

    @property
    def cycle_grid(self) -> list[float]:
        if self.optimization.cycle_grid:
            return list(self.optimization.cycle_grid)
        return default_cycle_grid(self.intersection.phase)

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        return replace(self, seed=seed, scenario=replace(self.scenario, seed=seed))


def _get(table: Mapping[str, Any], key: str, default, kind=float):
    if key not in table:
        return default
    try:
        return kind(table[key])
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {table[key]!r}") from None


def _grid(spec) -> tuple[float, ...]:
    if spec is None:
        return ()
    if isinstance(spec, (int, float)):
        return (float(spec),)
    if isinstance(spec, list):
        return tuple(float(v) for v in spec)
    if isinstance(spec, dict):
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec.get("step", 2))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 9) for i in range(n))
    raise ConfigError(f"bad cycle_grid {spec!r}")


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return _parse(data)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _parse(data: Mapping[str, Any]) -> ExperimentConfig:
    seed = int(data.get("seed", 0))
    sc = data.get("scenario", {})
    mov_tables = data.get("movements")
    if not mov_tables:
        raise ConfigError("config needs at least one [[movements]] entry")
    headway_default = _get(sc, "discharge_headway", 2.0)

    movements = []
    demands = []
    for t in mov_tables:
        mid = str(t["id"])
        movements.append(MovementParams(
            mid,
            headway=_get(t, "headway", headway_default),
            yellow=_get(t, "yellow", 3.0),
            startup_lost=_get(t, "startup_lost", 2.0),
            yellow_lost=_get(t, "yellow_lost", 2.0),
            stage_index=_get(t, "stage", 0, int),
        ))
        demands.append(MovementDemand(mid, _get(t, "demand_vph", 0.0)))

    stage_tables = data.get("stages")
    if stage_tables:
        stages = tuple(Stage(_get(s, "min_green", 10.0), tuple(str(k) for k in s["movements"]))
                       for s in stage_tables)
    else:
        n_st = max(m.stage_index for m in movements) + 1
        stages = tuple(Stage(10.0, tuple(m.movement_id for m in movements if m.stage_index == j))
                       for j in range(n_st))
    ph = data.get("phase", {})
    phase = PhaseStructure(stages, _get(ph, "cycle_min", 40.0), _get(ph, "cycle_max", 160.0))
    for m in movements:
        if phase.stage_of(m.movement_id) != m.stage_index:
            raise ConfigError(f"movement {m.movement_id}: stage index disagrees with [[stages]]")

    scenario = ScenarioConfig(
        movements=tuple(demands),
        fluctuation_cv=_get(sc, "fluctuation_cv", 0.0),
        penetration_rate=_get(sc, "penetration_rate", 1.0),
        horizon_cycles=_get(sc, "horizon_cycles", 40, int),
        seed=seed,
        link_length=_get(sc, "link_length", 500.0),
        free_flow_speed=_get(sc, "free_flow_speed", 15.0),
        jam_spacing=_get(sc, "jam_spacing", 7.0),
        discharge_headway=headway_default,
        demand_interval_s=_get(sc, "demand_interval_s", 90.0),
    )

    op = data.get("optimization", {})
    mode_name = str(op.get("mode", "fixed_time")).replace("-", "_")
    try:
        mode = Mode(mode_name)
    except ValueError:
        raise ConfigError(f"unknown mode {mode_name!r}") from None
    red_start = op.get("red_start")
    opt = OptimizationSettings(
        mode=mode,
        alpha=_get(op, "alpha", None),
        big_m=_get(op, "big_m", DEFAULT_BIG_M),
        epsilon=_get(op, "epsilon", DEFAULT_EPSILON),
        cycle_grid=_grid(op.get("cycle_grid")),
        max_pivots=_get(op, "max_pivots", 10**6, int),
        red_start={str(k): float(v) for k, v in red_start.items()} if red_start else None,
    )

    ob = data.get("observation", {})
    observation = ObservationParams(
        free_flow_speed=scenario.free_flow_speed,
        jam_spacing=scenario.jam_spacing,
        stop_speed=_get(ob, "stop_speed", 2.0),
        min_stop_duration=_get(ob, "min_stop_duration", 4.0),
    )

    ex = data.get("experiment", {})
    base_plan = data.get("base_plan", {})
    cycles, cycle_movs = [], []
    for c in data.get("cycles", []):
        cycles.append(CycleSpec(int(c["cycle_index"]), float(c["red_start"]),
                                float(c["green_start"]), float(c["green_end"]),
                                float(c["cycle_length"]), float(c.get("yellow", 0.0))))
        cycle_movs.append(str(c["movement_id"]))

    return ExperimentConfig(
        scenario=scenario,
        intersection=Intersection(tuple(movements), phase),
        optimization=opt,
        observation=observation,
        lambda_max=_get(data.get("bounds", {}), "lambda_max", None),
        methods=tuple(ex.get("methods", METHODS)),
        penetration_rates=tuple(float(v) for v in ex.get("penetration_rates",
                                                         [scenario.penetration_rate])),
        fluctuation_cvs=tuple(float(v) for v in ex.get("fluctuation_cvs",
                                                       [scenario.fluctuation_cv])),
        replications=_get(ex, "replications", 1, int),
        train_cycles=_get(ex, "train_cycles", 40, int),
        eval_cycles=_get(ex, "eval_cycles", 100, int),
        base_cycle=_get(base_plan, "cycle_length", _get(ex, "base_cycle", 90.0)),
        workers=_get(ex, "workers", 1, int),
        cycles=tuple(cycles),
        cycle_movements=tuple(cycle_movs),
        seed=seed,
        output_dir=str(ex.get("output_dir", "out")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
