import logging

import numpy as np
import pytest

from cvro.sim import MovementDemand, ScenarioConfig
from cvro.timing import MovementParams, PhaseStructure, SignalPlan, Stage
from cvro.trajectory import CVTrajectory, TrajectoryPoint


def two_stage(min_green=10.0, cycle_min=40.0, cycle_max=160.0, headway=2.0):
    movements = (
        MovementParams("NS", headway, yellow=3.0, startup_lost=2.0, yellow_lost=2.0, stage_index=0),
        MovementParams("EW", headway, yellow=3.0, startup_lost=2.0, yellow_lost=2.0, stage_index=1),
    )
    phase = PhaseStructure((Stage(min_green, ("NS",)), Stage(min_green, ("EW",))),
                           cycle_min, cycle_max)
    return movements, phase


def by_id(movements):
    return {m.movement_id: m for m in movements}


def path_trajectory(vid, mid, breakpoints, step=1.0, t_end=None):
    """Sample a piecewise-linear (time, distance) path every ``step`` seconds."""
    bt = np.array([b[0] for b in breakpoints], dtype=float)
    bd = np.array([b[1] for b in breakpoints], dtype=float)
    t_end = bt[-1] if t_end is None else t_end
    ts = np.arange(bt[0], t_end + 1e-9, step)
    ds = np.interp(ts, bt, bd)
    seg = np.clip(np.searchsorted(bt, ts, side="right") - 1, 0, len(bt) - 2)
    speed = (bd[seg] - bd[seg + 1]) / (bt[seg + 1] - bt[seg])
    pts = tuple(TrajectoryPoint(float(t), float(d), float(max(v, 0.0)))
                for t, d, v in zip(ts, ds, speed))
    return CVTrajectory(vid, mid, pts)


@pytest.fixture
def intersection():
    return two_stage()


@pytest.fixture
def plan90(intersection):
    movements, phase = intersection
    return SignalPlan.from_stage_ends(90.0, [42.0, 87.0], phase, by_id(movements))


@pytest.fixture
def scenario():
    return ScenarioConfig((MovementDemand("NS", 500.0), MovementDemand("EW", 350.0)),
                          fluctuation_cv=0.3, horizon_cycles=60, seed=3)


@pytest.fixture(autouse=True)
def _quiet_fallback_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="cvro")


@pytest.fixture(autouse=True)
def _every_optimal_solve_is_tight(monkeypatch):
    """Check each optimal timing solve in the suite against the closed-form evaluator."""
    from cvro import timing
    from oracles import tightness_violations

    original = timing._extract
    problems = []

    def checked(model, res):
        original(model, res)
        if res.status == timing.OPTIMAL:
            problems.extend(tightness_violations(model.instance, model.rates, res))

    monkeypatch.setattr(timing, "_extract", checked)
    yield
    assert not problems, problems[:5]
