"""Single-intersection point-queue simulator with CV trajectory emission.

Each movement is an independent FIFO server. Vehicles reach the stopline at
their unimpeded (virtual) arrival time, wait in a vertical queue and
discharge one per headway inside the effective green, which starts
``startup_lost`` after green onset and ends ``yellow_lost`` before the end
of yellow. All times live on a 0.1 s tick grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .timing import MovementParams, SignalPlan
from .trajectory import CVTrajectory, TrajectoryPoint

TICK = 0.1


@dataclass(frozen=True)
class MovementDemand:
    movement_id: str
    demand_vph: float

    def __post_init__(self):
        if self.demand_vph < 0:
            raise ValueError(f"{self.movement_id}: demand_vph must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    movements: tuple[MovementDemand, ...]
    fluctuation_cv: float = 0.0
    penetration_rate: float = 1.0
    horizon_cycles: int = 40
    seed: int = 0
    link_length: float = 500.0
    free_flow_speed: float = 15.0
    jam_spacing: float = 7.0
    discharge_headway: float = 2.0
    demand_interval_s: float = 90.0

    def __post_init__(self):
        if self.fluctuation_cv < 0:
            raise ValueError("fluctuation_cv must be >= 0")
        if not 0 <= self.penetration_rate <= 1:
            raise ValueError("penetration_rate must lie in [0, 1]")
        if self.horizon_cycles < 1:
            raise ValueError("horizon_cycles must be >= 1")
        if min(self.link_length, self.free_flow_speed, self.jam_spacing,
               self.discharge_headway, self.demand_interval_s) <= 0:
            raise ValueError("lengths, speeds, headway and demand interval must be positive")

    @property
    def horizon_s(self) -> float:
        return self.horizon_cycles * self.demand_interval_s

    def demand(self, movement_id: str) -> MovementDemand:
        for m in self.movements:
            if m.movement_id == movement_id:
                return m
        raise KeyError(movement_id)

    def stream(self, movement_id: str) -> int:
        return [m.movement_id for m in self.movements].index(movement_id)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *stream])


def generate_demand(config: ScenarioConfig, movement: str, seed: int,
                    horizon_s: float | None = None) -> np.ndarray:
    """Virtual stopline arrival times on the tick grid, sorted.

    The rate is redrawn every ``demand_interval_s`` from a Gamma law with
    the configured mean and coefficient of variation; arrivals inside an
    interval are Poisson at that rate.
    """
    horizon_s = config.horizon_s if horizon_s is None else horizon_s
    mean = config.demand(movement).demand_vph / 3600.0
    if mean <= 0 or horizon_s <= 0:
        return np.zeros(0)
    rng = _rng(seed, 1, config.stream(movement))
    step = config.demand_interval_s
    n_int = int(math.ceil(horizon_s / step))
    cv = config.fluctuation_cv
    if cv > 0:
        rates = rng.gamma(1.0 / cv**2, mean * cv**2, size=n_int)
    else:
        rates = np.full(n_int, mean)
    times = []
    for i, lam in enumerate(rates):
        lo = i * step
        width = min(step, horizon_s - lo)
        n = rng.poisson(lam * width)
        times.append(lo + rng.uniform(0.0, width, size=n))
    t = np.sort(np.concatenate(times)) if times else np.zeros(0)
    ticks = np.floor(t / TICK + 1e-9)
    return ticks * TICK


def interval_rates(arrivals: np.ndarray, horizon_s: float) -> float:
    """Realized mean rate over a horizon."""
    return len(arrivals) / horizon_s if horizon_s > 0 else 0.0


@dataclass(frozen=True)
class CycleRecord:
    movement_id: str
    cycle_index: int
    red_start: float
    arrivals: int
    carry_out: int

    @property
    def residual(self) -> bool:
        return self.carry_out > 0


@dataclass
class MovementTrace:
    movement_id: str
    arrival: np.ndarray
    crossing: np.ndarray
    window: np.ndarray          # effective-green window index of each crossing

    @property
    def delay(self) -> np.ndarray:
        return self.crossing - self.arrival


@dataclass
class SimResult:
    plan: SignalPlan
    horizon_s: float
    traces: dict[str, MovementTrace]
    cycles: list[CycleRecord]
    residual_at_horizon: dict[str, int]
    spillback: bool
    params: dict[str, MovementParams] = field(repr=False, default_factory=dict)

    def all_delays(self) -> np.ndarray:
        parts = [tr.delay for tr in self.traces.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def n_vehicles(self) -> int:
        return sum(len(tr.arrival) for tr in self.traces.values())

    @property
    def average_delay(self) -> float:
        d = self.all_delays()
        return float(d.mean()) if d.size else 0.0

    def to_json(self) -> str:
        data = {
            "horizon_s": self.horizon_s,
            "spillback": self.spillback,
            "average_delay_s": self.average_delay,
            "residual_at_horizon": dict(sorted(self.residual_at_horizon.items())),
            "cycles": [{"movement_id": c.movement_id, "cycle_index": c.cycle_index,
                        "red_start": round(c.red_start, 6), "arrivals": c.arrivals,
                        "carry_out": c.carry_out} for c in self.cycles],
            "vehicles": [{"movement_id": k, "arrival": round(float(a), 3),
                          "crossing": round(float(c), 3), "delay": round(float(c - a), 3)}
                         for k, tr in sorted(self.traces.items())
                         for a, c in zip(tr.arrival, tr.crossing)],
        }
        return json.dumps(data, indent=2) + "\n"


class _Windows:
    """Effective-green windows of one movement, in ticks."""

    def __init__(self, plan: SignalPlan, m: MovementParams):
        w = plan.windows[m.movement_id]
        self.C = plan.cycle_length
        self.open = w.start + m.startup_lost
        self.close = w.end + m.yellow - m.yellow_lost
        if self.close - self.open < TICK:
            raise ValueError(f"{m.movement_id}: effective green shorter than one tick")

    def bounds(self, k: int) -> tuple[int, int]:
        s = math.ceil((k * self.C + self.open) / TICK - 1e-6)
        e = math.ceil((k * self.C + self.close) / TICK - 1e-6)
        return s, e

    def index_at(self, tick: int) -> int:
        return math.floor((tick * TICK - self.open) / self.C + 1e-9)


def _serve(arrival_ticks: np.ndarray, win: _Windows, headway_ticks: int):
    n = len(arrival_ticks)
    cross = np.empty(n, dtype=np.int64)
    window = np.empty(n, dtype=np.int64)
    prev = None
    for i in range(n):
        t = int(arrival_ticks[i])
        if prev is not None:
            t = max(t, prev + headway_ticks)
        k = win.index_at(t)
        while True:
            s, e = win.bounds(k)
            if t < s:
                t = s
            if t < e:
                break
            k += 1
        cross[i] = t
        window[i] = k
        prev = t
    return cross, window


def simulate(plan: SignalPlan, arrivals: Mapping[str, np.ndarray], config: ScenarioConfig,
             movements: Sequence[MovementParams], horizon_s: float | None = None) -> SimResult:
    """Serve every arrival; service continues past the horizon until the queue drains."""
    horizon_s = config.horizon_s if horizon_s is None else horizon_s
    traces, cycles, residual = {}, [], {}
    storage = config.link_length / config.jam_spacing
    spill = False
    params = {m.movement_id: m for m in movements}
    for m in movements:
        k = m.movement_id
        a = np.sort(np.asarray(arrivals.get(k, np.zeros(0)), dtype=float))
        a_ticks = np.round(a / TICK).astype(np.int64)
        win = _Windows(plan, m)
        h_ticks = max(1, int(round(m.headway / TICK)))
        c_ticks, window = _serve(a_ticks, win, h_ticks)
        arr = a_ticks * TICK
        crs = c_ticks * TICK
        traces[k] = MovementTrace(k, arr, crs, window)
        residual[k] = int(np.sum((arr < horizon_s) & (crs >= horizon_s)))
        if len(a_ticks):
            # queue length seen by each arrival
            ahead = np.arange(len(a_ticks)) - np.searchsorted(c_ticks, a_ticks, side="right")
            if ahead.max(initial=0) + 1 > storage:
                spill = True
        n_cycles = int(math.ceil(horizon_s / plan.cycle_length)) + 1
        for spec in plan.cycle_specs(m, n_cycles):
            lo, hi = spec.red_start, spec.end
            if hi <= 0:
                continue
            n_arr = int(np.sum((arr >= lo - 1e-9) & (arr < hi - 1e-9)))
            carry = int(np.sum((arr < hi - 1e-9) & (crs >= hi - 1e-9)))
            cycles.append(CycleRecord(k, spec.cycle_index, spec.red_start, n_arr, carry))
    return SimResult(plan, horizon_s, traces, cycles, residual, spill, params)


# ----------------------------------------------------------- trajectories

def _stop_schedule(i: int, trace: MovementTrace, win: _Windows, jam: float, vf: float):
    """Stops ``(position, start, end)`` of vehicle ``i``; positions follow service rank.

    A vehicle waiting for window ``w`` stands behind every earlier vehicle
    served from the start of ``w`` onward; it moves up when a window closes.
    """
    a, c = trace.arrival[i], trace.crossing[i]
    if c - a < 1e-9:
        return []
    cross_t = trace.crossing[:i]
    w_end = int(trace.window[i])
    first_w = win.index_at(int(round(a / TICK)))
    s_first, e_first = win.bounds(first_w)
    if a >= e_first * TICK:
        first_w += 1
    moves = []
    for w in range(first_w, w_end + 1):
        s, _ = win.bounds(w)
        ahead = int(np.sum(cross_t >= s * TICK - 1e-9))
        moves.append((w, 1 + ahead))
    stops = []
    pos0 = moves[0][1] * jam
    start = a - pos0 / vf
    for (w, p), nxt in zip(moves, moves[1:] + [None]):
        pos = p * jam
        if nxt is None:
            end = c - pos / vf
        else:
            end = win.bounds(w)[1] * TICK
        stops.append([pos, start, end])
        if nxt is not None:
            start = end + (pos - nxt[1] * jam) / vf
    # drop stops that collapse; keep the path continuous
    out = []
    for pos, s, e in stops:
        if e - s > 1e-9:
            out.append((pos, s, e))
    return out


def _trajectory(vid: str, k: int, i: int, trace: MovementTrace, win: _Windows,
                config: ScenarioConfig) -> CVTrajectory:
    vf, L = config.free_flow_speed, config.link_length
    a, c = float(trace.arrival[i]), float(trace.crossing[i])
    stops = _stop_schedule(i, trace, win, config.jam_spacing, vf)
    bt = [a - L / vf]
    bd = [L]
    for pos, s, e in stops:
        if s <= bt[-1]:
            continue
        bt += [s, e]
        bd += [pos, pos]
    if bt[-1] < c:
        bt.append(c)
        bd.append(0.0)
    past = math.floor(c) + 1.0
    bt.append(past)
    bd.append(-vf * (past - c))
    bt, bd = np.array(bt), np.array(bd)
    samples = np.arange(math.ceil(bt[0]), math.floor(c) + 1, dtype=float)
    ts = np.unique(np.round(np.concatenate([samples, [c, past]]), 3))
    ds = np.interp(ts, bt, bd)
    seg = np.clip(np.searchsorted(bt, ts, side="right") - 1, 0, len(bt) - 2)
    moving = bd[seg] - bd[seg + 1] > 1e-9
    speeds = np.where(moving, vf, 0.0)
    pts = tuple(TrajectoryPoint(float(t), round(float(d), 3), float(v))
                for t, d, v in zip(ts, ds, speeds))
    return CVTrajectory(vid, k, pts)


def sample_cvs(result: SimResult, penetration: float, seed: int,
               config: ScenarioConfig) -> list[CVTrajectory]:
    """Mark each vehicle as connected with probability ``penetration``; emit 1 Hz traces."""
    if not 0 <= penetration <= 1:
        raise ValueError("penetration must lie in [0, 1]")
    out = []
    for k in sorted(result.traces):
        tr = result.traces[k]
        idx = config.stream(k) if any(m.movement_id == k for m in config.movements) else 0
        rng = _rng(seed, 2, idx)
        mark = rng.random(len(tr.arrival)) < penetration
        win = _Windows(result.plan, result.params[k])
        for i in np.flatnonzero(mark):
            out.append(_trajectory(f"{k}-{i}", k, int(i), tr, win, config))
    return out


@dataclass(frozen=True)
class Summary:
    n_vehicles: int
    mean_delay: float
    median_delay: float
    residual_frequency: float
    cycle_counts: dict[str, list[int]]
    empty: bool = False


def measure(result: SimResult | Sequence[SimResult]) -> Summary:
    """Delay and residual-queue statistics; several results are pooled vehicle by vehicle."""
    runs = [result] if isinstance(result, SimResult) else list(result)
    parts = [r.all_delays() for r in runs]
    d = np.concatenate(parts) if parts else np.zeros(0)
    cycles = [c for r in runs for c in r.cycles]
    counts: dict[str, list[int]] = {}
    for c in cycles:
        counts.setdefault(c.movement_id, []).append(c.arrivals)
    if d.size == 0:
        return Summary(0, 0.0, 0.0, 0.0, counts, empty=True)
    freq = float(np.mean([c.residual for c in cycles])) if cycles else 0.0
    return Summary(int(d.size), float(d.mean()), float(np.median(d)), freq, counts)
