"""Robust signal timing: model building, solving and plan evaluation.

Stages run in a single ring. Stage ``j`` shows green on ``[gs_j, ge_j]`` to
all its movements, followed by an intergreen equal to the largest yellow of
its members. The first stage starts at cycle time 0, so a plan is fixed by
the stage green ends and the cycle length.

Delay of a CV with cycle-relative arrival ``t`` (measured from red start)
is bounded below by ``R + L_s - (1 - rate * h) * t`` and the residual queue
of a movement by ``rate * C - G_eff / h``. With every rate fixed at the top
of its interval both bounds are at their largest, which turns the min-max
program into a plain MILP (fixed cycle) or LP (real-time, cycle variable).
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .solver import bnb
from .solver.model import GE, LE, LinearModel
from .trajectory import CycleSpec
from .uncertainty import BoxUncertaintySet

log = logging.getLogger(__name__)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
ITERATION_LIMIT = "IterationLimit"

DEFAULT_BIG_M = 300.0
DEFAULT_EPSILON = 0.001
# offsets this close below the end of yellow count as on it (solver round-off)
WRAP_TOL = 1e-7


class Mode(enum.Enum):
    FIXED_TIME = "fixed_time"
    REAL_TIME = "real_time"


# ------------------------------------------------------------------ types

@dataclass(frozen=True)
class MovementParams:
    movement_id: str
    headway: float
    yellow: float = 3.0
    startup_lost: float = 2.0
    yellow_lost: float = 2.0
    stage_index: int = 0

    def __post_init__(self):
        if self.headway <= 0:
            raise ValueError(f"{self.movement_id}: headway must be positive")
        if not (self.yellow >= self.yellow_lost >= 0):
            raise ValueError(f"{self.movement_id}: need yellow >= yellow_lost >= 0")
        if self.startup_lost < 0:
            raise ValueError(f"{self.movement_id}: startup_lost must be >= 0")


@dataclass(frozen=True)
class Stage:
    min_green: float
    movements: tuple[str, ...]

    def __post_init__(self):
        if self.min_green <= 0:
            raise ValueError("min_green must be positive")
        if not self.movements:
            raise ValueError("a stage needs at least one movement")


@dataclass(frozen=True)
class PhaseStructure:
    stages: tuple[Stage, ...]
    cycle_min: float
    cycle_max: float

    def __post_init__(self):
        if not self.stages:
            raise ValueError("at least one stage required")
        if not (0 < self.cycle_min <= self.cycle_max):
            raise ValueError("need 0 < cycle_min <= cycle_max")
        seen = [k for s in self.stages for k in s.movements]
        if len(seen) != len(set(seen)):
            raise ValueError("a movement appears in more than one stage")

    def stage_of(self, movement_id: str) -> int:
        for j, s in enumerate(self.stages):
            if movement_id in s.movements:
                return j
        raise KeyError(movement_id)

    def intergreens(self, movements: Mapping[str, MovementParams]) -> list[float]:
        return [max(movements[k].yellow for k in s.movements) for s in self.stages]

    def min_cycle(self, movements: Mapping[str, MovementParams]) -> float:
        """Shortest cycle that fits every min green and intergreen."""
        return sum(s.min_green for s in self.stages) + sum(self.intergreens(movements))


@dataclass(frozen=True)
class GreenWindow:
    start: float
    end: float


@dataclass(frozen=True)
class SignalPlan:
    cycle_length: float
    windows: dict[str, GreenWindow]

    def red_time(self, m: MovementParams) -> float:
        w = self.windows[m.movement_id]
        return self.cycle_length - (w.end - w.start + m.yellow)

    def effective_green(self, m: MovementParams) -> float:
        w = self.windows[m.movement_id]
        return w.end - w.start + m.yellow - m.yellow_lost - m.startup_lost

    def red_start(self, m: MovementParams) -> float:
        """Cycle-relative start of red (end of yellow)."""
        return self.windows[m.movement_id].end + m.yellow

    def violations(self, movements: Sequence[MovementParams], phase: PhaseStructure,
                   tol: float = 1e-6) -> list[str]:
        bad = []
        C = self.cycle_length
        by_id = {m.movement_id: m for m in movements}
        for m in movements:
            w = self.windows[m.movement_id]
            if not (-tol <= w.start < w.end <= C + tol):
                bad.append(f"{m.movement_id}: need 0 <= g_s < g_e <= C")
            if self.red_time(m) < -tol:
                bad.append(f"{m.movement_id}: negative red")
            if self.effective_green(m) < -tol:
                bad.append(f"{m.movement_id}: negative effective green")
        ig = phase.intergreens(by_id)
        for j in range(len(phase.stages) - 1):
            a = self.windows[phase.stages[j].movements[0]]
            b = self.windows[phase.stages[j + 1].movements[0]]
            if a.end + ig[j] > b.start + tol:
                bad.append(f"stage {j} overlaps stage {j + 1}")
        for j, s in enumerate(phase.stages):
            w = self.windows[s.movements[0]]
            if w.end - w.start < s.min_green - tol:
                bad.append(f"stage {j} below min green")
        return bad

    def cycle_specs(self, m: MovementParams, n_cycles: int, start_index: int = 0) -> list[CycleSpec]:
        """Cycles of one movement on the global clock (cycle ``i`` holds green ``i``)."""
        C = self.cycle_length
        w = self.windows[m.movement_id]
        out = []
        for i in range(start_index, start_index + n_cycles):
            base = i * C
            out.append(CycleSpec(i, base + w.end + m.yellow - C, base + w.start,
                                 base + w.end, C, m.yellow))
        return out

    def to_dict(self) -> dict:
        return {"C": self.cycle_length,
                "movements": {k: {"g_s": w.start, "g_e": w.end}
                              for k, w in sorted(self.windows.items())}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SignalPlan":
        return cls(float(data["C"]), {k: GreenWindow(float(v["g_s"]), float(v["g_e"]))
                                      for k, v in data["movements"].items()})

    @classmethod
    def from_stage_ends(cls, C: float, green_ends: Sequence[float], phase: PhaseStructure,
                        movements: Mapping[str, MovementParams]) -> "SignalPlan":
        ig = phase.intergreens(movements)
        windows = {}
        start = 0.0
        for j, s in enumerate(phase.stages):
            end = green_ends[j]
            for k in s.movements:
                windows[k] = GreenWindow(start, end)
            start = end + ig[j]
        return cls(C, windows)


def min_green_plan(movements: Sequence[MovementParams], phase: PhaseStructure,
                   C: float | None = None) -> SignalPlan:
    """Every stage at its min green; spare time, if any, goes to the last stage."""
    by_id = {m.movement_id: m for m in movements}
    ig = phase.intergreens(by_id)
    C = phase.min_cycle(by_id) if C is None else C
    ends, t = [], 0.0
    for j, s in enumerate(phase.stages):
        t += s.min_green
        ends.append(t)
        t += ig[j]
    ends[-1] = C - ig[-1]
    return SignalPlan.from_stage_ends(C, ends, phase, by_id)


@dataclass(frozen=True)
class OptimizationInstance:
    mode: Mode
    movements: tuple[MovementParams, ...]
    phase: PhaseStructure
    cv_arrivals: dict[str, tuple[float, ...]]
    alpha: float
    red_start: dict[str, float] | None = None
    big_m: float = DEFAULT_BIG_M
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.mode is Mode.FIXED_TIME and not self.big_m > self.phase.cycle_max:
            raise ValueError("big_m must exceed the longest cycle")
        ids = {m.movement_id for m in self.movements}
        for s in self.phase.stages:
            for k in s.movements:
                if k not in ids:
                    raise ValueError(f"stage lists unknown movement {k}")
        for m in self.movements:
            if self.phase.stage_of(m.movement_id) != m.stage_index:
                raise ValueError(f"{m.movement_id}: stage_index disagrees with phase structure")
        unknown = set(self.cv_arrivals) - ids
        if unknown:
            raise ValueError(f"arrivals for unknown movements {sorted(unknown)}")
        if self.mode is Mode.REAL_TIME:
            if self.red_start is None or not ids <= set(self.red_start):
                raise ValueError("real-time mode needs a red start per movement")

    @property
    def by_id(self) -> dict[str, MovementParams]:
        return {m.movement_id: m for m in self.movements}

    def arrivals(self, movement_id: str) -> tuple[float, ...]:
        return tuple(self.cv_arrivals.get(movement_id, ()))


@dataclass(frozen=True)
class CVRecord:
    movement_id: str
    t0: float
    t: float
    delay: float
    b: int | None


@dataclass
class SolveResult:
    status: str
    objective: float
    plan: SignalPlan | None = None
    cvs: list[CVRecord] = field(default_factory=list)
    residual_queues: dict[str, float] = field(default_factory=dict)
    x: np.ndarray | None = None
    nodes: int = 0
    pivots: int = 0
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def cycle_length(self) -> float | None:
        return self.plan.cycle_length if self.plan else None

    def to_json(self) -> str:
        data = {"status": self.status,
                "objective": self.objective if math.isfinite(self.objective) else None,
                "C": self.cycle_length}
        if self.plan is not None:
            data["movements"] = {
                k: {"g_s": w.start, "g_e": w.end, "Q_k": self.residual_queues.get(k, 0.0)}
                for k, w in sorted(self.plan.windows.items())}
        data["cvs"] = [{"movement_id": r.movement_id, "t_i0": r.t0, "t_i": r.t,
                        "d_i": r.delay, "b_i": r.b} for r in self.cvs]
        if self.diagnostics:
            data["diagnostics"] = self.diagnostics
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------- closed forms

def robust_counterpart(box: BoxUncertaintySet) -> dict[str, float]:
    """Worst-case rate of every movement: the top of its interval."""
    return dict(box.upper())


def cyclic_arrival_terms(t0: float, C: float, g_e: float, Y: float,
                         tol: float = WRAP_TOL) -> tuple[float, int, float]:
    """Arrival offset since red start under a fixed cycle.

    Returns ``(t0 mod C, b, t)`` where ``b`` is 1 when the arrival falls
    before the end of yellow in its cycle and so belongs to the red that
    started one cycle earlier.
    """
    if C <= 0:
        raise ValueError("cycle length must be positive")
    t_mod = t0 - math.floor(t0 / C) * C
    expr = t_mod - g_e - Y
    b = 1 if expr < -tol else 0
    return t_mod, b, expr + b * C


def _cyclic_t(t0: np.ndarray, C: float, g_e: float, Y: float) -> np.ndarray:
    t_mod = t0 - np.floor(t0 / C) * C
    expr = t_mod - g_e - Y
    return np.where(expr < -WRAP_TOL, expr + C, expr)


@dataclass(frozen=True)
class ClosedFormEvaluation:
    objective: float
    delays: dict[str, np.ndarray]
    offsets: dict[str, np.ndarray]
    residual_queues: dict[str, float]


def evaluate_plan_closed_form(plan: SignalPlan, rates: Mapping[str, float],
                              cv_arrivals: Mapping[str, Sequence[float]], alpha: float,
                              movements: Sequence[MovementParams],
                              red_start: Mapping[str, float] | None = None) -> ClosedFormEvaluation:
    """Objective of a fixed plan with every delay and queue at its lower envelope.

    Arrival offsets follow the fixed-cycle wrap unless ``red_start`` is
    given, in which case they are measured from that global red start and
    clipped at zero.
    """
    C = plan.cycle_length
    delays, offsets, queues = {}, {}, {}
    total = 0.0
    for m in movements:
        k = m.movement_id
        lam = rates[k]
        t0 = np.asarray(cv_arrivals.get(k, ()), dtype=float)
        if red_start is not None:
            t = np.maximum(0.0, t0 - red_start[k])
        else:
            t = _cyclic_t(t0, C, plan.windows[k].end, m.yellow)
        d = np.maximum(0.0, plan.red_time(m) + m.startup_lost - (1 - lam * m.headway) * t)
        q = max(0.0, lam * C - plan.effective_green(m) / m.headway)
        delays[k], offsets[k], queues[k] = d, t, q
        total += float(d.sum()) + alpha * q
    return ClosedFormEvaluation(total, delays, offsets, queues)


# ---------------------------------------------------------- model build

class _Affine:
    """Sparse affine expression ``sum(coef * var) + const``."""

    __slots__ = ("coefs", "const")

    def __init__(self, coefs: Mapping[int, float] | None = None, const: float = 0.0):
        self.coefs = dict(coefs or {})
        self.const = float(const)

    def __add__(self, other):
        if not isinstance(other, _Affine):
            return _Affine(self.coefs, self.const + other)
        out = dict(self.coefs)
        for j, a in other.coefs.items():
            out[j] = out.get(j, 0.0) + a
        return _Affine(out, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return _Affine({j: -a for j, a in self.coefs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, _Affine) else -other)

    def __mul__(self, s: float):
        return _Affine({j: a * s for j, a in self.coefs.items()}, self.const * s)

    __rmul__ = __mul__

    @property
    def is_constant(self) -> bool:
        return not any(self.coefs.values())

    def value(self, x) -> float:
        return self.const + sum(a * x[j] for j, a in self.coefs.items())


@dataclass
class _CVSlot:
    movement_id: str
    t0: float
    t_mod: float       # fixed time: t0 mod C; real time: clipped offset
    d: int
    b: int | None      # binary variable index
    b_fixed: int | None


@dataclass
class TimingModel(LinearModel):
    """Linear model plus the map from variables back to timing quantities."""

    mode: Mode = Mode.FIXED_TIME
    instance: OptimizationInstance | None = None
    rates: dict[str, float] = field(default_factory=dict)
    cycle: _Affine | None = None
    green_ends: list[_Affine] = field(default_factory=list)
    queue_vars: dict[str, int] = field(default_factory=dict)
    slots: list[_CVSlot] = field(default_factory=list)
    infeasible_reason: str | None = None


def _setup(inst: OptimizationInstance, rates: Mapping[str, float], mode: Mode,
           name: str) -> TimingModel:
    missing = [m.movement_id for m in inst.movements if m.movement_id not in rates]
    if missing:
        raise ValueError(f"no rate for movements {missing}")
    model = TimingModel(name=name, mode=mode, instance=inst,
                        rates={m.movement_id: float(rates[m.movement_id]) for m in inst.movements})
    return model


def _stage_rows(model: TimingModel, inst: OptimizationInstance, C: _Affine, C_hi: float):
    by_id = inst.by_id
    stages = inst.phase.stages
    ig = inst.phase.intergreens(by_id)
    J = len(stages)
    ends = []
    for j in range(J - 1):
        ends.append(_Affine({model.add_var(f"ge_{j}", 0.0, C_hi): 1.0}))
    ends.append(C - ig[-1])
    starts = [_Affine()] + [ends[j] + ig[j] for j in range(J - 1)]
    for j, s in enumerate(stages):
        _row(model, ends[j] - starts[j], GE, s.min_green, f"min_green_{j}")
    model.cycle = C
    model.green_ends = ends
    return starts, ends


def _row(model: LinearModel, expr: _Affine, sense: str, rhs: float, name: str):
    model.add_constraint(expr.coefs, sense, rhs - expr.const, name)


def _movement_rows(model: TimingModel, inst: OptimizationInstance, starts, ends, C: _Affine):
    """Effective-green sign and residual-queue rows; returns red-time expressions."""
    reds = {}
    for m in inst.movements:
        k = m.movement_id
        j = m.stage_index
        green = ends[j] - starts[j]
        eff = green + (m.yellow - m.yellow_lost - m.startup_lost)
        _row(model, eff, GE, 0.0, f"eff_green_{k}")
        q = model.add_var(f"Q_{k}")
        model.queue_vars[k] = q
        lam = model.rates[k]
        # Q >= lam * C - G_eff / h
        _row(model, _Affine({q: 1.0}) + eff * (1.0 / m.headway) - C * lam, GE, 0.0, f"queue_{k}")
        reds[k] = C - green - m.yellow
    return reds


def build_fixed_time_model(inst: OptimizationInstance, rates: Mapping[str, float],
                           C: float) -> TimingModel:
    """MILP for a fixed cycle length ``C`` with one binary per CV to wrap arrivals."""
    if inst.mode is not Mode.FIXED_TIME:
        raise ValueError("instance is not in fixed-time mode")
    if not C < inst.big_m:
        raise ValueError("cycle length must be below big_m")
    model = _setup(inst, rates, Mode.FIXED_TIME, f"fixed_time_C{_tag(C)}")
    by_id = inst.by_id
    if inst.phase.min_cycle(by_id) > C + 1e-9:
        model.infeasible_reason = (f"min greens and intergreens need "
                                   f"{inst.phase.min_cycle(by_id):g} s > C = {C:g} s")
    Caff = _Affine(const=C)
    starts, ends = _stage_rows(model, inst, Caff, C)
    reds = _movement_rows(model, inst, starts, ends, Caff)
    M, eps = inst.big_m, inst.epsilon

    objective = {q: inst.alpha for q in model.queue_vars.values()}
    for m in inst.movements:
        k = m.movement_id
        ge = ends[m.stage_index]
        slope = 1.0 - model.rates[k] * m.headway
        for i, t0 in enumerate(inst.arrivals(k)):
            t_mod = t0 - math.floor(t0 / C) * C
            d = model.add_var(f"d_{k}_{i}")
            objective[d] = 1.0
            base = -ge + (t_mod - m.yellow)          # t_mod - g_e - Y
            if ge.is_constant:
                b_fixed = 1 if base.const < 0 else 0
                t_expr = base + b_fixed * C
                b = None
            else:
                b = model.add_var(f"b_{k}_{i}", binary=True)
                b_fixed = None
                _row(model, base + _Affine({b: M}), GE, 0.0, f"wrap_lo_{k}_{i}")
                _row(model, base + _Affine({b: M}) - M + eps, LE, 0.0, f"wrap_hi_{k}_{i}")
                t_expr = base + _Affine({b: C})
            # d >= R + L_s - slope * t
            _row(model, _Affine({d: 1.0}) - reds[k] + t_expr * slope, GE, m.startup_lost,
                 f"delay_{k}_{i}")
            model.slots.append(_CVSlot(k, t0, t_mod, d, b, b_fixed))
    model.set_objective(objective)
    return model


def build_real_time_model(inst: OptimizationInstance, rates: Mapping[str, float]) -> TimingModel:
    """LP with the cycle length as a variable and arrival offsets from known red starts."""
    if inst.mode is not Mode.REAL_TIME:
        raise ValueError("instance is not in real-time mode")
    model = _setup(inst, rates, Mode.REAL_TIME, "real_time")
    by_id = inst.by_id
    lo, hi = inst.phase.cycle_min, inst.phase.cycle_max
    if inst.phase.min_cycle(by_id) > hi + 1e-9:
        model.infeasible_reason = (f"min greens and intergreens need "
                                   f"{inst.phase.min_cycle(by_id):g} s > C_max = {hi:g} s")
    Caff = _Affine({model.add_var("C", lo, hi): 1.0})
    starts, ends = _stage_rows(model, inst, Caff, hi)
    reds = _movement_rows(model, inst, starts, ends, Caff)

    objective = {q: inst.alpha for q in model.queue_vars.values()}
    clamped = 0
    for m in inst.movements:
        k = m.movement_id
        slope = 1.0 - model.rates[k] * m.headway
        for i, t0 in enumerate(inst.arrivals(k)):
            raw = t0 - inst.red_start[k]
            if raw < 0:
                clamped += 1
            t = max(0.0, raw)
            d = model.add_var(f"d_{k}_{i}")
            objective[d] = 1.0
            _row(model, _Affine({d: 1.0}) - reds[k], GE, m.startup_lost - slope * t,
                 f"delay_{k}_{i}")
            model.slots.append(_CVSlot(k, t0, t, d, None, None))
    if clamped:
        log.info("%d CV arrival offsets before red start clipped to 0", clamped)
    model.set_objective(objective)
    return model


def _tag(C: float) -> str:
    return f"{C:g}".replace(".", "p")


# ---------------------------------------------------------------- solve

def solve(model: LinearModel, *, max_pivots: int = 10**6, incumbent=None,
          cutoff: float = math.inf) -> SolveResult:
    """Solve a model; timing models also get their plan and per-CV records."""
    if isinstance(model, TimingModel) and model.infeasible_reason:
        return SolveResult(INFEASIBLE, math.inf,
                           diagnostics=[{"reason": model.infeasible_reason}])
    sol = bnb.solve(model, max_pivots=max_pivots, incumbent=incumbent, cutoff=cutoff)
    status = {bnb.OPTIMAL: OPTIMAL, bnb.ITERATION_LIMIT: ITERATION_LIMIT}.get(sol.status, INFEASIBLE)
    if status == ITERATION_LIMIT and sol.x is None:
        return SolveResult(status, math.inf, nodes=sol.nodes, pivots=sol.pivots)
    if status == INFEASIBLE:
        reason = "no solution below cutoff" if sol.status == bnb.CUTOFF else sol.status
        return SolveResult(INFEASIBLE, math.inf, nodes=sol.nodes, pivots=sol.pivots,
                           diagnostics=[{"reason": reason}])
    res = SolveResult(status, sol.objective, x=sol.x, nodes=sol.nodes, pivots=sol.pivots)
    if isinstance(model, TimingModel):
        _extract(model, res)
    return res


def _extract(model: TimingModel, res: SolveResult) -> None:
    inst = model.instance
    x = res.x
    C = model.cycle.value(x)
    ends = [e.value(x) for e in model.green_ends]
    res.plan = SignalPlan.from_stage_ends(C, ends, inst.phase, inst.by_id)
    res.residual_queues = {k: float(x[j]) for k, j in model.queue_vars.items()}
    by_id = inst.by_id
    for s in model.slots:
        m = by_id[s.movement_id]
        if model.mode is Mode.REAL_TIME:
            res.cvs.append(CVRecord(s.movement_id, s.t0, s.t_mod, float(x[s.d]), None))
            continue
        b = s.b_fixed if s.b is None else int(round(x[s.b]))
        t = s.t_mod - ends[m.stage_index] - m.yellow + b * C
        res.cvs.append(CVRecord(s.movement_id, s.t0, t, float(x[s.d]), b))


def _assemble(model: TimingModel, C: float, ends: Sequence[float]) -> np.ndarray | None:
    """Full variable vector for a given plan, every slack at its envelope."""
    inst = model.instance
    x = np.zeros(model.n_vars)
    if model.mode is Mode.REAL_TIME:
        x[next(iter(model.cycle.coefs))] = C
    for j, e in enumerate(model.green_ends[:-1]):
        x[next(iter(e.coefs))] = ends[j]
    plan = SignalPlan.from_stage_ends(C, ends, inst.phase, inst.by_id)
    by_id = inst.by_id
    for k, q in model.queue_vars.items():
        m = by_id[k]
        x[q] = max(0.0, model.rates[k] * C - plan.effective_green(m) / m.headway)
    for s in model.slots:
        m = by_id[s.movement_id]
        if model.mode is Mode.REAL_TIME:
            t = s.t_mod
        else:
            expr = s.t_mod - ends[m.stage_index] - m.yellow
            if -inst.epsilon < expr < 0:
                return None
            b = 1 if expr < 0 else 0
            if s.b is not None:
                x[s.b] = b
            t = expr + b * C
        slope = 1.0 - model.rates[s.movement_id] * m.headway
        x[s.d] = max(0.0, plan.red_time(m) + m.startup_lost - slope * t)
    return x


def _heuristic_ends(inst: OptimizationInstance, rates: Mapping[str, float], C: float,
                    step: float = 1.0) -> list[float] | None:
    """Good stage split for a fixed cycle by coordinate search on the closed form."""
    by_id = inst.by_id
    phase = inst.phase
    ig = phase.intergreens(by_id)
    mins = [s.min_green for s in phase.stages]
    J = len(mins)
    spare = C - sum(mins) - sum(ig)
    if spare < 0:
        return None
    if J == 1:
        return [C - ig[0]]

    def ends_of(greens):
        out, t = [], 0.0
        for j in range(J):
            t += greens[j]
            out.append(t)
            t += ig[j]
        return out

    def cost(greens):
        plan = SignalPlan.from_stage_ends(C, ends_of(greens), phase, by_id)
        return evaluate_plan_closed_form(plan, rates, inst.cv_arrivals, inst.alpha,
                                         inst.movements).objective

    # start from green shares proportional to the critical flow ratio
    crit = [max(rates[k] * by_id[k].headway for k in s.movements) for s in phase.stages]
    total = sum(crit)
    share = [c / total if total > 0 else 1.0 / J for c in crit]
    greens = [mins[j] + spare * share[j] for j in range(J)]
    best = cost(greens)
    for _ in range(4):
        improved = False
        for j in range(J - 1):
            # trade green between stage j and the last stage
            pool = greens[j] + greens[-1]
            cand = np.arange(mins[j], pool - mins[-1] + 1e-9, step)
            cand = np.append(cand, pool - mins[-1])
            for g in cand:
                trial = list(greens)
                trial[j], trial[-1] = float(g), float(pool - g)
                val = cost(trial)
                if val < best - 1e-12:
                    best, greens, improved = val, trial, True
        if not improved:
            break
    return ends_of(greens)


def _solve_fixed_candidate(inst, rates, C, cutoff, max_pivots):
    model = build_fixed_time_model(inst, rates, C)
    if model.infeasible_reason:
        return model, SolveResult(INFEASIBLE, math.inf,
                                  diagnostics=[{"reason": model.infeasible_reason}])
    incumbent = None
    ends = _heuristic_ends(inst, rates, C)
    if ends is not None:
        incumbent = _assemble(model, C, ends)
    return model, solve(model, max_pivots=max_pivots, incumbent=incumbent, cutoff=cutoff)


def default_cycle_grid(phase: PhaseStructure, lo: float = 40.0, hi: float = 160.0,
                       step: float = 2.0) -> list[float]:
    lo, hi = max(lo, phase.cycle_min), min(hi, phase.cycle_max)
    grid = list(np.round(np.arange(lo, hi + 1e-9, step), 9))
    return [float(c) for c in grid]


def optimize_fixed_time(inst: OptimizationInstance, box: BoxUncertaintySet | None = None,
                        cycle_grid: Iterable[float] | None = None, *,
                        rates: Mapping[str, float] | None = None,
                        max_pivots: int = 10**6) -> SolveResult:
    """Best fixed-time plan over a grid of cycle lengths; ties go to the shortest cycle."""
    if rates is None:
        if box is None:
            raise ValueError("need a box set or explicit rates")
        rates = robust_counterpart(box)
    grid = sorted(set(float(c) for c in (cycle_grid if cycle_grid is not None
                                          else default_cycle_grid(inst.phase))))
    if not grid:
        raise ValueError("empty cycle grid")
    for C in grid:
        if not (inst.phase.cycle_min - 1e-9 <= C <= inst.phase.cycle_max + 1e-9):
            raise ValueError(f"grid value {C} outside [C_min, C_max]")

    best: SolveResult | None = None
    diagnostics = []
    nodes = pivots = 0
    for C in grid:
        cutoff = best.objective if best is not None else math.inf
        _, res = _solve_fixed_candidate(inst, rates, C, cutoff, max_pivots)
        nodes += res.nodes
        pivots += res.pivots
        entry = {"C": C, "status": res.status,
                 "objective": res.objective if math.isfinite(res.objective) else None}
        if res.diagnostics:
            entry["reason"] = res.diagnostics[0].get("reason")
        diagnostics.append(entry)
        if res.status == OPTIMAL and (best is None or res.objective < best.objective):
            best = res
    if best is None:
        limited = any(d["status"] == ITERATION_LIMIT for d in diagnostics)
        return SolveResult(ITERATION_LIMIT if limited else INFEASIBLE, math.inf,
                           nodes=nodes, pivots=pivots, diagnostics=diagnostics)
    best.diagnostics = diagnostics
    best.nodes, best.pivots = nodes, pivots
    return best


def optimize_real_time(inst: OptimizationInstance, box: BoxUncertaintySet | None = None, *,
                       rates: Mapping[str, float] | None = None,
                       max_pivots: int = 10**6) -> SolveResult:
    """Single LP at the worst-case rates; among optimal plans the shortest cycle wins."""
    if rates is None:
        if box is None:
            raise ValueError("need a box set or explicit rates")
        rates = robust_counterpart(box)
    model = build_real_time_model(inst, rates)
    res = solve(model, max_pivots=max_pivots)
    if not res.optimal:
        return res
    # second pass: keep the objective, shorten the cycle
    tight = TimingModel(**{f: getattr(model, f) for f in model.__dataclass_fields__})
    tight.constraints = list(model.constraints)
    cap = res.objective + 1e-9 * max(1.0, abs(res.objective))
    tight.add_constraint(dict(model.objective), LE, cap - model.objective_constant, "objective_cap")
    c_idx = next(iter(model.cycle.coefs))
    tight.objective = {c_idx: 1.0}
    second = bnb.solve(tight, max_pivots=max_pivots)
    if second.status == bnb.OPTIMAL:
        final = SolveResult(OPTIMAL, model.objective_value(second.x), x=second.x,
                            nodes=res.nodes + second.nodes, pivots=res.pivots + second.pivots)
        _extract(model, final)
        return final
    return res


def deterministic_baseline(inst: OptimizationInstance, point_rates: Mapping[str, float],
                           cycle_grid: Iterable[float] | None = None, **kw) -> SolveResult:
    """Same pipeline fed point rates instead of interval tops."""
    if inst.mode is Mode.FIXED_TIME:
        return optimize_fixed_time(inst, cycle_grid=cycle_grid, rates=point_rates, **kw)
    return optimize_real_time(inst, rates=point_rates, **kw)


def result_from_json(text: str) -> SolveResult:
    data = json.loads(text)
    plan = None
    queues = {}
    if data.get("movements"):
        plan = SignalPlan.from_dict(data)
        queues = {k: float(v.get("Q_k", 0.0)) for k, v in data["movements"].items()}
    cvs = [CVRecord(r["movement_id"], r["t_i0"], r["t_i"], r["d_i"], r["b_i"])
           for r in data.get("cvs", [])]
    obj = data.get("objective")
    return SolveResult(data["status"], math.inf if obj is None else float(obj), plan, cvs,
                       queues, diagnostics=data.get("diagnostics", []))
