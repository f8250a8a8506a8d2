"""Per-cycle arrival-rate bounds and their aggregation into a box set."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

from .trajectory import CycleObservation

log = logging.getLogger(__name__)


class DegenerateCycleError(ValueError):
    """A cycle whose observation makes a bound formula divide by zero or go negative."""


class UninformativeCycleError(ValueError):
    """A cycle without a queued CV; it carries no first-arrivals information."""


@dataclass(frozen=True)
class BoundsParams:
    lambda_max: float
    h_s: float

    def __post_init__(self):
        if not (self.lambda_max > 0 and self.h_s > 0):
            raise ValueError("lambda_max and h_s must be positive")

    @classmethod
    def from_headway(cls, h_s: float, lambda_max: float | None = None) -> "BoundsParams":
        """Default maximum rate is the saturation rate ``1 / h_s``."""
        return cls(lambda_max if lambda_max is not None else 1.0 / h_s, h_s)


@dataclass(frozen=True)
class ArrivalBounds:
    movement_id: str
    cycle_index: int
    lower: float
    upper: float
    valid: bool
    reason: str = ""


@dataclass(frozen=True)
class MovementBox:
    l_hat: float
    u_hat: float
    support_count: int
    fallback: bool = False

    def __post_init__(self):
        if not (0.0 <= self.l_hat <= self.u_hat):
            raise ValueError(f"invalid interval [{self.l_hat}, {self.u_hat}]")


@dataclass(frozen=True)
class BoxUncertaintySet:
    intervals: dict[str, MovementBox]

    def __getitem__(self, movement_id: str) -> MovementBox:
        return self.intervals[movement_id]

    def __contains__(self, movement_id: str) -> bool:
        return movement_id in self.intervals

    @property
    def movements(self) -> list[str]:
        return list(self.intervals)

    def upper(self) -> dict[str, float]:
        return {k: b.u_hat for k, b in self.intervals.items()}

    def lower(self) -> dict[str, float]:
        return {k: b.l_hat for k, b in self.intervals.items()}

    def to_json(self) -> str:
        data = {k: {"l_hat": b.l_hat, "u_hat": b.u_hat, "support_count": b.support_count}
                for k, b in sorted(self.intervals.items())}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BoxUncertaintySet":
        data = json.loads(text)
        return cls({k: MovementBox(float(v["l_hat"]), float(v["u_hat"]),
                                   int(v.get("support_count", 0)))
                    for k, v in data.items()})

    @classmethod
    def from_intervals(cls, intervals: dict[str, tuple[float, float]]) -> "BoxUncertaintySet":
        return cls({k: MovementBox(float(lo), float(hi), 1) for k, (lo, hi) in intervals.items()})


def first_arrivals_count(obs: CycleObservation) -> float:
    """Vehicles that arrived between red start and the last queued CV."""
    if not obs.informative:
        raise UninformativeCycleError(f"cycle {obs.cycle_index}: no queued CV")
    if not obs.oversaturated or obs.p_lr is None or obs.t_lr is None:
        return float(obs.p_lq)
    if obs.t_lq <= obs.t_lr:
        raise DegenerateCycleError(f"cycle {obs.cycle_index}: t_lq <= t_lr")
    # share of the queue between the two tagged CVs that arrived after red start
    return (obs.p_lq - obs.p_lr) * obs.t_lq / (obs.t_lq - obs.t_lr)


def effective_max_rate(obs: CycleObservation, params: BoundsParams,
                       tau_fn: float | None = None) -> float:
    """Arrival-rate cap between the last queued CV and the first free-flowing one."""
    tau_fn = obs.tau_fn if tau_fn is None else tau_fn
    if tau_fn is None or obs.tau_lq is None or obs.t_lq is None:
        raise UninformativeCycleError(f"cycle {obs.cycle_index}: missing tau_fn/tau_lq/t_lq")
    if tau_fn <= obs.t_lq:
        raise DegenerateCycleError(f"cycle {obs.cycle_index}: tau_fn <= t_lq")
    if tau_fn < obs.tau_lq:
        raise DegenerateCycleError(f"cycle {obs.cycle_index}: tau_fn < tau_lq")
    if tau_fn == obs.tau_lq:
        return 0.0
    return min(params.lambda_max, (tau_fn - obs.tau_lq) / (params.h_s * (tau_fn - obs.t_lq)))


def cycle_arrival_bounds(obs: CycleObservation, params: BoundsParams) -> ArrivalBounds:
    """Lower and upper arrival-rate bounds for one observed cycle."""
    C = obs.cycle_length

    def invalid(reason):
        return ArrivalBounds(obs.movement_id, obs.cycle_index, math.nan, math.nan, False, reason)

    if not obs.informative or obs.tau_lq is None:
        return invalid("uninformative")
    # no free-flowing CV observed after the queue: assume one could have passed at cycle end
    tau_fn = C if (obs.oversaturated or obs.tau_fn is None) else obs.tau_fn
    try:
        n1 = first_arrivals_count(obs)
        cap = effective_max_rate(obs, params, tau_fn)
    except (DegenerateCycleError, UninformativeCycleError) as exc:
        return invalid(str(exc))
    lower = (n1 + obs.n_nq) / C
    upper = (n1 + cap * (tau_fn - obs.t_lq) + params.lambda_max * (C - tau_fn)) / C
    ok = 0.0 <= lower <= upper + 1e-12
    if ok and upper < lower:
        upper = lower
    return ArrivalBounds(obs.movement_id, obs.cycle_index, lower, upper, ok,
                         "" if ok else "lower exceeds upper")


def build_box_set(bounds: Iterable[ArrivalBounds], params: BoundsParams | dict[str, BoundsParams],
                  movement_ids: Sequence[str] = ()) -> BoxUncertaintySet:
    """Median of valid lower and upper bounds per movement.

    Movements without a valid cycle get ``[0, lambda_max]`` and a warning.
    """
    by_mov: dict[str, list[ArrivalBounds]] = {k: [] for k in movement_ids}
    for b in bounds:
        by_mov.setdefault(b.movement_id, []).append(b)
    out = {}
    for k in sorted(by_mov):
        valid = [b for b in by_mov[k] if b.valid]
        if not valid:
            lam_max = (params[k] if isinstance(params, dict) else params).lambda_max
            log.warning("movement %s: no valid cycles, falling back to [0, %g]", k, lam_max)
            out[k] = MovementBox(0.0, lam_max, 0, fallback=True)
            continue
        lo = statistics.median(b.lower for b in valid)
        hi = statistics.median(b.upper for b in valid)
        out[k] = MovementBox(lo, max(lo, hi), len(valid))
    return BoxUncertaintySet(out)


def mean_rate_estimate(bounds: Iterable[ArrivalBounds], params: BoundsParams) -> float:
    """Mean midpoint over valid cycles, or ``lambda_max / 2`` without any."""
    mids = [(b.lower + b.upper) / 2 for b in bounds if b.valid]
    if not mids:
        log.warning("no valid cycles, falling back to rate %g", params.lambda_max / 2)
        return params.lambda_max / 2
    return math.fsum(mids) / len(mids)


def bounds_to_csv(bounds: Iterable[ArrivalBounds]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["movement_id", "cycle_index", "lower_vps", "upper_vps", "valid"])
    for b in bounds:
        w.writerow([b.movement_id, b.cycle_index, _fmt(b.lower), _fmt(b.upper),
                    "true" if b.valid else "false"])
    return buf.getvalue()


def bounds_from_csv(text: str) -> list[ArrivalBounds]:
    rows = csv.DictReader(io.StringIO(text))
    return [ArrivalBounds(r["movement_id"], int(r["cycle_index"]), _parse(r["lower_vps"]),
                          _parse(r["upper_vps"]), r["valid"].strip().lower() == "true")
            for r in rows]


def _parse(text: str) -> float:
    return float(text) if text.strip() else math.nan


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))
