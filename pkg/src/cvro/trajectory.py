"""CV trajectory ingestion and per-cycle queue classification.

Trajectories are sampled position/speed traces of connected vehicles on one
approach movement. For every signal cycle of a movement the crossing CVs are
classified as queued, non-queued or residual, and the quantities that feed
the arrival-rate bounds are collected into a :class:`CycleObservation`.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np

CSV_HEADER = ("vehicle_id", "movement_id", "timestamp_s", "distance_to_stopline_m", "speed_mps")

# vehicles are not allowed to move away from the stopline by more than this
REVERSE_TOL_M = 0.5


class TrajectoryParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrajectoryValidationError(ValueError):
    def __init__(self, vehicle_id: str, message: str):
        super().__init__(f"vehicle {vehicle_id}: {message}")
        self.vehicle_id = vehicle_id


@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: float
    distance: float
    speed: float


@dataclass(frozen=True)
class CVTrajectory:
    vehicle_id: str
    movement_id: str
    points: tuple[TrajectoryPoint, ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise TrajectoryValidationError(self.vehicle_id, "needs at least 2 points")
        ts = self.times
        if np.any(np.diff(ts) <= 0):
            raise TrajectoryValidationError(self.vehicle_id, "timestamps not strictly increasing")
        if np.any(self.speeds < 0):
            raise TrajectoryValidationError(self.vehicle_id, "negative speed")
        if np.any(np.diff(self.distances) > REVERSE_TOL_M):
            raise TrajectoryValidationError(self.vehicle_id, "moves away from the stopline")

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.points])

    @cached_property
    def distances(self) -> np.ndarray:
        return np.array([p.distance for p in self.points])

    @cached_property
    def speeds(self) -> np.ndarray:
        return np.array([p.speed for p in self.points])


@dataclass(frozen=True)
class CycleSpec:
    """One signal cycle of a movement, on the global clock, starting at red."""

    cycle_index: int
    red_start: float
    green_start: float
    green_end: float
    cycle_length: float
    yellow: float = 0.0

    def __post_init__(self):
        if not (self.red_start < self.green_start < self.green_end
                <= self.red_start + self.cycle_length + 1e-9):
            raise ValueError(f"invalid cycle {self.cycle_index}: need red_start < green_start "
                             f"< green_end <= red_start + cycle_length")

    @property
    def end(self) -> float:
        return self.red_start + self.cycle_length


@dataclass(frozen=True)
class ObservationParams:
    free_flow_speed: float = 15.0
    jam_spacing: float = 7.0
    stop_speed: float = 2.0
    min_stop_duration: float = 4.0

    def __post_init__(self):
        if self.free_flow_speed <= 0 or self.jam_spacing <= 0:
            raise ValueError("free_flow_speed and jam_spacing must be positive")


class QueueClass(enum.Enum):
    QUEUED = "queued"
    NON_QUEUED = "non_queued"
    RESIDUAL = "residual"


@dataclass(frozen=True)
class StopEpisode:
    position: float
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ClassifiedCV:
    vehicle_id: str
    queue_class: QueueClass
    position: int | None
    t: float      # cycle-relative virtual arrival
    tau: float    # cycle-relative stopline crossing


@dataclass(frozen=True)
class CycleObservation:
    movement_id: str
    cycle_index: int
    cycle_length: float
    p_lq: int | None = None
    t_lq: float | None = None
    tau_lq: float | None = None
    p_lr: int | None = None
    t_lr: float | None = None
    n_nq: int = 0
    tau_fn: float | None = None
    oversaturated: bool = False
    excluded: int = 0
    members: tuple[ClassifiedCV, ...] = field(default=(), compare=False, repr=False)

    @property
    def informative(self) -> bool:
        return self.p_lq is not None and self.t_lq is not None

    def invariant_violations(self, tol: float = 1e-6) -> list[str]:
        bad = []
        C = self.cycle_length
        if self.t_lq is not None and self.tau_lq is not None:
            if not (-tol <= self.t_lq < self.tau_lq <= C + tol):
                bad.append("0 <= t_lq < tau_lq <= C")
        if self.tau_fn is not None and not (-tol <= self.tau_fn <= C + tol):
            bad.append("0 <= tau_fn <= C")
        if self.tau_fn is not None and self.tau_lq is not None and self.tau_lq > self.tau_fn + tol:
            bad.append("tau_lq <= tau_fn")
        if self.p_lr is not None and self.p_lq is not None:
            if not (self.t_lr < self.t_lq and self.p_lr < self.p_lq):
                bad.append("t_lr < t_lq and p_lr < p_lq")
        if self.p_lq is not None and self.p_lq < 1:
            bad.append("p_lq >= 1")
        return bad


# --------------------------------------------------------------------- CSV

def parse_trajectories(source) -> list[CVTrajectory]:
    """Read the trajectory CSV (bytes, text, or a binary/text stream)."""
    if isinstance(source, (bytes, bytearray)):
        text = io.StringIO(bytes(source).decode("utf-8"))
    elif isinstance(source, str):
        text = io.StringIO(source)
    else:
        raw = source.read()
        text = io.StringIO(raw.decode("utf-8") if isinstance(raw, bytes) else raw)

    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        return []
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise TrajectoryParseError(1, f"expected header {','.join(CSV_HEADER)}")

    groups: dict[tuple[str, str], list[TrajectoryPoint]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 5:
            raise TrajectoryParseError(lineno, f"expected 5 fields, got {len(row)}")
        vid, mid = row[0].strip(), row[1].strip()
        if not vid or not mid:
            raise TrajectoryParseError(lineno, "empty vehicle_id or movement_id")
        try:
            ts, dist, speed = (float(v) for v in row[2:])
        except ValueError:
            raise TrajectoryParseError(lineno, "non-numeric field") from None
        if not all(math.isfinite(v) for v in (ts, dist, speed)):
            raise TrajectoryParseError(lineno, "non-finite value")
        groups.setdefault((vid, mid), []).append(TrajectoryPoint(ts, dist, speed))

    out = []
    for (vid, mid), pts in groups.items():
        pts.sort(key=lambda p: p.timestamp)
        out.append(CVTrajectory(vid, mid, tuple(pts)))
    return out


def write_trajectories(trajs: Iterable[CVTrajectory], stream: IO[str]) -> None:
    stream.write(",".join(CSV_HEADER) + "\n")
    for tr in trajs:
        for p in tr.points:
            stream.write(f"{tr.vehicle_id},{tr.movement_id},{p.timestamp:.3f},"
                         f"{p.distance:.3f},{p.speed:.3f}\n")


def trajectories_to_csv(trajs: Iterable[CVTrajectory]) -> str:
    buf = io.StringIO()
    write_trajectories(trajs, buf)
    return buf.getvalue()


# ------------------------------------------------------------ kinematics

def detect_stop(traj: CVTrajectory, stop_speed: float = 2.0,
                min_stop_duration: float = 4.0) -> list[StopEpisode]:
    """Maximal runs of samples slower than ``stop_speed`` lasting long enough."""
    slow = traj.speeds < stop_speed
    episodes = []
    i, n = 0, len(slow)
    while i < n:
        if not slow[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and slow[j + 1]:
            j += 1
        start, end = traj.times[i], traj.times[j]
        if end - start >= min_stop_duration:
            pos = float(np.median(traj.distances[i:j + 1]))
            episodes.append(StopEpisode(pos, float(start), float(end)))
        i = j + 1
    return episodes


def virtual_arrival_time(traj: CVTrajectory, free_flow_speed: float) -> float:
    """Unimpeded stopline time projected from the first sample."""
    if free_flow_speed <= 0:
        raise ValueError("free_flow_speed must be positive")
    first = traj.points[0]
    if first.distance < 0:
        raise ValueError(f"vehicle {traj.vehicle_id}: first sample is past the stopline")
    return first.timestamp + first.distance / free_flow_speed


def crossing_time(traj: CVTrajectory) -> float | None:
    """First instant the trajectory reaches the stopline, linearly interpolated."""
    d = traj.distances
    hit = np.flatnonzero(d <= 0.0)
    if hit.size == 0:
        return None
    k = int(hit[0])
    if k == 0:
        return float(traj.times[0])
    t0, t1 = traj.times[k - 1], traj.times[k]
    d0, d1 = d[k - 1], d[k]
    return float(t0 + (t1 - t0) * d0 / (d0 - d1))


# --------------------------------------------------------- classification

@dataclass(frozen=True)
class _Digest:
    vehicle_id: str
    t0: float
    cross: float | None
    stops: tuple[StopEpisode, ...]


def _digest(traj: CVTrajectory, params: ObservationParams) -> _Digest:
    stops = tuple(detect_stop(traj, params.stop_speed, params.min_stop_duration))
    return _Digest(traj.vehicle_id, virtual_arrival_time(traj, params.free_flow_speed),
                   crossing_time(traj), stops)


def _standing_stop(stops: Sequence[StopEpisode], red_start: float) -> StopEpisode:
    """Stop episode holding the vehicle at ``red_start`` (or the next one after it)."""
    for s in stops:
        if s.start <= red_start <= s.end:
            return s
    for s in stops:
        if s.start > red_start:
            return s
    return stops[-1]


def _observe(digests: Sequence[_Digest], cycle: CycleSpec, movement_id: str,
             params: ObservationParams, excluded: int) -> CycleObservation:
    r, C = cycle.red_start, cycle.cycle_length
    eps = 1e-9
    crossing = [g for g in digests if g.cross is not None and r <= g.cross < r + C]
    crossing.sort(key=lambda g: (g.cross, g.vehicle_id))

    queued_like = []
    members: list[ClassifiedCV] = []
    classes = {}
    for g in crossing:
        if not g.stops:
            classes[g.vehicle_id] = QueueClass.NON_QUEUED
        elif g.t0 < r - eps:
            # joined the queue before this red began
            classes[g.vehicle_id] = QueueClass.RESIDUAL
            queued_like.append((_standing_stop(g.stops, r).position, g))
        else:
            classes[g.vehicle_id] = QueueClass.QUEUED
            queued_like.append((g.stops[0].position, g))

    # positions strictly increase with stop distance
    positions = {}
    prev = 0
    for dist, g in sorted(queued_like, key=lambda item: (item[0], item[1].cross)):
        p = max(1, int(round(dist / params.jam_spacing)), prev + 1)
        positions[g.vehicle_id] = p
        prev = p

    for g in crossing:
        members.append(ClassifiedCV(g.vehicle_id, classes[g.vehicle_id],
                                    positions.get(g.vehicle_id), g.t0 - r, g.cross - r))

    queued = [m for m in members if m.queue_class is QueueClass.QUEUED]
    residual = [m for m in members if m.queue_class is QueueClass.RESIDUAL]
    nonq = [m for m in members if m.queue_class is QueueClass.NON_QUEUED]

    lq = max(queued, key=lambda m: (m.position, m.tau)) if queued else None
    lr = max(residual, key=lambda m: (m.position, m.tau)) if residual else None
    if lq is not None:
        after = [m for m in nonq if m.tau > lq.tau]
    else:
        after = nonq
    fn = min(after, key=lambda m: m.tau) if after else None

    carry_out = any(
        g.stops and r - eps <= g.t0 < r + C and (g.cross is None or g.cross >= r + C)
        for g in digests
    )
    return CycleObservation(
        movement_id=movement_id,
        cycle_index=cycle.cycle_index,
        cycle_length=C,
        p_lq=lq.position if lq else None,
        t_lq=lq.t if lq else None,
        tau_lq=lq.tau if lq else None,
        p_lr=lr.position if lr else None,
        t_lr=lr.t if lr else None,
        n_nq=len(after),
        tau_fn=fn.tau if fn else None,
        oversaturated=bool(residual) or carry_out,
        excluded=excluded,
        members=tuple(members),
    )


def classify_and_observe(trajs: Sequence[CVTrajectory], cycle: CycleSpec,
                         params: ObservationParams = ObservationParams(),
                         movement_id: str | None = None) -> CycleObservation:
    """Classify the CVs crossing during ``cycle`` and digest them for the bounds."""
    if movement_id is None:
        ids = {t.movement_id for t in trajs}
        if len(ids) > 1:
            raise ValueError(f"trajectories span several movements: {sorted(ids)}")
        movement_id = ids.pop() if ids else ""
    return observe_cycles(trajs, [cycle], params, movement_id)[0]


def observe_cycles(trajs: Sequence[CVTrajectory], cycles: Sequence[CycleSpec],
                   params: ObservationParams = ObservationParams(),
                   movement_id: str | None = None) -> list[CycleObservation]:
    """One observation per cycle; trajectory features are computed once."""
    if movement_id is not None:
        trajs = [t for t in trajs if t.movement_id == movement_id]
    else:
        ids = {t.movement_id for t in trajs}
        if len(ids) > 1:
            raise ValueError(f"trajectories span several movements: {sorted(ids)}")
        movement_id = ids.pop() if ids else ""
    digests = [_digest(t, params) for t in trajs]
    never = sum(1 for g in digests if g.cross is None)
    if not digests:
        return [CycleObservation(movement_id, c.cycle_index, c.cycle_length) for c in cycles]

    # bucket by crossing time / first stop so each cycle only sees nearby vehicles
    order = sorted(digests, key=lambda g: g.t0)
    t0s = np.array([g.t0 for g in order])
    out = []
    for c in cycles:
        lo = np.searchsorted(t0s, c.red_start - 10 * c.cycle_length)
        hi = np.searchsorted(t0s, c.end + c.cycle_length, side="right")
        out.append(_observe(order[lo:hi], c, movement_id, params, never))
    return out
