import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvro.sim import MovementDemand, ScenarioConfig, generate_demand, sample_cvs, simulate
from cvro.timing import SignalPlan
from cvro.trajectory import (CSV_HEADER, CycleSpec, ObservationParams, QueueClass,
                             TrajectoryParseError, TrajectoryValidationError,
                             classify_and_observe, crossing_time, detect_stop,
                             observe_cycles, parse_trajectories, trajectories_to_csv,
                             virtual_arrival_time)

from conftest import by_id, path_trajectory, two_stage

HEADER = ",".join(CSV_HEADER) + "\n"


# ------------------------------------------------------------- parsing

def test_header_only_gives_no_trajectories():
    assert parse_trajectories(HEADER.encode()) == []


def test_rows_of_one_vehicle_form_one_trajectory():
    text = HEADER + "v1,NS,0,30,15\nv1,NS,1,15,15\nv1,NS,2,0,15\n"
    trajs = parse_trajectories(text.encode())
    assert len(trajs) == 1
    assert len(trajs[0].points) == 3
    assert trajs[0].vehicle_id == "v1" and trajs[0].movement_id == "NS"


def test_interleaved_rows_are_grouped_and_time_sorted():
    rows = [
        "b,EW,11,20,10",
        "a,NS,2,10,10",
        "b,EW,10,30,10",
        "a,NS,0,30,10",
        "b,EW,12,10,10",
        "a,NS,1,20,10",
    ]
    trajs = parse_trajectories((HEADER + "\n".join(rows) + "\n").encode())
    # sorted and grouped by hand
    expected = {("b", "EW"): [10.0, 11.0, 12.0], ("a", "NS"): [0.0, 1.0, 2.0]}
    assert {(t.vehicle_id, t.movement_id): [p.timestamp for p in t.points] for t in trajs} == expected
    a = next(t for t in trajs if t.vehicle_id == "a")
    assert [p.distance for p in a.points] == [30.0, 20.0, 10.0]


def test_malformed_row_reports_its_line():
    text = HEADER + "v1,NS,0,30,15\nv1,NS,oops,15,15\n"
    with pytest.raises(TrajectoryParseError) as err:
        parse_trajectories(text.encode())
    assert err.value.line == 3


def test_wrong_field_count_reports_its_line():
    with pytest.raises(TrajectoryParseError) as err:
        parse_trajectories((HEADER + "v1,NS,0,30\n").encode())
    assert err.value.line == 2


def test_bad_header_is_rejected():
    with pytest.raises(TrajectoryParseError):
        parse_trajectories(b"a,b,c,d,e\n")


def test_repeated_timestamp_names_the_vehicle():
    text = HEADER + "car7,NS,0,30,15\ncar7,NS,0,20,15\n"
    with pytest.raises(TrajectoryValidationError) as err:
        parse_trajectories(text.encode())
    assert err.value.vehicle_id == "car7"


def test_reversing_vehicle_is_rejected():
    text = HEADER + "car7,NS,0,30,15\ncar7,NS,1,31,0\n"
    with pytest.raises(TrajectoryValidationError):
        parse_trajectories(text.encode())


def test_negative_speed_is_rejected():
    with pytest.raises(TrajectoryValidationError):
        parse_trajectories((HEADER + "v,NS,0,30,15\nv,NS,1,20,-1\n").encode())


def test_csv_round_trip_is_stable():
    tr = path_trajectory("v9", "NS", [(0.0, 300.0), (10.0, 150.0), (30.0, 150.0), (40.0, 0.0)])
    text = trajectories_to_csv([tr])
    again = trajectories_to_csv(parse_trajectories(text.encode()))
    assert text == again


def test_text_stream_source_is_accepted():
    trajs = parse_trajectories(io.StringIO(HEADER + "v1,NS,0,30,15\nv1,NS,1,15,15\n"))
    assert len(trajs) == 1


# --------------------------------------------------------- kinematics

def test_constant_speed_has_no_stops():
    tr = path_trajectory("v", "NS", [(0.0, 300.0), (20.0, 0.0)])
    assert detect_stop(tr) == []


def test_thirty_second_stop_at_forty_metres():
    tr = path_trajectory("v", "NS", [(0.0, 340.0), (20.0, 40.0), (50.0, 40.0), (52.0, 10.0)])
    stops = detect_stop(tr)
    assert len(stops) == 1
    assert stops[0].position == pytest.approx(40.0)
    # measured between the first and last stopped 1 Hz samples
    assert 29.0 <= stops[0].duration <= 30.0


def test_two_stops_with_a_move_up_come_in_time_order():
    tr = path_trajectory("v", "NS", [(0.0, 300.0), (10.0, 150.0), (30.0, 150.0), (36.0, 60.0),
                                     (60.0, 60.0), (64.0, 0.0)])
    stops = detect_stop(tr)
    assert [s.position for s in stops] == pytest.approx([150.0, 60.0])
    assert stops[0].end < stops[1].start


def test_short_slowdown_is_not_a_stop():
    tr = path_trajectory("v", "NS", [(0.0, 300.0), (10.0, 150.0), (12.0, 150.0), (22.0, 0.0)])
    assert detect_stop(tr, min_stop_duration=4.0) == []


def test_virtual_arrival_at_the_stopline():
    tr = path_trajectory("v", "NS", [(100.0, 0.0), (101.0, -15.0)])
    assert virtual_arrival_time(tr, 15.0) == 100.0


def test_virtual_arrival_projects_at_free_flow():
    tr = path_trajectory("v", "NS", [(100.0, 150.0), (110.0, 0.0)])
    assert virtual_arrival_time(tr, 15.0) == pytest.approx(110.0)


def test_virtual_arrival_rejects_bad_speed():
    tr = path_trajectory("v", "NS", [(100.0, 150.0), (110.0, 0.0)])
    with pytest.raises(ValueError):
        virtual_arrival_time(tr, 0.0)


def test_unimpeded_simulated_vehicle_arrives_when_it_crosses(plan90, intersection, scenario):
    movements, _ = intersection
    # one vehicle in mid green for NS (green 0..42)
    res = simulate(plan90, {"NS": np.array([1820.3]), "EW": np.zeros(0)}, scenario, movements)
    [tr] = sample_cvs(res, 1.0, 0, scenario)
    assert abs(virtual_arrival_time(tr, scenario.free_flow_speed) - crossing_time(tr)) <= 0.2


@given(st.floats(-1e4, 1e4, allow_nan=False), st.floats(0, 400), st.floats(1, 30))
def test_virtual_arrival_shifts_with_the_clock(delta, dist, vf):
    tr = path_trajectory("v", "NS", [(0.0, dist), (dist / vf + 1.0, -vf)])
    shifted = path_trajectory("v", "NS", [(delta, dist), (delta + dist / vf + 1.0, -vf)])
    assert virtual_arrival_time(shifted, vf) - virtual_arrival_time(tr, vf) == pytest.approx(
        delta, abs=1e-9 * max(1.0, abs(delta)))


def test_crossing_time_interpolates():
    tr = path_trajectory("v", "NS", [(0.0, 30.0), (2.0, 0.0), (3.0, -15.0)])
    assert crossing_time(tr) == pytest.approx(2.0)
    never = path_trajectory("v", "NS", [(0.0, 300.0), (5.0, 250.0)])
    assert crossing_time(never) is None


# ------------------------------------------------------ classification

CYCLE = CycleSpec(cycle_index=0, red_start=0.0, green_start=30.0, green_end=60.0,
                  cycle_length=70.0, yellow=3.0)
JAM6 = ObservationParams(free_flow_speed=15.0, jam_spacing=6.0)


def test_queued_cv_at_twelve_metres_sits_second():
    tr = path_trajectory("q", "NS", [(-10.0, 200.0), (-10.0 + 188 / 15, 12.0), (35.0, 12.0),
                                     (35.8, 0.0), (36.8, -15.0)], t_end=36.8)
    obs = classify_and_observe([tr], CYCLE, JAM6)
    assert obs.members[0].queue_class is QueueClass.QUEUED
    assert obs.p_lq == 2
    assert obs.t_lq == pytest.approx(-10 + 200 / 15)
    assert obs.tau_lq == pytest.approx(35.8)
    assert not obs.oversaturated


def test_free_flow_cv_in_green_is_non_queued():
    tr = path_trajectory("f", "NS", [(20.0, 300.0), (40.0, 0.0), (41.0, -15.0)])
    obs = classify_and_observe([tr], CYCLE, JAM6)
    assert obs.members[0].queue_class is QueueClass.NON_QUEUED
    assert obs.n_nq == 1 and obs.p_lq is None
    assert obs.tau_fn == pytest.approx(40.0)


def test_cv_stopped_before_red_start_is_residual():
    tr = path_trajectory("r", "NS", [(-50.0, 300.0), (-50 + 280 / 15, 20.0), (32.0, 20.0),
                                     (32 + 20 / 15, 0.0), (34 + 20 / 15, -30.0)])
    obs = classify_and_observe([tr], CYCLE, JAM6)
    assert obs.members[0].queue_class is QueueClass.RESIDUAL
    assert obs.oversaturated
    assert obs.p_lr == 3 and obs.t_lr == pytest.approx(-30.0)


def test_cycle_without_crossings_is_uninformative():
    obs = classify_and_observe([], CYCLE, JAM6, movement_id="NS")
    assert not obs.informative and obs.n_nq == 0 and obs.tau_fn is None


def test_vehicle_without_crossing_is_tallied():
    gone = path_trajectory("x", "NS", [(0.0, 300.0), (5.0, 225.0)])
    tr = path_trajectory("f", "NS", [(20.0, 300.0), (40.0, 0.0), (41.0, -15.0)])
    obs = classify_and_observe([gone, tr], CYCLE, JAM6)
    assert obs.excluded == 1 and len(obs.members) == 1


def test_crossing_at_cycle_start_belongs_to_that_cycle():
    tr = path_trajectory("f", "NS", [(-20.0, 300.0), (0.0, 0.0), (1.0, -15.0)])
    prev = CycleSpec(-1, -70.0, -40.0, -10.0, 70.0, 3.0)
    before, this = observe_cycles([tr], [prev, CYCLE], JAM6)
    assert not before.members and len(this.members) == 1


def test_queued_carry_out_flags_oversaturation():
    # joins the queue in this cycle but is still waiting when it ends
    tr = path_trajectory("c", "NS", [(40.0, 300.0), (58.0, 30.0), (110.0, 30.0),
                                     (112.0, 0.0), (113.0, -15.0)])
    obs = classify_and_observe([tr], CYCLE, JAM6)
    assert obs.oversaturated and not obs.members


def _random_run(seed, intersection, plan, scenario, p):
    movements, _ = intersection
    horizon = 30 * plan.cycle_length
    arrivals = {m.movement_id: generate_demand(scenario, m.movement_id, seed, horizon)
                for m in movements}
    res = simulate(plan, arrivals, scenario, movements, horizon)
    return res, sample_cvs(res, p, seed + 1, scenario)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.sampled_from([0.2, 0.5, 1.0]))
def test_observations_from_simulation_satisfy_invariants(seed, p):
    intersection = two_stage()
    movements, phase = intersection
    plan90 = SignalPlan.from_stage_ends(90.0, [42.0, 87.0], phase, by_id(movements))
    scenario = ScenarioConfig((MovementDemand("NS", 500.0), MovementDemand("EW", 350.0)),
                              fluctuation_cv=0.3, seed=3)
    res, trajs = _random_run(seed, intersection, plan90, scenario, p)
    params = ObservationParams(scenario.free_flow_speed, scenario.jam_spacing)
    for m in movements:
        specs = plan90.cycle_specs(m, 31)
        for obs in observe_cycles(trajs, specs, params, m.movement_id):
            assert obs.invariant_violations() == []
            # exhaustive and exclusive classification
            ids = [c.vehicle_id for c in obs.members]
            assert len(ids) == len(set(ids))
            assert all(isinstance(c.queue_class, QueueClass) for c in obs.members)
            # positions positive, strictly increasing with distance
            ranked = sorted((c for c in obs.members if c.position is not None),
                            key=lambda c: c.position)
            assert all(c.position >= 1 for c in ranked)
            assert len({c.position for c in ranked}) == len(ranked)
        crossing = [tr for tr in trajs if tr.movement_id == m.movement_id]
        counted = sum(len(o.members) for o in observe_cycles(trajs, specs, params, m.movement_id))
        assert counted == sum(1 for tr in crossing
                              if crossing_time(tr) is not None
                              and specs[0].red_start <= crossing_time(tr) < specs[-1].end)
