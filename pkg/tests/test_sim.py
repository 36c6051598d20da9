"""Closed-loop simulation tests: stepping, planners, and the benchmark."""

import numpy as np
import pytest

from raceplan.errors import PlanExhaustedError, SpecError
from raceplan.sim import (
    Opponent,
    OpponentSpec,
    Scenario,
    World,
    clearance,
    make_planner,
    random_scenario,
    read_csv_without_columns,
    run_scenario,
    step,
    write_results_csv,
    write_timing_csv,
)
from raceplan.track import make_synthetic_track
from raceplan.trajectory import constant_speed_trajectory
from raceplan.vehicle import VehicleState, default_gg


def _straight(length=4000.0, half=6.0):
    return make_synthetic_track([(length, 0.0)], n_left=half, n_right=-half)


def _world(track, ego_s=0.0, ego_v=50.0, ego_n=0.0, opponents=()):
    ego = VehicleState(V=ego_v, n=ego_n, chi=0.0, ax=0.0, ay=0.0)
    return World(track=track, gg=default_gg(), ego_s=ego_s, ego=ego,
                 opponents=list(opponents), t=0.0)


# ---------------------------------------------------------------------------
# stepping


def test_step_advances_ego_and_opponents_exactly():
    track = _straight()
    opp = Opponent(id=0, s=120.0, n=1.0, speed=40.0)
    world = _world(track, ego_v=50.0, opponents=[opp])
    plan = constant_speed_trajectory(s0=0.0, n0=0.0, V=50.0, length=400.0)

    step(world, plan, dt=0.1)
    assert abs(world.ego_s - 5.0) < 1e-9
    assert abs(world.ego.V - 50.0) < 1e-12

    step(world, plan, dt=1.0)
    assert abs(world.opponents[0].s - (120.0 + 40.0 * 1.1)) < 1e-9
    assert abs(world.t - 1.1) < 1e-12


def test_step_raises_when_plan_runs_out():
    track = _straight()
    world = _world(track, ego_v=50.0)
    plan = constant_speed_trajectory(s0=0.0, n0=0.0, V=50.0, length=20.0)
    step(world, plan, dt=0.1)
    with pytest.raises(PlanExhaustedError):
        step(world, plan, dt=1.0)


def test_collision_matches_hand_placed_rectangle_overlap():
    track = _straight()
    # drive a fixed plan straight through a stopped opponent and compare the
    # clearance sign change against the kinematic overlap time
    opp = Opponent(id=0, s=30.0, n=0.5, speed=1e-9)
    world = _world(track, ego_v=10.0, opponents=[opp])
    plan = constant_speed_trajectory(s0=0.0, n0=0.0, V=10.0, length=100.0)

    first_hit = None
    for k in range(60):
        step(world, plan, dt=0.1)
        if clearance(world) < 0.0 and first_hit is None:
            first_hit = world.t
    # overlap starts once |ego_s - 30| < 5 (lateral 0.5 < 2 always overlaps)
    assert first_hit is not None
    assert abs(first_hit - 2.5) <= 0.1 + 1e-9


def test_clearance_positive_when_separated_on_either_axis():
    track = _straight()
    far_long = _world(track, ego_s=0.0,
                      opponents=[Opponent(id=0, s=50.0, n=0.0, speed=10.0)])
    assert clearance(far_long) == pytest.approx(45.0)
    far_lat = _world(track, ego_s=0.0, ego_n=0.0,
                     opponents=[Opponent(id=0, s=1.0, n=5.0, speed=10.0)])
    assert clearance(far_lat) == pytest.approx(3.0)


def test_limit_follower_settles_at_scaled_track_limit():
    track = make_synthetic_track([(3000.0, 0.01)], n_left=6.0, n_right=-6.0)
    gg = default_gg()
    opp = Opponent(id=0, s=0.0, n=0.0, speed=20.0, mode="limit", frac=0.8)
    for _ in range(300):
        opp.advance(0.1, track, gg)
    v_lim = 0.8 * np.sqrt(15.0 / 0.01)
    assert abs(opp.speed - v_lim) < 0.5


def test_constant_opponent_prediction_matches_advance():
    track = _straight()
    gg = default_gg()
    opp = Opponent(id=0, s=100.0, n=-1.0, speed=33.0)
    pred = opp.predict(10.0, track, gg)
    twin = Opponent(id=0, s=100.0, n=-1.0, speed=33.0)
    for _ in range(100):
        twin.advance(0.1, track, gg)
    assert abs(pred.s_at(10.0) - twin.s) < 1e-9
    assert pred.n_at(3.0) == pytest.approx(-1.0)


# ---------------------------------------------------------------------------
# planners in closed loop


def test_planner_without_opponents_runs_single_solves():
    track = _straight()
    pl = make_planner("hierarchical", track, default_gg())
    world = _world(track, ego_v=50.0)
    out = pl.plan(world)
    assert out.ocp_solves == 1
    assert out.n_visible == 0
    assert out.sides == ()
    assert out.plan.s[0] == pytest.approx(world.ego_s)
    assert out.plan.s[-1] >= world.ego_s + 300.0 - 1e-9


def test_counter_law_in_closed_loop():
    track = _straight()
    gg = default_gg()
    scen = Scenario(seed=0, ego_v0=50.0, t_max=3.0,
                    opponents=[OpponentSpec(offset=60.0, lane=1.0,
                                            speed=30.0)])
    hier = run_scenario(track, gg, scen, "hierarchical")
    par = run_scenario(track, gg, scen, "parallel")
    for _, n_vis, solves, _ in hier.step_log:
        assert solves == 1
    for _, n_vis, solves, _ in par.step_log:
        assert solves == 2 ** n_vis
    assert any(n == 1 for _, n, _, _ in par.step_log)


def test_run_scenario_is_deterministic():
    track = _straight()
    gg = default_gg()
    scen = random_scenario(5)
    a = run_scenario(track, gg, scen, "hierarchical", log_trajectory=True)
    b = run_scenario(track, gg, scen, "hierarchical", log_trajectory=True)
    assert a.overtake_time == b.overtake_time
    assert a.min_clearance == b.min_clearance
    assert a.ocp_solves == b.ocp_solves
    assert np.array_equal(np.asarray(a.trajectory), np.asarray(b.trajectory))


def test_consecutive_plans_agree_laterally_when_behavior_unchanged():
    track = _straight()
    gg = default_gg()
    scen = random_scenario(3)
    world = _world(track, ego_v=scen.ego_v0, opponents=[
        Opponent(id=i, s=sp.offset, n=sp.lane, speed=sp.speed)
        for i, sp in enumerate(scen.opponents)])
    pl = make_planner("hierarchical", track, gg)

    plans, sides = [], []
    plan, last = None, -np.inf
    while world.t < 6.0:
        if plan is None or world.ego_s - last >= scen.replan_ds - 1e-9:
            out = pl.plan(world)
            plan, last = out.plan, world.ego_s
            plans.append(plan)
            sides.append(out.sides)
        step(world, plan, scen.dt)

    checked = 0
    for k in range(1, len(plans)):
        if sides[k] != sides[k - 1]:
            continue
        a, b = plans[k - 1], plans[k]
        ss = np.linspace(b.s[0], min(a.s[-1], b.s[-1]), 120)
        assert np.max(np.abs(a.n_at(ss) - b.n_at(ss))) < 0.5
        checked += 1
    assert checked >= 3


def test_fixed_sides_tie_on_a_symmetric_scenario():
    track = _straight()
    gg = default_gg()
    scen = Scenario(seed=0, ego_v0=50.0, t_max=30.0,
                    opponents=[OpponentSpec(offset=70.0, lane=0.0,
                                            speed=30.0)])
    left = run_scenario(track, gg, scen, "left")
    right = run_scenario(track, gg, scen, "right")
    assert left.completed and right.completed
    assert abs(left.overtake_time - right.overtake_time) \
        <= 0.02 * max(left.overtake_time, right.overtake_time)


def test_blocked_track_leads_to_car_following():
    narrow = make_synthetic_track([(3000.0, 0.0)], n_left=2.6, n_right=-2.6)
    gg = default_gg()
    scen = Scenario(seed=0, ego_v0=50.0, t_max=25.0,
                    opponents=[OpponentSpec(offset=80.0, lane=0.0,
                                            speed=30.0)])
    res = run_scenario(narrow, gg, scen, "hierarchical",
                       log_trajectory=True)
    assert not res.completed
    assert not res.collision and res.min_clearance >= 0.0
    tail = np.asarray([row for row in res.trajectory if row[0] > 18.0])
    assert np.all(np.abs(tail[:, 3] - 30.0) <= 2.0)


# ---------------------------------------------------------------------------
# scenarios and reports


def test_random_scenario_is_reproducible_and_well_formed():
    for seed in range(20):
        a = random_scenario(seed)
        b = random_scenario(seed)
        assert [(o.offset, o.lane, o.speed) for o in a.opponents] \
            == [(o.offset, o.lane, o.speed) for o in b.opponents]
        offs = [o.offset for o in a.opponents]
        assert offs == sorted(offs)
        assert all(25.0 <= o <= 120.0 for o in offs)
        assert np.diff(offs).min() >= 30.0
        assert all(26.0 <= o.speed <= 34.0 for o in a.opponents)
        assert all(abs(o.lane) <= 2.8 for o in a.opponents)


def test_make_planner_rejects_unknown_strategy():
    track = _straight()
    with pytest.raises(SpecError):
        make_planner("diagonal", track, default_gg())


def test_scenario_rejects_opponent_behind_ego():
    with pytest.raises(SpecError):
        Scenario(seed=0, opponents=[OpponentSpec(offset=-5.0, lane=0.0,
                                                 speed=30.0)])


def test_report_csvs_identical_up_to_timing_columns(tmp_path):
    track = _straight()
    gg = default_gg()
    scen = random_scenario(5)
    paths = []
    for tag in ("a", "b"):
        res = [run_scenario(track, gg, scen, "hierarchical")]
        rp = tmp_path / f"results_{tag}.csv"
        tp = tmp_path / f"timing_{tag}.csv"
        write_results_csv(res, rp)
        write_timing_csv(res, tp)
        paths.append((rp, tp))
    (ra, ta), (rb, tb) = paths
    assert ra.read_bytes() == rb.read_bytes()
    assert read_csv_without_columns(ta) == read_csv_without_columns(tb)
    header = ta.read_text().splitlines()[0].split(",")
    assert "plan_time" in header


def test_visible_window_drops_passed_opponents():
    track = _straight()
    gg = default_gg()
    pl = make_planner("hierarchical", track, gg)
    behind = Opponent(id=0, s=140.0, n=0.0, speed=30.0)
    alongside = Opponent(id=1, s=148.0, n=3.0, speed=30.0)
    ahead = Opponent(id=2, s=260.0, n=0.0, speed=30.0)
    past_horizon = Opponent(id=3, s=600.0, n=0.0, speed=30.0)
    world = _world(track, ego_s=150.0, ego_v=50.0,
                   opponents=[behind, alongside, ahead, past_horizon])
    vis = pl.visible(world)
    assert [o.id for o in vis] == [1, 2]
