"""Tests for the lateral corridor and the moving-wall envelope."""

import numpy as np
import pytest

from raceplan.behavior import (
    LEFT,
    RIGHT,
    BehaviorDecision,
    BehaviorParams,
    plan_behavior,
    predict_constant,
)
from raceplan.envelope import (
    Corridor,
    MovingWall,
    build_corridor,
    build_moving_wall,
    track_corridor,
)
from raceplan.errors import EmptyCorridorError, SpecError
from raceplan.track import make_synthetic_track
from raceplan.trajectory import constant_speed_trajectory
from raceplan.vehicle import default_gg


GRID = np.linspace(0.0, 300.0, 61)


def _straight():
    return make_synthetic_track([(1500.0, 0.0)])


def _decide(preds, V=45.0, params=None):
    params = params or BehaviorParams()
    prev = constant_speed_trajectory(s0=0.0, n0=0.0, V=V, length=900.0)
    decision = plan_behavior(prev, preds, default_gg(), _straight(), params)
    assert decision is not None
    return decision, params


def test_no_opponents_corridor_is_track():
    trk = _straight()
    cor = track_corridor(trk, GRID)
    np.testing.assert_allclose(cor.n_l, 6.0)
    np.testing.assert_allclose(cor.n_r, -6.0)
    assert not cor.active_l.any() and not cor.active_r.any()


def test_left_pass_corridor_edges():
    # Opponent on the spine, 2 m wide; ego 1 m wide with its center kept
    # 0.5 m outside the body sum: the raised lower bound is exactly +1.5.
    params = BehaviorParams(ego_half_width=0.5)
    preds = [predict_constant(0, s0=100.0, n0=0.0, speed=28.0, duration=20.0,
                              half_width=1.0)]
    decision, _ = _decide(preds, params=params)
    cor = build_corridor(decision, preds, _straight(), GRID, params)
    if decision.sides[0] == LEFT:
        restricted = cor.active_r
        assert restricted.any()
        np.testing.assert_allclose(cor.n_r[restricted], 1.5, atol=1e-9)
        np.testing.assert_allclose(cor.n_l[restricted], 6.0, atol=1e-9)
        np.testing.assert_allclose(cor.n_r[~restricted], -6.0, atol=1e-9)
    else:  # mirror image of the hand-checked left-pass numbers
        restricted = cor.active_l
        assert restricted.any()
        np.testing.assert_allclose(cor.n_l[restricted], -1.5, atol=1e-9)
        np.testing.assert_allclose(cor.n_r[restricted], -6.0, atol=1e-9)
        np.testing.assert_allclose(cor.n_l[~restricted], 6.0, atol=1e-9)


def test_corridor_contains_guess_exactly():
    params = BehaviorParams()
    preds = [
        predict_constant(0, s0=90.0, n0=-1.0, speed=26.0, duration=20.0),
        predict_constant(1, s0=180.0, n0=2.0, speed=24.0, duration=20.0),
    ]
    decision, _ = _decide(preds, params=params)
    cor = build_corridor(decision, preds, _straight(), GRID, params)
    n_g = np.interp(GRID, decision.candidate.s, decision.candidate.n)
    assert np.all(cor.n_r <= n_g)
    assert np.all(n_g <= cor.n_l)


def test_corridor_switches_sides_between_passes():
    params = BehaviorParams()
    preds = [
        predict_constant(0, s0=90.0, n0=1.5, speed=26.0, duration=20.0),
        predict_constant(1, s0=180.0, n0=-2.0, speed=24.0, duration=20.0),
    ]
    decision, _ = _decide(preds, params=params)
    cor = build_corridor(decision, preds, _straight(), GRID, params)
    if decision.sides == (RIGHT, LEFT):
        assert cor.active_l.any() and cor.active_r.any()
    # Restrictions never cross and stay inside the track.
    assert np.all(cor.n_r <= cor.n_l)
    assert np.all(cor.n_l <= 6.0 + 1e-12)
    assert np.all(cor.n_r >= -6.0 - 1e-12)


def test_adding_opponent_never_widens():
    params = BehaviorParams()
    preds2 = [
        predict_constant(0, s0=100.0, n0=-1.0, speed=26.0, duration=20.0),
        predict_constant(1, s0=150.0, n0=1.0, speed=27.0, duration=20.0),
    ]
    decision2, _ = _decide(preds2, params=params)
    cor2 = build_corridor(decision2, preds2, _straight(), GRID, params)
    # Same decision data applied to only the first opponent.
    decision1 = BehaviorDecision(
        sides=decision2.sides[:1],
        variant=decision2.variant,
        candidate=decision2.candidate,
    )
    cor1 = build_corridor(decision1, preds2[:1], _straight(), GRID, params)
    assert np.all(cor2.n_l <= cor1.n_l + 1e-12)
    assert np.all(cor2.n_r >= cor1.n_r - 1e-12)


def test_crossing_restrictions_rejected():
    params = BehaviorParams()
    preds = [
        predict_constant(0, s0=100.0, n0=-1.0, speed=26.0, duration=20.0),
        predict_constant(1, s0=104.0, n0=1.0, speed=26.0, duration=20.0),
    ]
    # Force contradictory sides: pass right of the left car and left of the
    # right car while both polygons overlap longitudinally.
    guess = constant_speed_trajectory(s0=0.0, n0=0.0, V=45.0, length=400.0)
    decision = BehaviorDecision(sides=(RIGHT, LEFT), variant=None, candidate=None)
    with pytest.raises(EmptyCorridorError):
        build_corridor(decision, preds, _straight(), GRID, params, guess=guess)


def test_corridor_requires_guess():
    decision = BehaviorDecision(sides=(), variant=None, candidate=None)
    with pytest.raises(SpecError):
        build_corridor(decision, [], _straight(), GRID, BehaviorParams())


def test_wall_absent_on_clean_pass():
    params = BehaviorParams()
    preds = [predict_constant(0, s0=100.0, n0=-1.0, speed=26.0, duration=20.0)]
    decision, _ = _decide(preds, params=params)
    cor = build_corridor(decision, preds, _straight(), GRID, params)
    assert build_moving_wall(decision, preds, cor, 0.0, params) is None


def test_wall_on_behavior_failure():
    params = BehaviorParams()
    preds = [
        predict_constant(0, s0=30.0, n0=-2.0, speed=25.0, duration=20.0),
        predict_constant(1, s0=34.0, n0=2.0, speed=25.0, duration=20.0),
    ]
    cor = track_corridor(_straight(), GRID)
    wall = build_moving_wall(None, preds, cor, 0.0, params)
    assert wall is not None
    assert wall.V_coll == pytest.approx(25.0)
    # Rear bumper of the nearest opponent minus ego half-length and margin.
    assert wall.s_coll == pytest.approx(30.0 - 2.5 - 2.5 - params.d_s)


def test_wall_on_unpassed_nearest_opponent():
    # A variant that never catches the opponent must still wall behind it.
    params = BehaviorParams()
    preds = [predict_constant(0, s0=200.0, n0=0.0, speed=28.0, duration=20.0)]
    decision, _ = _decide(preds, V=29.0, params=params)
    if decision.variant is not None and decision.variant.passing_points[0] is None:
        cor = build_corridor(decision, preds, _straight(), GRID, params)
        wall = build_moving_wall(decision, preds, cor, 0.0, params)
        assert wall is not None
        assert wall.V_coll == pytest.approx(28.0)


def test_wall_on_corridor_pinch():
    params = BehaviorParams()
    preds = [predict_constant(0, s0=60.0, n0=0.0, speed=20.0, duration=20.0)]
    # Synthetic pinched corridor: 1.0 m wide before the pass at s=150.
    m = GRID.size
    n_l = np.full(m, 6.0)
    n_r = np.full(m, -6.0)
    act = np.zeros(m, dtype=bool)
    pinch = (GRID > 80) & (GRID < 120)
    n_l[pinch] = 0.5
    n_r[pinch] = -0.5
    act_l = act.copy()
    act_l[pinch] = True
    cor = Corridor(s=GRID, n_l=n_l, n_r=n_r, active_l=act_l, active_r=act)
    decision, _ = _decide(preds, params=params)
    assert cor.min_width_before(150.0) == pytest.approx(1.0)
    wall = build_moving_wall(decision, preds, cor, 0.0, params)
    assert wall is not None  # 1.0 < 2*1.0 + 2*0.8


def test_wall_validation():
    with pytest.raises(SpecError):
        MovingWall(s_coll=10.0, V_coll=-1.0)
