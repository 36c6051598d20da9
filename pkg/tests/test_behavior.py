"""Tests for variant generation, visibility graphs, A*, and feasibility."""

import numpy as np
import pytest

from raceplan.behavior import (
    LEFT,
    RIGHT,
    BehaviorParams,
    VisibilityGraph,
    astar_path,
    build_visibility_graph,
    feasibility_check,
    generate_progress_variants,
    plan_behavior,
    predict_constant,
    rdp,
)
from raceplan.errors import BlockedError, HorizonError, NoPathError
from raceplan.track import make_synthetic_track
from raceplan.trajectory import Trajectory, constant_speed_trajectory
from raceplan.vehicle import default_gg, s_dot


def _prev(V=50.0, s0=0.0, n0=0.0, length=900.0):
    return constant_speed_trajectory(s0=s0, n0=n0, V=V, length=length)


def _straight(length=1500.0):
    return make_synthetic_track([(length, 0.0)])


# ---------------------------------------------------------------------------
# Progress variants


@pytest.mark.parametrize("n_opp", [0, 1, 2, 3])
def test_variant_count_is_exponential(n_opp):
    params = BehaviorParams()
    preds = [
        predict_constant(i, s0=60.0 + 40.0 * i, n0=0.0, speed=30.0, duration=15.0)
        for i in range(n_opp)
    ]
    variants = list(generate_progress_variants(_prev(), preds, params))
    assert len(variants) == 3 ** (n_opp + 1)


def test_variant_ordering_fastest_first():
    params = BehaviorParams()
    preds = [predict_constant(0, s0=80.0, n0=0.0, speed=30.0, duration=15.0)]
    variants = list(generate_progress_variants(_prev(), preds, params))
    terms = [v.terminal_progress for v in variants]
    assert all(a >= b - 1e-9 for a, b in zip(terms, terms[1:]))
    assert variants[0].factors[0] == 2.0  # fastest first


def test_variant_catch_up_closed_form():
    # Constant 50 m/s ego, constant 40 m/s opponent 100 m ahead: the factor-1
    # profile closes the gap at 10 m/s, passing after exactly 10 s / 500 m.
    params = BehaviorParams(t_horizon=11.0)
    prev = _prev(V=50.0)
    preds = [predict_constant(0, s0=100.0, n0=0.0, speed=40.0, duration=15.0)]
    variants = list(generate_progress_variants(prev, preds, params))
    v = next(v for v in variants if v.factors == (1.0, 1.0))
    s_pass, t_pass = v.passing_points[0]
    assert t_pass == pytest.approx(10.0, abs=1e-6)
    assert s_pass == pytest.approx(500.0, abs=1e-4)


def test_variant_profile_positive_and_monotone():
    params = BehaviorParams()
    preds = [predict_constant(0, s0=50.0, n0=0.0, speed=25.0, duration=15.0)]
    for v in generate_progress_variants(_prev(), preds, params, gg=default_gg()):
        assert np.all(v.sdot > 0)
        assert np.all(np.diff(v.s) > 0)


def test_variant_horizon_error():
    prev = constant_speed_trajectory(s0=100.0, n0=0.0, V=50.0, length=200.0)
    with pytest.raises(HorizonError):
        list(generate_progress_variants(prev, [], BehaviorParams(), s0=50.0))


# ---------------------------------------------------------------------------
# RDP


def test_rdp_collapses_near_collinear():
    s = np.linspace(0.0, 100.0, 21)
    n = np.zeros_like(s)
    n[7] = 0.05  # below tolerance
    keep = rdp(np.column_stack([s, n]), 0.1)
    assert list(keep) == [0, 20]


def test_rdp_keeps_real_corners():
    s = np.array([0.0, 10.0, 20.0, 30.0])
    n = np.array([0.0, 0.0, 3.0, 3.0])
    keep = rdp(np.column_stack([s, n]), 0.1)
    assert 1 in keep and 2 in keep


# ---------------------------------------------------------------------------
# Visibility graph + A*


def test_graph_no_opponents_direct_edge():
    params = BehaviorParams()
    prev = _prev()
    variants = list(generate_progress_variants(prev, [], params))
    g = build_visibility_graph(variants[0], [], _straight(), (0.0, 300.0), params)
    assert len(g.nodes) == 2  # start + destination only on a straight track
    path = astar_path(g, params.w_d, params.w_chi)
    assert path == [g.start, g.dest]


def test_graph_centered_opponent_two_sides():
    params = BehaviorParams()
    prev = _prev()
    preds = [predict_constant(0, s0=100.0, n0=0.0, speed=30.0, duration=15.0)]
    variants = list(generate_progress_variants(prev, preds, params, gg=default_gg()))
    g = build_visibility_graph(variants[0], preds, _straight(), (0.0, 300.0), params)
    assert len(g.obstacles) == 1
    r = g.obstacles[0]
    # Direct start->dest edge must be gone (it would cross the rectangle).
    assert all(j != g.dest for j, _, _ in g.adj[g.start]) or not (
        r.n_lo < 0.0 < r.n_hi
    )
    # But corners on both sides are reachable.
    path = astar_path(g, params.w_d, params.w_chi)
    assert len(path) > 2


def test_graph_blocked_start():
    params = BehaviorParams()
    prev = _prev(V=30.0)
    # Opponent right on top of the ego start, same lane, same speed.
    preds = [predict_constant(0, s0=1.0, n0=0.0, speed=30.0, duration=15.0)]
    variants = list(generate_progress_variants(prev, preds, params))
    with pytest.raises(BlockedError):
        build_visibility_graph(variants[0], preds, _straight(), (0.0, 300.0), params)


def test_graph_edges_clear_of_obstacles():
    params = BehaviorParams()
    prev = _prev()
    preds = [
        predict_constant(0, s0=90.0, n0=-1.0, speed=28.0, duration=15.0),
        predict_constant(1, s0=160.0, n0=2.0, speed=26.0, duration=15.0),
    ]
    variants = list(generate_progress_variants(prev, preds, params, gg=default_gg()))
    g = build_visibility_graph(variants[0], preds, _straight(), (0.0, 300.0), params)
    for a, out in enumerate(g.adj):
        for b, _, _ in out:
            pa, pb = g.nodes[a], g.nodes[b]
            for lam in np.linspace(0.0, 1.0, int(np.hypot(*(pb - pa)) / 0.5) + 2):
                s, n = pa + lam * (pb - pa)
                for r in g.obstacles:
                    assert not r.contains(s, n, shrink=1e-6)
                lo = np.interp(s, g.bound_s, g.bound_right)
                hi = np.interp(s, g.bound_s, g.bound_left)
                assert lo - 1e-6 <= n <= hi + 1e-6


def _brute_force_cost(graph, w_d, w_chi):
    """Exhaustive DFS over the (acyclic, forward-in-s) graph."""
    best = [np.inf]

    def go(i, cost):
        if cost >= best[0]:
            return
        if i == graph.dest:
            best[0] = cost
            return
        for j, d, chi in graph.adj[i]:
            go(j, cost + w_d * d + w_chi * abs(chi))

    go(graph.start, 0.0)
    return best[0]


def _path_cost(graph, path, w_d, w_chi):
    cost = 0.0
    for a, b in zip(path, path[1:]):
        hit = next((e for e in graph.adj[a] if e[0] == b), None)
        assert hit is not None
        cost += w_d * hit[1] + w_chi * abs(hit[2])
    return cost


def random_graph(rng, max_nodes=12):
    """Random forward-in-s graph in the visibility-graph container."""
    m = int(rng.integers(4, max_nodes + 1))
    s = np.sort(rng.uniform(0.0, 300.0, m))
    s += np.arange(m) * 1e-3  # break ties
    n = rng.uniform(-6.0, 6.0, m)
    nodes = np.column_stack([s, n])
    adj = [[] for _ in range(m)]
    for a in range(m):
        for b in range(a + 1, m):
            if rng.random() < 0.45:
                d = float(np.hypot(*(nodes[b] - nodes[a])))
                chi = float(np.arctan2(nodes[b, 1] - nodes[a, 1], nodes[b, 0] - nodes[a, 0]))
                adj[a].append((b, d, chi))
    return VisibilityGraph(
        nodes=nodes, adj=adj, start=0, dest=m - 1, obstacles=[],
        bound_s=np.array([0.0, 300.0]),
        bound_left=np.array([6.0, 6.0]),
        bound_right=np.array([-6.0, -6.0]),
    )


def test_astar_matches_brute_force():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(60):
        g = random_graph(rng)
        w_d = float(rng.uniform(0.0, 2.0))
        w_chi = float(rng.uniform(0.0, 8.0))
        ref = _brute_force_cost(g, w_d, w_chi)
        if np.isinf(ref):
            with pytest.raises(NoPathError):
                astar_path(g, w_d, w_chi)
            continue
        path = astar_path(g, w_d, w_chi)
        assert _path_cost(g, path, w_d, w_chi) == pytest.approx(ref, abs=1e-12)
        checked += 1
    assert checked >= 20


def test_astar_prefers_roomier_side():
    # Obstacle shifted right: the left detour is shorter, so with w_chi = 0
    # (pure length) the path must go left.
    params = BehaviorParams()
    prev = _prev()
    preds = [predict_constant(0, s0=100.0, n0=-1.0, speed=30.0, duration=15.0)]
    variants = list(generate_progress_variants(prev, preds, params, gg=default_gg()))
    g = build_visibility_graph(variants[0], preds, _straight(), (0.0, 300.0), params)
    path = astar_path(g, 1.0, 0.0)
    cost = _path_cost(g, path, 1.0, 0.0)
    assert cost == pytest.approx(_brute_force_cost(g, 1.0, 0.0), abs=1e-12)
    r = g.obstacles[0]
    mid_n = np.interp(
        0.5 * (r.s_lo + r.s_hi), g.nodes[path][:, 0], g.nodes[path][:, 1]
    )
    assert mid_n > r.n_center


def test_astar_turn_weight_dominates():
    # Two equal-length detours around a centered rectangle, but the lower one
    # is reached via a pre-bent start lane: with w_d = 0 only total turning
    # counts and brute force must agree with A*.
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = random_graph(rng)
        ref = _brute_force_cost(g, 0.0, 3.0)
        if np.isinf(ref):
            continue
        path = astar_path(g, 0.0, 3.0)
        assert _path_cost(g, path, 0.0, 3.0) == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------------------
# Feasibility


def test_feasibility_straight_spine_constant_speed():
    params = BehaviorParams()
    prev = _prev(V=40.0)
    variants = list(generate_progress_variants(prev, [], params))
    v = next(v for v in variants if v.factors == (1.0,))
    path = np.array([[0.0, 0.0], [300.0, 0.0]])
    cand = feasibility_check(path, v, default_gg(), _straight(), params)
    assert cand.feasible
    np.testing.assert_allclose(cand.ax, 0.0, atol=1e-9)
    np.testing.assert_allclose(cand.ay, 0.0, atol=1e-9)
    np.testing.assert_allclose(cand.V, 40.0, atol=1e-9)


def test_feasibility_flags_overspeed_corner():
    # Steady cornering at V^2 * kappa far above the lateral limit.
    params = BehaviorParams()
    track = make_synthetic_track([(600.0, 1.0 / 60.0)])  # R = 60 m
    prev = _prev(V=50.0)  # 50^2/60 = 41.7 m/s^2 >> 15
    variants = list(generate_progress_variants(prev, [], params))
    v = next(v for v in variants if v.factors == (1.0,))
    path = np.array([[0.0, 0.0], [150.0, 0.0], [300.0, 0.0]])
    cand = feasibility_check(path, v, default_gg(), track, params)
    assert not cand.feasible
    assert cand.max_violation > 0.5


def test_candidate_progress_rate_consistency():
    # Reconstructing sdot from the candidate state must reproduce the
    # variant's profile to machine precision.
    params = BehaviorParams()
    track = make_synthetic_track([(100.0, 0.0), (157.0, 0.01), (400.0, -0.004)])
    prev = _prev(V=35.0)
    preds = [predict_constant(0, s0=70.0, n0=1.0, speed=25.0, duration=15.0)]
    variants = list(generate_progress_variants(prev, preds, params, gg=default_gg()))
    g = build_visibility_graph(variants[0], preds, track, (0.0, 300.0), params)
    path = astar_path(g, params.w_d, params.w_chi)
    cand = feasibility_check(g.nodes[path], variants[0], default_gg(), track, params)
    sd = s_dot(cand.V, cand.n, cand.chi, track.kappa_at(cand.s))
    np.testing.assert_allclose(sd, cand.sdot, rtol=1e-9)


# ---------------------------------------------------------------------------
# Full behavior loop


def test_plan_behavior_no_opponents_empty_decision():
    decision = plan_behavior(_prev(), [], default_gg(), _straight(), BehaviorParams())
    assert decision is not None and decision.empty
    assert decision.sides == ()


def test_plan_behavior_single_opponent_roomier_side():
    params = BehaviorParams()
    preds = [predict_constant(0, s0=100.0, n0=-1.0, speed=28.0, duration=15.0)]
    decision = plan_behavior(_prev(V=45.0), preds, default_gg(), _straight(), params)
    assert decision is not None and not decision.empty
    assert decision.sides[0] == LEFT  # more free width on the left
    assert decision.variant.factors[0] == 2.0  # fastest variant accepted
    assert decision.candidate.feasible
    s_pass, t_pass = decision.variant.passing_points[0]
    assert t_pass > 0.0


def test_plan_behavior_side_matches_path_sign():
    params = BehaviorParams()
    preds = [
        predict_constant(0, s0=90.0, n0=1.5, speed=26.0, duration=15.0),
        predict_constant(1, s0=170.0, n0=-2.0, speed=24.0, duration=15.0),
    ]
    decision = plan_behavior(_prev(V=45.0), preds, default_gg(), _straight(), params)
    assert decision is not None and not decision.empty
    for i, pred in enumerate(preds):
        if decision.sides[i] is None:
            continue
        pp = decision.variant.passing_points[i]
        if pp is None:
            continue
        n_path = np.interp(pp[0], decision.candidate.s, decision.candidate.n)
        expect = LEFT if n_path > pred.n_at(pp[1]) else RIGHT
        assert decision.sides[i] == expect


def test_plan_behavior_blocked_road():
    params = BehaviorParams()
    # Two slow opponents side by side, close ahead: their expanded rectangles
    # overlap in the middle and both reach past the contracted boundaries.
    preds = [
        predict_constant(0, s0=30.0, n0=-2.0, speed=25.0, duration=15.0),
        predict_constant(1, s0=30.0, n0=2.0, speed=25.0, duration=15.0),
    ]
    decision = plan_behavior(_prev(V=50.0), preds, default_gg(), _straight(), params)
    assert decision is None
