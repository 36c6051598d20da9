"""Maneuver envelopes: lateral corridor and longitudinal moving wall.

The behavioral decision fixes a passing side per opponent. This module
converts that into constraints the trajectory optimization understands: a
sampled lateral corridor [n_r_coll(s), n_l_coll(s)] that covers the
suboptimal side of each opponent at the ego's guessed arrival time, and -
when overtaking is not (yet) possible - a wall ``s < s_coll + V_coll t``
moving at the speed of the obstructing opponent.

Corridor edges are the physically expanded polygon edges (half-width sums,
no safety margin); the optimization adds the safety margin d_s on top, the
same total clearance the visibility graph used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .behavior import LEFT, RIGHT, BehaviorDecision, BehaviorParams
from .errors import EmptyCorridorError, SpecError
from .track import TrackRibbon


@dataclass
class Corridor:
    """Lateral free-space bounds sampled on the optimization grid."""

    s: np.ndarray
    n_l: np.ndarray        # upper bound on n (left collision edge)
    n_r: np.ndarray        # lower bound on n (right collision edge)
    active_l: np.ndarray   # where n_l is an opponent restriction
    active_r: np.ndarray

    def __post_init__(self):
        if np.any(self.n_r > self.n_l + 1e-12):
            raise EmptyCorridorError("corridor bounds cross")

    @property
    def width(self) -> np.ndarray:
        return self.n_l - self.n_r

    def min_width_before(self, s_limit: float) -> float:
        """Narrowest restricted point at or before ``s_limit``."""
        mask = (self.s <= s_limit) & (self.active_l | self.active_r)
        if not np.any(mask):
            return float("inf")
        return float(self.width[mask].min())


@dataclass
class MovingWall:
    """Longitudinal progress bound ``s <= s_coll + V_coll * t``."""

    s_coll: float
    V_coll: float

    def __post_init__(self):
        if self.V_coll < 0:
            raise SpecError("wall speed must be nonnegative")


def _opp_speed(pred, t):
    h = 0.25
    t = np.asarray(t, dtype=float)
    lo = np.maximum(t - h, 0.0)
    return (pred.s_at(t + h) - pred.s_at(lo)) / (t + h - lo)


def build_corridor(decision: BehaviorDecision, preds, track: TrackRibbon,
                   s_grid, params: BehaviorParams, guess=None) -> Corridor:
    """Sample the lateral corridor induced by the passing-side decision.

    For every grid point the opponents' expanded polygons are evaluated at
    the arrival time of the guess trajectory (frozen for the whole solve).
    A left pass raises the lower bound to the polygon's left edge, a right
    pass lowers the upper bound to its right edge; restrictions intersect
    across opponents. Raises EmptyCorridorError when the requested sides are
    mutually impossible. The corridor is finally clipped to the track and
    opened minimally to contain the guess, so the downstream initial point
    always starts inside.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if guess is None:
        guess = decision.candidate
    if guess is None:
        raise SpecError("corridor needs a guess trajectory for arrival times")
    t_g = np.interp(s_grid, guess.s, guess.t)
    n_g = np.interp(s_grid, guess.s, guess.n)
    sd_g = np.interp(s_grid, guess.s, guess.sdot)

    n_l = np.asarray(track.n_left_at(s_grid), dtype=float)
    n_r = np.asarray(track.n_right_at(s_grid), dtype=float)
    act_l = np.zeros(s_grid.size, dtype=bool)
    act_r = np.zeros(s_grid.size, dtype=bool)

    sides = decision.sides if decision is not None else ()
    for i, pred in enumerate(preds):
        side = sides[i] if i < len(sides) else None
        if side is None:
            continue
        s_opp = pred.s_at(t_g)
        n_opp = pred.n_at(t_g)
        v_opp = _opp_speed(pred, t_g)
        l_long = (
            params.ego_half_length
            + pred.half_length
            + np.abs(sd_g - v_opp) * params.t_react
        )
        lat = params.ego_half_width + pred.half_width
        overlap = np.abs(s_grid - s_opp) < l_long
        if side == LEFT:
            n_r = np.where(overlap, np.maximum(n_r, n_opp + lat), n_r)
            act_r |= overlap
        else:
            n_l = np.where(overlap, np.minimum(n_l, n_opp - lat), n_l)
            act_l |= overlap

    if np.any(n_r > n_l + 1e-12):
        raise EmptyCorridorError("passing sides leave no lateral free space")

    # Clip to the track, then open just enough to contain the guess so the
    # initial point of the optimization is interior by construction.
    n_l = np.minimum(n_l, track.n_left_at(s_grid))
    n_r = np.maximum(n_r, track.n_right_at(s_grid))
    n_l = np.maximum(n_l, n_g)
    n_r = np.minimum(n_r, n_g)
    return Corridor(s=s_grid, n_l=n_l, n_r=n_r, active_l=act_l, active_r=act_r)


def track_corridor(track: TrackRibbon, s_grid) -> Corridor:
    """Unrestricted corridor: plain track bounds (no opponents)."""
    s_grid = np.asarray(s_grid, dtype=float)
    return Corridor(
        s=s_grid,
        n_l=np.asarray(track.n_left_at(s_grid), dtype=float),
        n_r=np.asarray(track.n_right_at(s_grid), dtype=float),
        active_l=np.zeros(s_grid.size, dtype=bool),
        active_r=np.zeros(s_grid.size, dtype=bool),
    )


def build_moving_wall(decision, preds, corridor: Corridor, ego_s0: float,
                      params: BehaviorParams):
    """Decide whether a progress wall is needed and place it.

    Active when (a) behavior failed outright, (b) the corridor pinches below
    the ego width plus both safety margins before the first passing point,
    or (c) the chosen variant leaves the nearest opponent ahead unpassed -
    planning beyond a vehicle we have not decided to pass would be unsound.
    The wall tracks the rear bumper of the nearest unpassed opponent,
    offset by the ego half-length and the safety margin.
    """
    if not preds:
        return None

    if decision is None or decision.variant is None:
        passed = [False] * len(preds)
        first_pass_s = np.inf
    else:
        pp = decision.variant.passing_points
        passed = [p is not None for p in pp]
        pass_s = [p[0] for p in pp if p is not None]
        first_pass_s = min(pass_s) if pass_s else np.inf

    ahead = [
        (float(p.s_at(0.0)), i) for i, p in enumerate(preds) if p.s_at(0.0) > ego_s0
    ]
    unpassed = [(s, i) for s, i in ahead if not passed[i]]

    target = None
    if decision is None or unpassed:
        # rules (a) and (c): follow the nearest opponent not planned past
        target = min(unpassed) if unpassed else None
    elif corridor is not None and ahead:
        pinch = corridor.min_width_before(first_pass_s)
        if pinch < 2.0 * params.ego_half_width + 2.0 * params.d_s:
            target = min(ahead)  # rule (b): the planned pass is too tight

    if target is None:
        return None
    s_opp, i = target
    pred = preds[i]
    s_coll = s_opp - pred.half_length - params.ego_half_length - params.d_s
    return MovingWall(s_coll=max(s_coll, ego_s0), V_coll=max(pred.v_avg, 0.0))
