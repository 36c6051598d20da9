"""Behavioral overtaking planner.

One planning cycle works through a funnel: enumerate progress variants
(speed profiles that branch to a different set-speed factor at each passing
point), order them fastest-first, and for each variant build a visibility
graph in the (s, n) ribbon plane, search it with A*, smooth the path with a
cubic spline, and accept the first candidate whose accelerations stay inside
the gg limits. The winning candidate fixes the passing side per opponent and
seeds the downstream trajectory optimization.

Everything here lives in the road frame: obstacles become axis-aligned
rectangles in (s, n) covering the region the ego would traverse while too
close to an opponent, so the search is purely spatial.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BlockedError, HorizonError, NoPathError, SingularityError, SpecError
from .track import TrackRibbon
from .trajectory import Trajectory
from .vehicle import GgDiagram

LEFT = "left"
RIGHT = "right"


@dataclass
class BehaviorParams:
    """Tunables of the behavioral layer (shipped defaults in config)."""

    horizon: float = 300.0          # spatial planning horizon H, m
    factors: tuple = (0.5, 1.0, 2.0)
    gain: float = 2.0               # set-speed controller gain K, 1/s
    dt_profile: float = 0.1         # profile integration step, s
    t_horizon: float = 12.0         # profile time horizon, s
    t_react: float = 0.5            # reaction-time share of the safety gap, s
    d_s: float = 0.8                # lateral safety margin, m
    eps_rdp: float = 0.1            # boundary simplification tolerance, m
    w_d: float = 1.0                # path-length weight
    w_chi: float = 5.0              # deviation-angle weight
    tol_gg: float = 0.02            # allowed gg-margin overshoot for candidates
    profile_acc_frac: float = 0.7   # share of the gg budget profiles may use
    ego_half_length: float = 2.5
    ego_half_width: float = 1.0
    ds_boundary: float = 5.0        # boundary sampling step, m
    ds_candidate: float = 0.5       # candidate sampling step, m


@dataclass
class OpponentPrediction:
    """Predicted opponent motion over the planning horizon."""

    id: int
    t: np.ndarray
    s: np.ndarray
    n: np.ndarray
    half_length: float
    half_width: float
    v_avg: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        if self.t.size < 2 or abs(self.t[0]) > 1e-9:
            raise SpecError("prediction must start at t=0 with >= 2 samples")
        if not np.all(np.diff(self.t) > 0):
            raise SpecError("prediction times must be strictly increasing")
        if np.any(np.diff(self.s) < 0):
            raise SpecError("prediction s must be nondecreasing")

    def s_at(self, t):
        """Position at time t; beyond the samples, hold the final speed."""
        t = np.asarray(t, dtype=float)
        s = np.interp(t, self.t, self.s)
        v_end = (self.s[-1] - self.s[-2]) / (self.t[-1] - self.t[-2])
        over = t > self.t[-1]
        if np.any(over):
            s = np.where(over, self.s[-1] + (t - self.t[-1]) * v_end, s)
        return float(s) if s.ndim == 0 else s

    def n_at(self, t):
        out = np.interp(t, self.t, self.n)
        return float(out) if np.ndim(out) == 0 else out


def predict_constant(opp_id: int, s0: float, n0: float, speed: float,
                     duration: float, dt: float = 0.5,
                     half_length: float = 2.5,
                     half_width: float = 1.0) -> OpponentPrediction:
    """Constant-speed, fixed-lane prediction."""
    t = np.arange(0.0, duration + dt, dt)
    return OpponentPrediction(
        id=opp_id,
        t=t,
        s=s0 + speed * t,
        n=np.full_like(t, n0),
        half_length=half_length,
        half_width=half_width,
        v_avg=speed,
    )


@dataclass
class ProgressVariant:
    """One branch of set-speed factors with its integrated progress profile."""

    factors: tuple
    t: np.ndarray
    s: np.ndarray
    sdot: np.ndarray
    # Per opponent (prediction order): (s_pass, t_pass) or None if the
    # profile never overtakes it within the time horizon.
    passing_points: list
    terminal_progress: float
    switches: int = 0  # factor segments actually consumed - 1

    def sdot_at_s(self, s):
        return np.interp(s, self.s, self.sdot)

    def t_at_s(self, s):
        s = np.asarray(s, dtype=float)
        t = np.interp(s, self.s, self.t)
        over = s > self.s[-1]
        if np.any(over):
            t = np.where(over, self.t[-1] + (s - self.s[-1]) / self.sdot[-1], t)
        return float(t) if t.ndim == 0 else t


def _integrate_profile(factors, prev, preds, params: BehaviorParams,
                       gg: GgDiagram | None):
    """Integrate sddot = K (factor * sdot_prev(s) - sdot) with branching.

    The factor advances to the next sequence entry whenever an opponent is
    overtaken (its gap crosses zero from behind). Acceleration is clipped to
    the longitudinal gg limits at the current speed so the ranking is not
    dominated by unreachable profiles.
    """
    dt = params.dt_profile
    m = int(round(params.t_horizon / dt)) + 1
    t = np.arange(m) * dt
    s = np.empty(m)
    sd = np.empty(m)
    s[0] = prev.s[0]
    sd[0] = max(prev.sdot[0], 0.5)
    v_cap = gg.v_max if gg is not None else np.inf

    opp_s = [p.s_at(t) for p in preds]
    passed = [p.s_at(0.0) <= s[0] for p in preds]
    passing = [(t[0], s[0]) if passed[i] else None for i in range(len(preds))]
    seg = 0

    for k in range(1, m):
        target = factors[seg] * prev.sdot_at(s[k - 1])
        acc = params.gain * (target - sd[k - 1])
        if gg is not None:
            # Only part of the acceleration budget: the rest stays available
            # for the lateral component of the eventual swerve.
            axa, axb, _ = gg.limits(min(sd[k - 1], v_cap))
            frac = params.profile_acc_frac
            acc = float(np.clip(acc, -frac * axb, frac * axa))
        sd[k] = min(max(sd[k - 1] + dt * acc, 0.5), v_cap)
        s[k] = s[k - 1] + dt * 0.5 * (sd[k - 1] + sd[k])

        crossings = []
        for i in range(len(preds)):
            if passed[i]:
                continue
            g_prev = s[k - 1] - opp_s[i][k - 1]
            g_now = s[k] - opp_s[i][k]
            if g_prev < 0.0 <= g_now:
                theta = -g_prev / (g_now - g_prev)
                crossings.append((theta, i))
        for theta, i in sorted(crossings):
            passed[i] = True
            passing[i] = (
                float(t[k - 1] + theta * dt),
                float(s[k - 1] + theta * (s[k] - s[k - 1])),
            )
            if seg < len(factors) - 1:
                seg += 1

    pp = [None if p is None else (p[1], p[0]) for p in passing]  # (s, t)
    return ProgressVariant(
        factors=tuple(factors),
        t=t,
        s=s,
        sdot=sd,
        passing_points=pp,
        terminal_progress=float(s[-1]),
        switches=seg,
    )


def generate_progress_variants(prev: Trajectory, preds, params: BehaviorParams,
                               gg: GgDiagram | None = None, s0: float | None = None):
    """Yield all |factors|^(N+1) progress variants, fastest first.

    Ordering is by terminal progress, ties broken by the lexicographically
    larger factor sequence. Profiles are integrated up front (cheap); the
    expensive per-variant work downstream happens lazily per yielded item.
    """
    if not params.factors:
        raise SpecError("factor set is empty")
    if s0 is None:
        s0 = float(prev.s[0])
    if s0 < prev.s[0] - 1e-6 or s0 > prev.s[-1] + 1e-6:
        raise HorizonError("previous trajectory does not cover the horizon start")

    n_seg = len(preds) + 1
    variants = []
    stack = [()]
    while stack:
        seq = stack.pop()
        if len(seq) == n_seg:
            variants.append(_integrate_profile(seq, prev, preds, params, gg))
        else:
            for f in params.factors:
                stack.append(seq + (f,))
    variants.sort(
        key=lambda v: (-v.terminal_progress, tuple(-f for f in v.factors))
    )
    yield from variants


# ---------------------------------------------------------------------------
# Visibility graph


def rdp(points: np.ndarray, eps: float) -> np.ndarray:
    """Ramer-Douglas-Peucker polyline simplification (returns kept indices)."""
    pts = np.asarray(points, dtype=float)
    m = len(pts)
    keep = np.zeros(m, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, m - 1)]
    while stack:
        a, b = stack.pop()
        if b <= a + 1:
            continue
        seg = pts[b] - pts[a]
        norm = np.hypot(*seg)
        mid = pts[a + 1 : b]
        if norm < 1e-12:
            d = np.hypot(mid[:, 0] - pts[a, 0], mid[:, 1] - pts[a, 1])
        else:
            d = np.abs(seg[0] * (mid[:, 1] - pts[a, 1]) - seg[1] * (mid[:, 0] - pts[a, 0])) / norm
        i = a + 1 + int(np.argmax(d))
        if d[i - a - 1] > eps:
            keep[i] = True
            stack.extend(((a, i), (i, b)))
    return np.flatnonzero(keep)


@dataclass
class ObstacleRect:
    """Expanded opponent obstacle in the (s, n) plane."""

    opp_index: int
    s_lo: float
    s_hi: float
    n_lo: float
    n_hi: float
    n_center: float
    s_ref: float  # passing point or closest approach, for side decisions

    def contains(self, s, n, shrink=0.0):
        return (
            self.s_lo + shrink < s < self.s_hi - shrink
            and self.n_lo + shrink < n < self.n_hi - shrink
        )


@dataclass
class VisibilityGraph:
    nodes: np.ndarray               # (M, 2) in (s, n)
    adj: list                       # adj[i] = list of (j, d, chi), s_j > s_i
    start: int
    dest: int
    obstacles: list                 # ObstacleRect
    bound_s: np.ndarray             # full-resolution contracted bounds
    bound_left: np.ndarray
    bound_right: np.ndarray

    def to_jsonable(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [
                [i, j, d, chi] for i, out in enumerate(self.adj) for j, d, chi in out
            ],
            "start": self.start,
            "dest": self.dest,
            "obstacles": [
                {
                    "opponent": r.opp_index,
                    "s": [r.s_lo, r.s_hi],
                    "n": [r.n_lo, r.n_hi],
                }
                for r in self.obstacles
            ],
        }


def _segment_hits_rect(p, q, rect: ObstacleRect, eps=1e-9) -> bool:
    """True when segment p-q enters the open interior of the rectangle."""
    slo, shi = rect.s_lo + eps, rect.s_hi - eps
    nlo, nhi = rect.n_lo + eps, rect.n_hi - eps
    if slo >= shi or nlo >= nhi:
        return False
    t0, t1 = 0.0, 1.0
    for p0, dd, lo, hi in (
        (p[0], q[0] - p[0], slo, shi),
        (p[1], q[1] - p[1], nlo, nhi),
    ):
        if abs(dd) < 1e-15:
            if p0 < lo or p0 > hi:
                return False
        else:
            ta, tb = (lo - p0) / dd, (hi - p0) / dd
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 >= t1:
                return False
    return True


def _obstacle_rect(i, pred: OpponentPrediction, variant: ProgressVariant,
                   params: BehaviorParams, s0, se):
    """Expanded rectangle for one opponent under one progress variant.

    Longitudinal extent: ego positions while the time-indexed gap magnitude
    is below the safety envelope (half-lengths plus a closing-speed term).
    If the profile never gets that close, the opponent is a static obstacle
    at its horizon-exit position.
    """
    t = variant.t
    gap = variant.s - pred.s_at(t)
    l_sum = params.ego_half_length + pred.half_length
    v_rel = np.gradient(gap, t)
    l_safe = l_sum + np.abs(v_rel) * params.t_react
    mask = np.abs(gap) < l_safe

    if np.any(mask):
        s_block = variant.s[mask]
        s_lo, s_hi = float(s_block.min()), float(s_block.max())
        if mask[0]:
            # Conflict already at t=0: the rectangle must reach behind the
            # start so the start-inside-obstacle handling sees it.
            s_lo = s0 - 1e-6
        k_ref = int(np.flatnonzero(mask)[np.argmin(np.abs(gap[mask]))])
        t_ref = float(t[k_ref])
    else:
        # Horizon exit: when the ego profile leaves [s0, se] (or runs out).
        beyond = np.flatnonzero(variant.s >= se)
        t_exit = float(t[beyond[0]] if beyond.size else t[-1])
        s_opp = float(pred.s_at(t_exit))
        if s_opp < s0 or s_opp > se:
            return None
        k = min(int(round(t_exit / (t[1] - t[0]))), len(t) - 1)
        width = l_sum + abs(v_rel[k]) * params.t_react
        s_lo, s_hi = s_opp - width, s_opp + width
        t_ref = t_exit

    if s_hi <= s0 or s_lo >= se:
        return None
    n_c = float(pred.n_at(t_ref))
    lat = params.ego_half_width + pred.half_width + params.d_s
    pp = variant.passing_points[i]
    s_ref = pp[0] if pp is not None else 0.5 * (s_lo + s_hi)
    return ObstacleRect(
        opp_index=i,
        s_lo=s_lo,
        s_hi=s_hi,
        n_lo=n_c - lat,
        n_hi=n_c + lat,
        n_center=n_c,
        s_ref=float(np.clip(s_ref, s_lo, s_hi)),
    )


def _nudge_out(s, n, rects, n_lo, n_hi, max_depth):
    """Move a point laterally out of any rectangle containing it.

    Returns the adjusted n, or None when the point is deeper inside than
    max_depth or there is no free lateral space.
    """
    for _ in range(4):
        hit = next((r for r in rects if r.contains(s, n)), None)
        if hit is None:
            return n
        up, down = hit.n_hi - n, n - hit.n_lo
        if min(up, down) > max_depth:
            return None
        options = []
        if hit.n_hi + 1e-6 < n_hi:
            options.append((up, hit.n_hi + 1e-6))
        if hit.n_lo - 1e-6 > n_lo:
            options.append((down, hit.n_lo - 1e-6))
        if not options:
            return None
        n = min(options)[1]
    return n if not any(r.contains(s, n) for r in rects) else None


def build_visibility_graph(variant: ProgressVariant, preds, track: TrackRibbon,
                           horizon, params: BehaviorParams,
                           ego_n0: float = 0.0) -> VisibilityGraph:
    """Construct the (s, n) visibility graph for one progress variant.

    Nodes are the start point, the destination on the spine at the horizon
    end, the expanded obstacle corners, and RDP-simplified boundary vertices
    (with the ones at the horizon start/end removed). Edges connect node
    pairs forward in s whenever the straight segment stays clear of all
    obstacles and inside the contracted boundaries.
    """
    s0, se = horizon
    margin = params.ego_half_width + params.d_s
    sb = np.arange(s0, se + params.ds_boundary * 0.5, params.ds_boundary)
    sb[-1] = se
    nl = np.asarray(track.n_left_at(sb), dtype=float) - margin
    nr = np.asarray(track.n_right_at(sb), dtype=float) + margin
    if np.any(nl <= nr):
        raise BlockedError("track narrower than the safety margins")

    rects = []
    for i, pred in enumerate(preds):
        r = _obstacle_rect(i, pred, variant, params, s0, se)
        if r is not None:
            rects.append(r)

    def bounds_at(s):
        return np.interp(s, sb, nr), np.interp(s, sb, nl)

    b_lo, b_hi = bounds_at(s0)
    start_n = _nudge_out(
        s0, float(np.clip(ego_n0, b_lo, b_hi)), rects, b_lo, b_hi,
        max_depth=params.d_s + 0.1,
    )
    if start_n is None:
        raise BlockedError("start position inside an expanded obstacle")
    d_lo, d_hi = bounds_at(se)
    dest_n = _nudge_out(se, float(np.clip(0.0, d_lo, d_hi)), rects, d_lo, d_hi,
                        max_depth=np.inf)
    if dest_n is None:
        raise BlockedError("destination blocked across the road width")

    nodes = [(s0, start_n), (se, dest_n)]
    for r in rects:
        for s_c in (r.s_lo, r.s_hi):
            for n_c in (r.n_lo, r.n_hi):
                if s0 + 1e-9 < s_c < se - 1e-9:
                    lo, hi = bounds_at(s_c)
                    if lo - 1e-9 <= n_c <= hi + 1e-9:
                        nodes.append((s_c, n_c))
    for poly_n in (nl, nr):
        keep = rdp(np.column_stack([sb, poly_n]), params.eps_rdp)
        for k in keep[1:-1]:  # boundary nodes at horizon start/end removed
            nodes.append((float(sb[k]), float(poly_n[k])))

    nodes = np.asarray(nodes, dtype=float)
    m = len(nodes)
    adj = [[] for _ in range(m)]
    for a in range(m):
        sa, na = nodes[a]
        for b in range(m):
            sb_, nb_ = nodes[b]
            if sb_ <= sa + 1e-9:
                continue
            if any(_segment_hits_rect(nodes[a], nodes[b], r) for r in rects):
                continue
            # Containment against the piecewise-linear bounds: linear edge vs
            # linear bound, so checking breakpoints and endpoints is exact.
            inside = True
            first = np.searchsorted(sb, sa + 1e-12)
            last = np.searchsorted(sb, sb_ - 1e-12)
            s_chk = np.concatenate(([sa], sb[first:last], [sb_]))
            n_edge = na + (nb_ - na) * (s_chk - sa) / (sb_ - sa)
            lo = np.interp(s_chk, sb, nr)
            hi = np.interp(s_chk, sb, nl)
            if np.any(n_edge < lo - 1e-9) or np.any(n_edge > hi + 1e-9):
                inside = False
            if inside:
                d = float(np.hypot(sb_ - sa, nb_ - na))
                chi = float(np.arctan2(nb_ - na, sb_ - sa))
                adj[a].append((b, d, chi))

    return VisibilityGraph(
        nodes=nodes,
        adj=adj,
        start=0,
        dest=1,
        obstacles=rects,
        bound_s=sb,
        bound_left=nl,
        bound_right=nr,
    )


def astar_path(graph: VisibilityGraph, w_d: float = 1.0, w_chi: float = 5.0):
    """Minimum-cost node path from start to destination.

    Cost per edge is ``w_d * length + w_chi * |atan2(dn, ds)|``; the
    heuristic applies the same formula to the straight shot at the
    destination, which never overestimates on a forward-in-s graph (the
    straight-line angle is a weighted mediant of the edge angles). Nodes are
    reopened when a cheaper path appears, so an inconsistent heuristic still
    yields the optimum.
    """
    nodes, dest = graph.nodes, graph.dest
    sd, nd = nodes[dest]

    def h(i):
        ds_, dn_ = sd - nodes[i, 0], nd - nodes[i, 1]
        if ds_ <= 0:
            return 0.0
        return w_d * np.hypot(ds_, dn_) + w_chi * abs(np.arctan2(dn_, ds_))

    best = {graph.start: 0.0}
    parent = {graph.start: -1}
    heap = [(h(graph.start), 0.0, graph.start)]
    while heap:
        f, g, i = heapq.heappop(heap)
        if g > best.get(i, np.inf) + 1e-15:
            continue
        if i == dest:
            path = [i]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            return path[::-1]
        for j, d, chi in graph.adj[i]:
            g2 = g + w_d * d + w_chi * abs(chi)
            if g2 < best.get(j, np.inf) - 1e-15:
                best[j] = g2
                parent[j] = i
                heapq.heappush(heap, (g2 + h(j), g2, j))
    raise NoPathError("destination not reachable in the visibility graph")


# ---------------------------------------------------------------------------
# Candidate assembly and feasibility


@dataclass
class TrajectoryCandidate:
    """Spline-smoothed candidate with the reconstructed model states."""

    s: np.ndarray
    t: np.ndarray
    sdot: np.ndarray
    V: np.ndarray
    n: np.ndarray
    chi: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    feasible: bool
    max_violation: float
    path: np.ndarray
    variant: ProgressVariant


def feasibility_check(path_nodes, variant: ProgressVariant, gg: GgDiagram,
                      track: TrackRibbon, params: BehaviorParams) -> TrajectoryCandidate:
    """Reconstruct the full state along a spline path and test the gg limits.

    A natural cubic spline n = f(s) through the path nodes combines with the
    variant's progress profile: V follows from the progress-rate relation,
    the lateral acceleration from the road-frame yaw rate, the longitudinal
    one from differentiating V over time.
    """
    pts = np.asarray(path_nodes, dtype=float)
    if len(pts) < 2:
        raise SpecError("path needs at least 2 nodes")
    keep = np.concatenate(([True], np.diff(pts[:, 0]) > 1e-2))
    pts = pts[keep]
    f = CubicSpline(pts[:, 0], pts[:, 1], bc_type="natural")

    s0, s_end = pts[0, 0], pts[-1, 0]
    m = max(int(np.ceil((s_end - s0) / params.ds_candidate)) + 1, 5)
    s = np.linspace(s0, s_end, m)
    n = f(s)
    fp = f(s, 1)
    fpp = f(s, 2)
    kappa = np.asarray(track.kappa_at(s), dtype=float)

    denom = 1.0 - n * kappa
    if np.any(denom <= 0):
        raise SingularityError("path leaves the valid ribbon region")

    sdot = variant.sdot_at_s(s)
    t = variant.t_at_s(s)
    chi = np.arctan(fp)
    V = sdot * denom / np.cos(chi)
    chi_dot = sdot * fpp / (1.0 + fp**2)
    ay = V * (kappa * sdot + chi_dot)
    ax = np.gradient(V, t)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        margins = np.asarray(gg.margin(V, ax, ay))
    worst = float(margins.max())
    return TrajectoryCandidate(
        s=s,
        t=t,
        sdot=sdot,
        V=V,
        n=n,
        chi=chi,
        ax=ax,
        ay=ay,
        feasible=worst <= params.tol_gg,
        max_violation=max(worst, 0.0),
        path=pts,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# Decision loop


@dataclass
class BehaviorDecision:
    """Passing sides per opponent plus the candidate that justified them."""

    sides: tuple          # per prediction: LEFT, RIGHT, or None (no contact)
    variant: ProgressVariant | None
    candidate: TrajectoryCandidate | None

    @property
    def empty(self) -> bool:
        return self.variant is None


def _extract_sides(cand: TrajectoryCandidate, graph: VisibilityGraph, n_preds: int):
    sides = [None] * n_preds
    ps, pn = cand.path[:, 0], cand.path[:, 1]
    for r in graph.obstacles:
        s_eval = float(np.clip(r.s_ref, ps[0], ps[-1]))
        n_path = float(np.interp(s_eval, ps, pn))
        sides[r.opp_index] = LEFT if n_path > r.n_center else RIGHT
    return tuple(sides)


def plan_behavior(prev: Trajectory, preds, gg: GgDiagram, track: TrackRibbon,
                  params: BehaviorParams):
    """Pick passing sides by scanning progress variants fastest-first.

    Returns a BehaviorDecision, an empty decision when there is nothing to
    decide (no opponents), or None when every variant fails - the caller
    falls back to following behind a moving wall.
    """
    if not preds:
        return BehaviorDecision(sides=(), variant=None, candidate=None)
    s0 = float(prev.s[0])
    se = s0 + params.horizon
    ego_n0 = float(prev.n[0])

    seen = set()
    for variant in generate_progress_variants(prev, preds, params, gg=gg):
        # Factor entries beyond the last consumed switch never influenced the
        # profile; skip exact duplicates of an already-tried prefix.
        sig = variant.factors[: variant.switches + 1]
        if sig in seen:
            continue
        seen.add(sig)
        try:
            graph = build_visibility_graph(
                variant, preds, track, (s0, se), params, ego_n0=ego_n0
            )
            path_idx = astar_path(graph, params.w_d, params.w_chi)
            cand = feasibility_check(
                graph.nodes[path_idx], variant, gg, track, params
            )
        except (BlockedError, NoPathError, SingularityError):
            continue
        if cand.feasible:
            return BehaviorDecision(
                sides=_extract_sides(cand, graph, len(preds)),
                variant=variant,
                candidate=cand,
            )
    return None
