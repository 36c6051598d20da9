"""Time-optimal trajectory refinement on a fixed arc-length grid.

The planning window [s0, s0+H] is discretized into ``n_grid`` intervals.
Each node carries the point-mass state (V, n, chi, ax, ay), the jerk inputs
(jx, jy), a clock variable t with t' = 1/sdot, and nonnegative slack
variables that soften the speed limit, the lateral corridor and the moving
wall.  The equations of motion, divided by the progress rate so that arc
length is the independent variable, are enforced with trapezoidal
collocation; acceleration limits, track bounds and heading bounds stay
hard.  Slack penalties carry both a linear and a quadratic term, and the
collision-related weights decay geometrically from the near end of the
horizon to the far end.

The resulting sparse NLP is solved by the in-house SQP iteration from
:mod:`raceplan.sqp` with a per-node block Hessian, which matches the exact
Lagrangian sparsity of the trapezoidal scheme.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .envelope import Corridor, MovingWall
from .errors import DomainError, GridError, InfeasibleHardError, SpecError
from .sqp import SqpProblem, solve_sqp
from .track import TrackRibbon
from .trajectory import Trajectory
from .vehicle import GgDiagram, VehicleState, s_dot

logger = logging.getLogger(__name__)

# convergence declares feasibility at the documented dynamics-residual
# level; tighter polishing stalls on flat (degenerate) optima
_FEAS_TOL = 1e-6

_BASE_VARS = ("V", "n", "chi", "ax", "ay", "jx", "jy", "t")
# state components that obey a collocation defect, in row order
_DEFECT_COMPS = ("V", "n", "chi", "ax", "ay", "t")


def slack_weight(s, w_s0, w_se, s0, se):
    """Geometric interpolation of a slack weight over the horizon.

    The weight equals ``w_s0`` at the near end and decays to ``w_se`` at the
    far end following ``w_se * (w_s0 / w_se) ** ((se - s) / (se - s0))``,
    i.e. log-linearly in ``s``.
    """
    if not (w_s0 > w_se > 0.0):
        raise DomainError("slack weights must satisfy w_s0 > w_se > 0")
    s = np.asarray(s, dtype=float)
    out = w_se * (w_s0 / w_se) ** ((se - s) / (se - s0))
    return float(out) if out.ndim == 0 else out


@dataclass
class OcpParams:
    """Tuning knobs of the refinement stage.

    ``n_grid`` counts collocation intervals (nodes = n_grid + 1).  The
    scheduled weight pairs give the (near, far) endpoint values of the
    geometric slack-weight decay; the velocity slack weights are constant
    over the horizon.
    """

    horizon: float = 300.0
    n_grid: int = 60
    w_jx: float = 1e-5
    w_jy: float = 1e-5
    w_eps_v: tuple = (10.0, 1.0)          # (linear, quadratic), constant
    w_eps_lat_lin: tuple = (50.0, 25.0)   # corridor slack, linear term
    w_eps_lat_quad: tuple = (5.0, 2.5)
    w_eps_wall_lin: tuple = (20.0, 10.0)  # wall slack, linear term
    w_eps_wall_quad: tuple = (2.0, 1.0)
    d_s: float = 0.8
    v_max: float = 83.0
    v_min: float = 1.0
    kkt_tol: float = 1e-4
    max_iterations: int = 200

    def __post_init__(self):
        if self.n_grid < 20:
            raise SpecError("grid must have at least 20 intervals")
        if self.horizon <= 0:
            raise SpecError("horizon must be positive")
        for pair in (self.w_eps_lat_lin, self.w_eps_lat_quad,
                     self.w_eps_wall_lin, self.w_eps_wall_quad):
            if not (pair[0] > pair[1] > 0.0):
                raise SpecError(
                    "scheduled slack weights must decay toward the far end")
        if min(self.w_jx, self.w_jy, *self.w_eps_v) < 0.0:
            raise SpecError("weights must be nonnegative")
        if not 0.0 < self.v_min < self.v_max:
            raise SpecError("need 0 < v_min < v_max")


@dataclass
class OcpProblem:
    """One refinement instance: grid, constraint data and initial guess."""

    track: TrackRibbon
    gg: GgDiagram
    params: OcpParams
    s0: float
    init_state: VehicleState
    guess: Trajectory
    corridor: Optional[Corridor] = None
    wall: Optional[MovingWall] = None
    s_grid: np.ndarray = field(init=False)

    def __post_init__(self):
        p = self.params
        self.s_grid = np.linspace(self.s0, self.s0 + p.horizon, p.n_grid + 1)
        if self.gg.p != 1.0:
            raise SpecError("the refinement stage needs the diamond rule (p=1)")
        st = self.init_state
        if st.V <= 0.0:
            raise DomainError("initial speed must be positive")
        if abs(st.chi) >= np.pi / 2:
            raise DomainError("initial heading error must be below pi/2")
        n_l = self.track.n_left_at(self.s0) - p.d_s
        n_r = self.track.n_right_at(self.s0) + p.d_s
        if not (n_r - 1e-6 <= st.n <= n_l + 1e-6):
            raise DomainError("initial lateral offset violates track bounds")
        if self.corridor is not None:
            if self.corridor.s.shape != self.s_grid.shape or not np.allclose(
                    self.corridor.s, self.s_grid, atol=1e-9):
                raise GridError("corridor grid does not match the horizon grid")


@dataclass
class OcpSolution:
    """Converged (or best-effort) refinement output on the grid."""

    s: np.ndarray
    t: np.ndarray
    V: np.ndarray
    n: np.ndarray
    chi: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    slacks: dict
    objective: float
    status: str
    iterations: int
    kkt_residual: float
    solve_time: float
    working_set: list
    trace: list

    def to_trajectory(self, track: TrackRibbon) -> Trajectory:
        sdot = s_dot(self.V, self.n, self.chi, track.kappa_at(self.s))
        return Trajectory(s=self.s, t=self.t, sdot=sdot, V=self.V, n=self.n,
                          chi=self.chi, ax=self.ax, ay=self.ay,
                          jx=self.jx, jy=self.jy)


def _interp_with_slope(v, xs, ys):
    """Piecewise-linear table lookup returning value and local slope.

    Outside the table the value is clamped and the slope is zero, matching
    the clamped lookup used everywhere else.
    """
    v = np.asarray(v, dtype=float)
    idx = np.clip(np.searchsorted(xs, v, side="right") - 1, 0, xs.size - 2)
    slope = (ys[idx + 1] - ys[idx]) / (xs[idx + 1] - xs[idx])
    val = ys[idx] + slope * (v - xs[idx])
    below = v < xs[0]
    above = v > xs[-1]
    val = np.where(below, ys[0], np.where(above, ys[-1], val))
    slope = np.where(below | above, 0.0, slope)
    return val, slope


class OcpNlp:
    """Sparse NLP assembled from an :class:`OcpProblem`.

    Variable layout is node-major: the base variables (V, n, chi, ax, ay,
    jx, jy, t) followed by the slack variables present for this problem
    (eps_v always; eps_l/eps_r with a corridor; eps_s with a wall).
    """

    def __init__(self, problem: OcpProblem):
        self.problem = problem
        p = problem.params
        self.s = problem.s_grid
        self.nn = self.s.size
        self.h = np.diff(self.s)
        self.kappa = problem.track.kappa_at(self.s)
        self.n_l_tr = problem.track.n_left_at(self.s)
        self.n_r_tr = problem.track.n_right_at(self.s)
        self.has_corr = problem.corridor is not None
        self.has_wall = problem.wall is not None

        names = list(_BASE_VARS) + ["eps_v"]
        if self.has_corr:
            names += ["eps_l", "eps_r"]
        if self.has_wall:
            names += ["eps_s"]
        self.var_names = tuple(names)
        self.nvn = len(names)
        self.pos = {nm: j for j, nm in enumerate(names)}
        self.n_vars = self.nn * self.nvn

        # trapezoid quadrature weights over s
        w = np.zeros(self.nn)
        w[:-1] += 0.5 * self.h
        w[1:] += 0.5 * self.h
        self.trapz_w = w

        # scheduled slack weights per node
        s0, se = self.s[0], self.s[-1]
        self.w_lat_lin = slack_weight(self.s, *p.w_eps_lat_lin, s0, se)
        self.w_lat_quad = slack_weight(self.s, *p.w_eps_lat_quad, s0, se)
        self.w_wall_lin = slack_weight(self.s, *p.w_eps_wall_lin, s0, se)
        self.w_wall_quad = slack_weight(self.s, *p.w_eps_wall_quad, s0, se)

        self._col = np.arange(self.n_vars).reshape(self.nn, self.nvn)
        self._comp_cols = np.array([self.pos[nm] for nm in _DEFECT_COMPS])
        self._build_equality_pattern()
        self._build_inequalities()
        self._build_blocks()

    # -- equality constraints -------------------------------------------
    def _build_equality_pattern(self):
        nn, nvn = self.nn, self.nvn
        nint = nn - 1
        comp_abs = self._col[:, self._comp_cols]          # (nn, 6)
        r_def = 6 + np.arange(6 * nint).reshape(nint, 6)
        rows = [np.arange(6), r_def.ravel(), r_def.ravel()]
        cols = [comp_abs[0], comp_abs[1:].ravel(), comp_abs[:-1].ravel()]
        # derivative entries: per interval, per component, the seven
        # dynamic variables (V..jy) at the lower and upper node
        dyn_cols = self._col[:, :7]
        rows.append(np.repeat(r_def.ravel(), 7))
        cols.append(np.broadcast_to(dyn_cols[:-1, None, :],
                                    (nint, 6, 7)).ravel())
        rows.append(np.repeat(r_def.ravel(), 7))
        cols.append(np.broadcast_to(dyn_cols[1:, None, :],
                                    (nint, 6, 7)).ravel())
        self._eq_rows = np.concatenate(rows)
        self._eq_cols = np.concatenate(cols)
        self._m_eq = 6 + 6 * nint
        st = self.problem.init_state
        self._x0_fixed = np.array([st.V, st.n, st.chi, st.ax, st.ay, 0.0])

    def _node_dynamics(self, z):
        """Per-node derivative vector F = dx/ds and its Jacobian."""
        V, n, chi = z[:, 0], z[:, 1], z[:, 2]
        ax, ay = z[:, 3], z[:, 4]
        jx, jy = z[:, 5], z[:, 6]
        sd = s_dot(V, n, chi, self.kappa)
        q = 1.0 / sd
        cos = np.cos(chi)
        tan = np.tan(chi)
        one = 1.0 - n * self.kappa
        q_v = -q / V
        q_n = -self.kappa / (V * cos)
        q_chi = q * tan
        F = np.empty((self.nn, 6))
        F[:, 0] = ax * q
        F[:, 1] = tan * one
        F[:, 2] = ay * q / V - self.kappa
        F[:, 3] = jx * q
        F[:, 4] = jy * q
        F[:, 5] = q
        dF = np.zeros((self.nn, 6, 7))
        dF[:, 0, 0] = ax * q_v
        dF[:, 0, 1] = ax * q_n
        dF[:, 0, 2] = ax * q_chi
        dF[:, 0, 3] = q
        dF[:, 1, 1] = -self.kappa * tan
        dF[:, 1, 2] = one / cos ** 2
        dF[:, 2, 0] = -2.0 * ay * q / V ** 2
        dF[:, 2, 1] = ay * q_n / V
        dF[:, 2, 2] = ay * q_chi / V
        dF[:, 2, 4] = q / V
        dF[:, 3, 0] = jx * q_v
        dF[:, 3, 1] = jx * q_n
        dF[:, 3, 2] = jx * q_chi
        dF[:, 3, 5] = q
        dF[:, 4, 0] = jy * q_v
        dF[:, 4, 1] = jy * q_n
        dF[:, 4, 2] = jy * q_chi
        dF[:, 4, 6] = q
        dF[:, 5, 0] = q_v
        dF[:, 5, 1] = q_n
        dF[:, 5, 2] = q_chi
        return F, dF, q, q_v, q_n, q_chi

    def equalities(self, x):
        z = x.reshape(self.nn, self.nvn)
        F, dF, *_ = self._node_dynamics(z)
        comp = z[:, self._comp_cols]
        hh = self.h[:, None]
        defects = comp[1:] - comp[:-1] - 0.5 * hh * (F[:-1] + F[1:])
        c = np.concatenate([comp[0] - self._x0_fixed, defects.ravel()])
        nint = self.nn - 1
        scale = (-0.5 * self.h)[:, None, None]
        data = np.concatenate([
            np.ones(6),
            np.ones(6 * nint),
            -np.ones(6 * nint),
            (scale * dF[:-1]).ravel(),
            (scale * dF[1:]).ravel(),
        ])
        jac = sp.csr_matrix((data, (self._eq_rows, self._eq_cols)),
                            shape=(self._m_eq, self.n_vars))
        return c, jac

    # -- inequality constraints ------------------------------------------
    def _build_inequalities(self):
        """Assemble the constant (linear) rows and the nonlinear pattern.

        Row order: velocity cap, speed floor, track bounds (left, right),
        heading bounds (upper, lower), corridor (left, right), wall, slack
        nonnegativity, then the four acceleration-diamond rows per node.
        """
        p = self.problem.params
        nn = self.nn
        inner = np.arange(1, nn)          # rows skipped at the fixed node 0
        every = np.arange(nn)
        rows, cols, vals, rhs = [], [], [], []
        hard = []
        counts = {}
        r = 0

        def _add(name, node_idx, terms, const, is_hard):
            """Append len(node_idx) rows: sum(coef * var) + const >= 0."""
            nonlocal r
            m = node_idx.size
            for var, coef in terms:
                rows.append(np.arange(r, r + m))
                cols.append(self._col[node_idx, self.pos[var]])
                vals.append(np.broadcast_to(coef, (m,)).astype(float))
            rhs.append(np.broadcast_to(const, (m,)).astype(float))
            hard.append(np.full(m, is_hard))
            counts[name] = counts.get(name, 0) + m
            r += m

        _add("velocity", inner, [("V", -1.0), ("eps_v", 1.0)], p.v_max, False)
        _add("speed_floor", inner, [("V", 1.0)], -p.v_min, True)
        _add("track_left", inner, [("n", -1.0)],
             self.n_l_tr[1:] - p.d_s, True)
        _add("track_right", inner, [("n", 1.0)],
             -(self.n_r_tr[1:] + p.d_s), True)
        _add("heading_upper", inner, [("chi", -1.0)], np.pi / 2, True)
        _add("heading_lower", inner, [("chi", 1.0)], np.pi / 2, True)
        if self.has_corr:
            cor = self.problem.corridor
            _add("corridor_left", every, [("n", -1.0), ("eps_l", 1.0)],
                 cor.n_l - p.d_s, False)
            _add("corridor_right", every, [("n", 1.0), ("eps_r", 1.0)],
                 -(cor.n_r + p.d_s), False)
        if self.has_wall:
            wall = self.problem.wall
            _add("wall", every, [("t", wall.V_coll), ("eps_s", 1.0)],
                 wall.s_coll - self.s, False)
        for nm in self.var_names[len(_BASE_VARS):]:
            _add(f"nonneg_{nm}", every, [(nm, 1.0)], 0.0, True)

        self._lin_rows = r
        self._lin_mat = sp.csr_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(r, self.n_vars))
        self._lin_rhs = np.concatenate(rhs)

        # acceleration diamond: four nonlinear rows per inner node
        n_gg = 4 * (nn - 1)
        counts["gg"] = n_gg
        vcols = self._col[1:, self.pos["V"]]
        axcols = self._col[1:, self.pos["ax"]]
        aycols = self._col[1:, self.pos["ay"]]
        self._gg_rows = np.repeat(np.arange(n_gg), 3)
        self._gg_cols = np.stack(
            [np.repeat(vcols, 4), np.repeat(axcols, 4), np.repeat(aycols, 4)],
            axis=-1).ravel()
        self._n_gg = n_gg
        self.m_in = r + n_gg
        self.hard_mask = np.concatenate([np.concatenate(hard),
                                         np.full(n_gg, True)])
        self.row_counts = counts
        gg = self.problem.gg
        self._tables = (np.asarray(gg.speeds), np.asarray(gg.ax_acc),
                        np.asarray(gg.ax_brake), np.asarray(gg.ay_max))

    def inequalities(self, x):
        z = x.reshape(self.nn, self.nvn)
        lin = self._lin_mat @ x + self._lin_rhs
        V, ax, ay = z[1:, 0], z[1:, 3], z[1:, 4]
        speeds, t_acc, t_brk, t_lat = self._tables
        axa, da = _interp_with_slope(V, speeds, t_acc)
        axb, db = _interp_with_slope(V, speeds, t_brk)
        aya, dy = _interp_with_slope(V, speeds, t_lat)
        gx_a = ax / axa
        gx_b = ax / axb
        gy = ay / aya
        m = V.size
        vals = np.empty((m, 4))
        vals[:, 0] = 1.0 - gx_a - gy
        vals[:, 1] = 1.0 - gx_a + gy
        vals[:, 2] = 1.0 + gx_b - gy
        vals[:, 3] = 1.0 + gx_b + gy
        d_v = np.empty((m, 4))
        acc_term = gx_a * da / axa
        brk_term = gx_b * db / axb
        lat_term = gy * dy / aya
        d_v[:, 0] = acc_term + lat_term
        d_v[:, 1] = acc_term - lat_term
        d_v[:, 2] = -brk_term + lat_term
        d_v[:, 3] = -brk_term - lat_term
        d_ax = np.stack([-1.0 / axa, -1.0 / axa, 1.0 / axb, 1.0 / axb],
                        axis=-1)
        d_ay = np.stack([-1.0 / aya, 1.0 / aya, -1.0 / aya, 1.0 / aya],
                        axis=-1)
        data = np.stack([d_v, d_ax, d_ay], axis=-1).ravel()
        jac_gg = sp.csr_matrix((data, (self._gg_rows, self._gg_cols)),
                               shape=(self._n_gg, self.n_vars))
        jac = sp.vstack([self._lin_mat, jac_gg], format="csr")
        return np.concatenate([lin, vals.ravel()]), jac

    def objective(self, x):
        z = x.reshape(self.nn, self.nvn)
        V, n, chi = z[:, 0], z[:, 1], z[:, 2]
        jx, jy = z[:, 5], z[:, 6]
        p = self.problem.params
        sd = s_dot(V, n, chi, self.kappa)
        q = 1.0 / sd
        w = self.trapz_w
        f = w @ (q + p.w_jx * jx ** 2 + p.w_jy * jy ** 2)
        g = np.zeros_like(z)
        cos = np.cos(chi)
        g[:, 0] = w * (-q / V)
        g[:, 1] = w * (-self.kappa / (V * cos))
        g[:, 2] = w * (q * np.tan(chi))
        g[:, 5] = 2.0 * w * p.w_jx * jx
        g[:, 6] = 2.0 * w * p.w_jy * jy
        for name, lin, quad in self._slack_costs():
            eps = z[:, self.pos[name]]
            f += w @ (lin * eps + quad * eps ** 2)
            g[:, self.pos[name]] = w * (lin + 2.0 * quad * eps)
        return float(f), g.ravel()

    def _slack_costs(self):
        p = self.problem.params
        ones = np.ones(self.nn)
        out = [("eps_v", p.w_eps_v[0] * ones, p.w_eps_v[1] * ones)]
        if self.has_corr:
            out.append(("eps_l", self.w_lat_lin, self.w_lat_quad))
            out.append(("eps_r", self.w_lat_lin, self.w_lat_quad))
        if self.has_wall:
            out.append(("eps_s", self.w_wall_lin, self.w_wall_quad))
        return out

    # -- initial vector and solver glue ----------------------------------
    def _build_blocks(self):
        self.hess_blocks = [self._col[k] for k in range(self.nn)]
        p = self.problem.params
        diag = np.zeros((self.nn, self.nvn))
        diag[:, self.pos["V"]] = 0.02
        diag[:, self.pos["n"]] = 0.5
        diag[:, self.pos["chi"]] = 5.0
        diag[:, self.pos["ax"]] = 0.02
        diag[:, self.pos["ay"]] = 0.02
        diag[:, self.pos["jx"]] = np.maximum(
            2.0 * p.w_jx * self.trapz_w, 1e-4)
        diag[:, self.pos["jy"]] = np.maximum(
            2.0 * p.w_jy * self.trapz_w, 1e-4)
        diag[:, self.pos["t"]] = 0.1
        for name, _, quad in self._slack_costs():
            diag[:, self.pos[name]] = np.maximum(
                2.0 * quad * self.trapz_w, 1e-2)
        self.init_diag = diag.ravel()

    def initial_vector(self):
        """Sample the guess onto the grid and preload slacks with excesses."""
        prob = self.problem
        p = prob.params
        tr = prob.guess
        z = np.zeros((self.nn, self.nvn))

        def _col_of(name):
            return np.interp(self.s, tr.s, getattr(tr, name))

        z[:, 0] = np.maximum(_col_of("V"), p.v_min)
        z[:, 1] = _col_of("n")
        z[:, 2] = np.clip(_col_of("chi"), -np.pi / 2 + 1e-2, np.pi / 2 - 1e-2)
        z[:, 3] = _col_of("ax")
        z[:, 4] = _col_of("ay")
        tt = tr.t_at(self.s)
        tt = tt - tt[0]
        z[:, 7] = tt
        if tr.jx is not None and tr.jy is not None:
            z[:, 5] = np.interp(self.s, tr.s, tr.jx)
            z[:, 6] = np.interp(self.s, tr.s, tr.jy)
        else:
            dt = np.maximum(np.gradient(tt), 1e-6)
            z[:, 5] = np.gradient(z[:, 3]) / dt
            z[:, 6] = np.gradient(z[:, 4]) / dt
        st = prob.init_state
        z[0, :5] = [st.V, st.n, st.chi, st.ax, st.ay]
        z[0, 7] = 0.0
        z[:, self.pos["eps_v"]] = np.maximum(z[:, 0] - p.v_max, 0.0)
        if self.has_corr:
            cor = prob.corridor
            z[:, self.pos["eps_l"]] = np.maximum(
                z[:, 1] - (cor.n_l - p.d_s), 0.0)
            z[:, self.pos["eps_r"]] = np.maximum(
                (cor.n_r + p.d_s) - z[:, 1], 0.0)
        if self.has_wall:
            wall = prob.wall
            z[:, self.pos["eps_s"]] = np.maximum(
                self.s - (wall.s_coll + wall.V_coll * z[:, 7]), 0.0)
        return z.ravel()

    def sqp_problem(self):
        nonlin = np.zeros(self.m_in, dtype=bool)
        nonlin[self._lin_rows:] = True   # only the acceleration rows
        return SqpProblem(
            n_vars=self.n_vars,
            objective=self.objective,
            equalities=self.equalities,
            inequalities=self.inequalities,
            hard_ineq=self.hard_mask,
            nonlin_ineq=nonlin,
            hess_blocks=self.hess_blocks,
            init_hessian_diag=self.init_diag,
        )


def transcribe(problem: OcpProblem) -> OcpNlp:
    """Build the sparse NLP for a refinement instance."""
    return OcpNlp(problem)


def solve(problem: OcpProblem, warm_set=None, trace_path=None) -> OcpSolution:
    """Solve a refinement instance with the in-house SQP iteration.

    Raises :class:`InfeasibleHardError` when no iterate satisfies the hard
    constraints to within 1e-3 even after restoration; the caller is
    expected to fall back to its previous trajectory.
    """
    nlp = transcribe(problem)
    x0 = nlp.initial_vector()
    start = time.perf_counter()
    res = solve_sqp(nlp.sqp_problem(), x0,
                    tol=problem.params.kkt_tol,
                    feas_tol=_FEAS_TOL,
                    max_iter=problem.params.max_iterations,
                    warm_set=warm_set)
    elapsed = time.perf_counter() - start
    if trace_path is not None:
        _write_trace(trace_path, res.trace)
    if res.status == "infeasible-hard":
        raise InfeasibleHardError(
            f"hard constraint violation {res.hard_violation:.2e} "
            "after restoration")
    z = res.x.reshape(nlp.nn, nlp.nvn)
    slacks = {nm: z[:, nlp.pos[nm]].copy()
              for nm in nlp.var_names[len(_BASE_VARS):]}
    sol = OcpSolution(
        s=nlp.s.copy(), t=z[:, 7].copy(), V=z[:, 0].copy(), n=z[:, 1].copy(),
        chi=z[:, 2].copy(), ax=z[:, 3].copy(), ay=z[:, 4].copy(),
        jx=z[:, 5].copy(), jy=z[:, 6].copy(), slacks=slacks,
        objective=res.objective, status=res.status, iterations=res.iterations,
        kkt_residual=res.kkt_residual, solve_time=elapsed,
        working_set=res.working_set, trace=res.trace)
    logger.debug("ocp solve: status=%s iters=%d kkt=%.2e time=%.3fs",
                 res.status, res.iterations, res.kkt_residual, elapsed)
    return sol


def _write_trace(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,objective,kkt,violation,penalty,alpha\n")
        for row in trace:
            fh.write("%d,%.9e,%.3e,%.3e,%.3e,%s\n" % (
                row["iter"], row["objective"], row["kkt"], row["violation"],
                row["penalty"], format(row.get("alpha", ""), "")))


def save_solution_csv(sol: OcpSolution, path):
    """Dump a solution as CSV with one row per grid node."""
    names = ["s", "t", "V", "n", "chi", "ax", "ay", "jx", "jy"]
    cols = [getattr(sol, nm) for nm in names]
    for nm in sorted(sol.slacks):
        names.append(nm)
        cols.append(sol.slacks[nm])
    mat = np.column_stack(cols)
    header = ",".join(names)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in mat:
            fh.write(",".join("%.12g" % v for v in row) + "\n")


def shifted_guess(prev: Trajectory, track: TrackRibbon, s_grid) -> Trajectory:
    """Shift a previous plan onto a new grid, extending the tail steadily.

    Columns inside the previous coverage are interpolated; beyond it the
    speed and lateral offset are held while heading error, accelerations
    and jerks return to zero.  The clock is rebuilt by integrating the
    progress rate over the new grid.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    inside = s_grid <= prev.s[-1]
    cols = {}
    for name in ("V", "n", "chi", "ax", "ay"):
        cols[name] = np.interp(s_grid, prev.s, getattr(prev, name))
    for name in ("chi", "ax", "ay"):
        cols[name] = np.where(inside, cols[name], 0.0)
    jx = np.interp(s_grid, prev.s, prev.jx) if prev.jx is not None \
        else np.zeros_like(s_grid)
    jy = np.interp(s_grid, prev.s, prev.jy) if prev.jy is not None \
        else np.zeros_like(s_grid)
    jx = np.where(inside, jx, 0.0)
    jy = np.where(inside, jy, 0.0)
    sdot = s_dot(cols["V"], cols["n"], cols["chi"], track.kappa_at(s_grid))
    q = 1.0 / sdot
    t = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s_grid) * (q[1:] + q[:-1]))])
    return Trajectory(s=s_grid, t=t, sdot=sdot, V=cols["V"], n=cols["n"],
                      chi=cols["chi"], ax=cols["ax"], ay=cols["ay"],
                      jx=jx, jy=jy)
