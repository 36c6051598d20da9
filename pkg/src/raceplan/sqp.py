"""Sequential quadratic programming on top of an active-set QP solver.

The quadratic subproblems

    min  1/2 d'H d + g'd   s.t.  A d = b,   C d >= e

are solved with a dual active-set iteration in the Goldfarb-Idnani style:
starting from the equality-constrained minimizer, violated inequality rows
are activated one at a time while dual feasibility (nonnegative multipliers)
is maintained, which makes the method self-starting -- no phase-1 problem is
needed.  Every step requires one linear solve with the current KKT matrix.
The solver keeps a sparse LU factorization of a *base* working set and
handles rows activated since the last refactorization through a dense
bordered Schur complement, so activating a constraint costs a pair of
triangular backsolves instead of a fresh factorization.

The outer loop is a damped-BFGS line-search SQP with an l1 merit function,
a second-order correction step against the Maratos effect, and a
Gauss-Newton restoration phase for iterates whose linearized constraints
are inconsistent.  The Lagrangian Hessian approximation may be maintained
as independent diagonal blocks, which keeps the QP matrices sparse for
trajectory problems whose exact Lagrangian Hessian is block-diagonal.

Everything in this module is deterministic: ties are broken by lowest
index and no randomized pivoting or timing-dependent logic is used.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import RaceplanError

logger = logging.getLogger(__name__)

# exceptions a merit/restoration trial point is allowed to trigger: the
# point is then simply scored as +inf instead of aborting the solve
_EVAL_ERRORS = (ValueError, FloatingPointError, ArithmeticError, RaceplanError)


class _SingularKkt(Exception):
    """Internal: the KKT system for the current working set is singular."""


def _as_csr(mat, n_cols):
    if mat is None:
        return sp.csr_matrix((0, n_cols))
    if sp.issparse(mat):
        return mat.tocsr()
    arr = np.atleast_2d(np.asarray(mat, dtype=float))
    return sp.csr_matrix(arr)


class _KktSolver:
    """Linear solves with [[H, N'], [N, 0]] for a growing working set.

    ``N`` stacks all equality rows plus the inequality rows in the working
    set.  The base part is factorized with SuperLU; rows added afterwards
    are bordered:  with V the added rows (extended by zeros over the dual
    columns), solutions of the bordered system come from the base
    factorization and the small dense Schur complement V K0^-1 V'.
    """

    def __init__(self, hess, eq_rows, ineq_rows, max_border=48):
        self._hess = hess.tocsc()
        self._n = hess.shape[0]
        self._eq = eq_rows.tocsr()
        self._me = eq_rows.shape[0]
        self._ineq = ineq_rows.tocsr()
        self._max_border = max_border
        self.base_set: list = []
        self._border_set: list = []
        self._border_rows: list = []
        self._border_cols: list = []
        self._schur = np.zeros((0, 0))
        self._lu = None
        self._msys = 0

    @property
    def working_set(self):
        return self.base_set + self._border_set

    def set_base(self, working):
        """Refactorize with ``working`` as the base set, empty border."""
        self.base_set = list(working)
        self._border_set = []
        self._border_rows = []
        self._border_cols = []
        self._schur = np.zeros((0, 0))
        rows = []
        if self._me:
            rows.append(self._eq)
        if self.base_set:
            rows.append(self._ineq[self.base_set])
        if rows:
            stacked = sp.vstack(rows, format="csc")
            kkt = sp.bmat([[self._hess, stacked.T], [stacked, None]], format="csc")
        else:
            kkt = self._hess
        self._msys = kkt.shape[0]
        try:
            self._lu = splu(kkt)
        except RuntimeError as exc:  # noqa: B904 - SuperLU raises RuntimeError
            raise _SingularKkt(str(exc))

    def _base_solve(self, rhs):
        sol = self._lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise _SingularKkt("non-finite KKT solution")
        return sol

    def add(self, idx):
        """Activate inequality row ``idx`` via the bordered complement."""
        if len(self._border_set) >= self._max_border:
            self.set_base(self.working_set)
        row = self._ineq[idx].toarray().ravel()
        rhs = np.zeros(self._msys)
        rhs[: self._n] = row
        col = self._base_solve(rhs)
        k = len(self._border_set)
        schur = np.empty((k + 1, k + 1))
        schur[:k, :k] = self._schur
        for j in range(k):
            schur[k, j] = row @ self._border_cols[j][: self._n]
            schur[j, k] = self._border_rows[j] @ col[: self._n]
        schur[k, k] = row @ col[: self._n]
        self._schur = schur
        self._border_set.append(idx)
        self._border_rows.append(row)
        self._border_cols.append(col)

    def drop(self, idx):
        """Deactivate inequality row ``idx``."""
        if idx in self._border_set:
            j = self._border_set.index(idx)
            del self._border_set[j]
            del self._border_rows[j]
            del self._border_cols[j]
            self._schur = np.delete(np.delete(self._schur, j, 0), j, 1)
        else:
            keep = [i for i in self.base_set if i != idx] + self._border_set
            self.set_base(keep)

    def solve(self, rhs_primal, rhs_eq, rhs_w):
        """Solve for (x, mult) with H x - N' mult = rhs_primal, N x = rhs.

        ``rhs_w`` is aligned with :attr:`working_set`.  Returns the primal
        part, the equality multipliers and the working-set multipliers.
        """
        nb = len(self.base_set)
        rhs = np.concatenate([rhs_primal, rhs_eq, rhs_w[:nb]])
        sol = self._base_solve(rhs)
        kb = len(self._border_set)
        if kb:
            resid = np.array(
                [r @ sol[: self._n] for r in self._border_rows]
            ) - rhs_w[nb:]
            z = scipy.linalg.solve(self._schur, resid)
            for j in range(kb):
                sol = sol - z[j] * self._border_cols[j]
            nu = np.concatenate([sol[self._n:], z])
        else:
            nu = sol[self._n:]
        x = sol[: self._n]
        mult = -nu
        return x, mult[: self._me], mult[self._me:]


@dataclass
class QpResult:
    """Outcome of a convex QP solve."""

    x: np.ndarray
    objective: float
    mult_eq: np.ndarray
    mult_ineq: np.ndarray
    working_set: list
    status: str  # "optimal" | "infeasible" | "maxiter" | "singular"
    iterations: int


def solve_qp(hess, grad, eq_mat=None, eq_rhs=None, ineq_mat=None, ineq_rhs=None,
             warm_set=None, feas_tol=1e-8, max_iter=None):
    """Minimize 1/2 x'Hx + g'x subject to A x = b and C x >= e.

    ``hess`` must be symmetric positive definite.  ``warm_set`` seeds the
    working set; wrong guesses only cost extra iterations, never
    correctness.  All ties are broken toward the lowest row index, so the
    result is a deterministic function of the inputs.
    """
    grad = np.asarray(grad, dtype=float)
    n = grad.shape[0]
    if sp.issparse(hess):
        hess = hess.tocsc()
    else:
        hess = sp.csc_matrix(np.atleast_2d(np.asarray(hess, dtype=float)))
    eq = _as_csr(eq_mat, n)
    beq = np.zeros(0) if eq_rhs is None else np.asarray(eq_rhs, dtype=float)
    ineq = _as_csr(ineq_mat, n)
    bin_ = np.zeros(0) if ineq_rhs is None else np.asarray(ineq_rhs, dtype=float)
    me, mi = eq.shape[0], ineq.shape[0]
    if max_iter is None:
        max_iter = 10 * (mi + 10)

    kkt = _KktSolver(hess, eq, ineq)

    def _result(x, mult_eq, lam_w, wset, status, iters):
        mult_in = np.zeros(mi)
        for j, idx in enumerate(wset):
            mult_in[idx] = max(lam_w[j], 0.0)
        obj = 0.5 * x @ (hess @ x) + grad @ x
        return QpResult(x, float(obj), mult_eq, mult_in, sorted(wset),
                        status, iters)

    # --- initial equality-constrained solve, dropping warm rows whose
    # multipliers come out negative so the dual iteration starts feasible
    wset = []
    if warm_set:
        seen = set()
        for idx in warm_set:
            if 0 <= idx < mi and idx not in seen:
                seen.add(idx)
                wset.append(idx)
    while True:
        try:
            kkt.set_base(wset)
            x, mu, lam = kkt.solve(-grad, beq, bin_[wset])
        except _SingularKkt:
            if wset:
                wset = []
                continue
            return _result(np.zeros(n), np.zeros(me), [], [], "singular", 0)
        neg = [wset[j] for j in range(len(wset)) if lam[j] < -1e-10]
        if not neg:
            break
        wset = [i for i in wset if i not in neg]
    lam = np.maximum(lam, 0.0)

    if mi == 0:
        return _result(x, mu, lam, wset, "optimal", 0)

    iters = 0
    polish_budget = 3
    while True:
        slack = ineq @ x - bin_
        p = int(np.argmin(slack))
        if slack[p] >= -feas_tol:
            # polish: resolve the EQP exactly and re-verify feasibility
            wset = kkt.working_set
            x, mu, lam = kkt.solve(-grad, beq, bin_[wset])
            lam = np.maximum(lam, 0.0)
            slack = ineq @ x - bin_
            p = int(np.argmin(slack))
            if slack[p] >= -10 * feas_tol or polish_budget == 0:
                return _result(x, mu, lam, wset, "optimal", iters)
            polish_budget -= 1
        row = ineq[p].toarray().ravel()
        lam_p = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return _result(x, mu, lam, kkt.working_set, "maxiter", iters)
            try:
                z, mu_dot, lam_dot = kkt.solve(row, np.zeros(me),
                                               np.zeros(len(kkt.working_set)))
            except _SingularKkt:
                return _result(x, mu, lam, kkt.working_set, "singular", iters)
            sigma = row @ z
            znorm = np.max(np.abs(z)) if n else 0.0
            progress = sigma > 1e-13 * max(1.0, znorm) and znorm > 1e-12 * max(
                1.0, np.max(np.abs(x)))
            # dual blocking constraint: lam_j + t*lam_dot_j >= 0
            t_dual = np.inf
            k_block = -1
            for j, idx in enumerate(kkt.working_set):
                if lam_dot[j] < -1e-12:
                    tj = lam[j] / (-lam_dot[j])
                    if tj < t_dual - 1e-14 or (abs(tj - t_dual) <= 1e-14
                                               and 0 <= k_block
                                               and idx < kkt.working_set[k_block]):
                        t_dual = tj
                        k_block = j
            viol = bin_[p] - row @ x
            t_full = viol / sigma if progress else np.inf
            if not np.isfinite(min(t_dual, t_full)):
                return _result(x, mu, lam, kkt.working_set, "infeasible", iters)
            t = min(t_dual, t_full)
            if progress:
                x = x + t * z
            mu = mu + t * mu_dot
            lam = np.maximum(lam + t * lam_dot, 0.0)
            lam_p += t
            if t_full <= t_dual:
                kkt.add(p)
                lam = np.append(lam, lam_p)
                break
            # dropping preserves the relative order of the remaining rows,
            # so the multiplier array just loses the blocking entry
            kkt.drop(kkt.working_set[k_block])
            lam = np.delete(lam, k_block)


@dataclass
class SqpProblem:
    """A smooth NLP: min f(x) s.t. c_eq(x) = 0 and c_in(x) >= 0.

    ``objective(x)`` returns ``(f, grad)``; the constraint callbacks return
    ``(values, jacobian)`` with sparse or dense Jacobians.  ``hard_ineq``
    marks rows that restoration must repair and that define the
    hard-feasibility verdict (default: every row).  ``nonlin_ineq`` marks
    rows whose value is a nonlinear function of x: only those (plus rows
    currently violated) can regress along a line-search segment, so only
    their multipliers drive the merit penalty (default: every row).
    ``hess_blocks`` partitions the variables into independent BFGS blocks.
    """

    n_vars: int
    objective: Callable
    equalities: Optional[Callable] = None
    inequalities: Optional[Callable] = None
    hard_ineq: Optional[np.ndarray] = None
    nonlin_ineq: Optional[np.ndarray] = None
    hess_blocks: Optional[Sequence[np.ndarray]] = None
    init_hessian_diag: Optional[np.ndarray] = None


@dataclass
class SqpResult:
    x: np.ndarray
    objective: float
    status: str  # "converged" | "max-iter" | "infeasible-hard"
    iterations: int
    kkt_residual: float
    constraint_violation: float
    hard_violation: float
    mult_eq: np.ndarray
    mult_ineq: np.ndarray
    working_set: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _eval_problem(problem, x):
    f, g = problem.objective(x)
    if problem.equalities is not None:
        ce, je = problem.equalities(x)
        ce = np.asarray(ce, dtype=float)
        je = _as_csr(je, problem.n_vars)
    else:
        ce, je = np.zeros(0), sp.csr_matrix((0, problem.n_vars))
    if problem.inequalities is not None:
        ci, ji = problem.inequalities(x)
        ci = np.asarray(ci, dtype=float)
        ji = _as_csr(ji, problem.n_vars)
    else:
        ci, ji = np.zeros(0), sp.csr_matrix((0, problem.n_vars))
    return float(f), np.asarray(g, dtype=float), ce, je, ci, ji


def _theta(ce, ci, mask=None):
    """l1 constraint violation, optionally restricted to masked rows."""
    viol = float(np.sum(np.abs(ce)))
    if ci.size:
        neg = np.minimum(ci, 0.0)
        if mask is not None:
            neg = neg[mask]
        viol -= float(np.sum(neg))
    return viol


def _theta_inf(ce, ci, mask=None):
    worst = float(np.max(np.abs(ce))) if ce.size else 0.0
    if ci.size:
        neg = -np.minimum(ci, 0.0)
        if mask is not None:
            neg = neg[mask]
        if neg.size:
            worst = max(worst, float(np.max(neg)))
    return worst


class _BlockHessian:
    """Damped BFGS approximation maintained as independent diagonal blocks."""

    def __init__(self, n, blocks=None, init_diag=None):
        if blocks is None:
            blocks = [np.arange(n)]
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        diag = np.ones(n) if init_diag is None else np.asarray(init_diag, float)
        self.mats = [np.diag(diag[b]) for b in self.blocks]
        self.n = n
        rows, cols = [], []
        for b in self.blocks:
            grid = np.meshgrid(b, b, indexing="ij")
            rows.append(grid[0].ravel())
            cols.append(grid[1].ravel())
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    def as_sparse(self):
        if len(self.blocks) == 1:
            return sp.csc_matrix(self.mats[0])
        vals = np.concatenate([mat.ravel() for mat in self.mats])
        return sp.csc_matrix((vals, (self._rows, self._cols)),
                             shape=(self.n, self.n))

    def update(self, s, y):
        """Powell-damped BFGS update applied block by block."""
        for b, mat in zip(self.blocks, self.mats):
            sb, yb = s[b], y[b]
            if np.max(np.abs(sb), initial=0.0) < 1e-14:
                continue
            bs = mat @ sb
            sbs = sb @ bs
            if sbs <= 1e-16:
                continue
            sy = sb @ yb
            if sy < 0.2 * sbs:
                theta = 0.8 * sbs / (sbs - sy)
                yb = theta * yb + (1.0 - theta) * bs
                sy = sb @ yb
            if sy <= 1e-14 * sbs:
                continue
            mat -= np.outer(bs, bs) / sbs
            mat += np.outer(yb, yb) / sy


def _kkt_residual(g, je, ji, ci, mu, lam):
    r = g.copy()
    if mu.size:
        r -= je.T @ mu
    if lam.size:
        r -= ji.T @ lam
    stat = float(np.max(np.abs(r))) if r.size else 0.0
    comp = float(np.max(np.abs(lam * ci))) if lam.size else 0.0
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 0.0)
    return max(stat, comp) / scale


def _restore(problem, x, hard_mask, target, max_steps=60):
    """Gauss-Newton phase minimizing squared hard-constraint violation."""
    nu = 1e-8
    for _ in range(max_steps):
        try:
            _, _, ce, je, ci, ji = _eval_problem(problem, x)
        except _EVAL_ERRORS:
            return x, False
        viol_inf = _theta_inf(ce, ci, hard_mask)
        if viol_inf <= target:
            return x, True
        rows = [je]
        res = [ce]
        if ci.size:
            bad = (ci < 0.0) & (hard_mask if hard_mask is not None
                                else np.ones(ci.size, bool))
            if np.any(bad):
                rows.append(ji[bad])
                res.append(ci[bad])
        jac = sp.vstack(rows, format="csc")
        r = np.concatenate(res)
        phi0 = 0.5 * r @ r
        normal = (jac.T @ jac).tocsc()
        rhs = -(jac.T @ r)
        stepped = False
        for _ in range(8):
            reg = normal + nu * sp.eye(problem.n_vars, format="csc")
            try:
                d = splu(reg).solve(rhs)
            except RuntimeError:
                nu *= 100.0
                continue
            alpha = 1.0
            for _ in range(25):
                try:
                    _, _, ce2, _, ci2, _ = _eval_problem(problem, x + alpha * d)
                    bad2 = np.minimum(ci2, 0.0)
                    if hard_mask is not None and ci2.size:
                        bad2 = bad2[hard_mask]
                    phi = 0.5 * (ce2 @ ce2 + bad2 @ bad2)
                except _EVAL_ERRORS:
                    phi = np.inf
                if phi < phi0 - 1e-16:
                    x = x + alpha * d
                    stepped = True
                    break
                alpha *= 0.5
            if stepped:
                nu = max(nu * 0.1, 1e-10)
                break
            nu *= 10.0
        if not stepped:
            return x, _theta_inf(ce, ci, hard_mask) <= target
    try:
        _, _, ce, _, ci, _ = _eval_problem(problem, x)
        return x, _theta_inf(ce, ci, hard_mask) <= target
    except _EVAL_ERRORS:
        return x, False


def solve_sqp(problem, x0, tol=1e-4, feas_tol=1e-8, max_iter=200,
              hard_tol=1e-3, warm_set=None, callback=None):
    """Run the SQP iteration from ``x0``.

    Returns an :class:`SqpResult`; ``status`` is ``converged`` when the
    scaled KKT residual drops below ``tol`` with constraint violation below
    ``feas_tol``, ``infeasible-hard`` when not even the restoration phase
    could bring the hard constraints below ``hard_tol``, and ``max-iter``
    otherwise.  The returned ``x`` is the best hard-feasible iterate seen.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (problem.n_vars,):
        raise ValueError("x0 has wrong length")
    f, g, ce, je, ci, ji = _eval_problem(problem, x)
    hard_mask = problem.hard_ineq
    if hard_mask is not None:
        hard_mask = np.asarray(hard_mask, dtype=bool)
    nl_mask = problem.nonlin_ineq
    if nl_mask is None:
        nl_mask = np.ones(ci.size, dtype=bool)
    else:
        nl_mask = np.asarray(nl_mask, dtype=bool)
    hessian = _BlockHessian(problem.n_vars, problem.hess_blocks,
                            problem.init_hessian_diag)
    mu = np.zeros(ce.size)
    lam = np.zeros(ci.size)
    rho = 1.0
    damp = 0.0
    d_init = problem.init_hessian_diag
    d_init = np.ones(problem.n_vars) if d_init is None \
        else np.asarray(d_init, dtype=float)
    wset = list(warm_set) if warm_set else []
    trace = []
    best = None
    restorations = 0
    status = "max-iter"
    it = 0

    def _track_best():
        nonlocal best
        hard = _theta_inf(ce, ci, hard_mask)
        if best is None:
            best = (hard, f, x.copy())
            return
        if hard <= 1e-5:
            if best[0] > 1e-5 or f < best[1]:
                best = (hard, f, x.copy())
        elif best[0] > 1e-5 and hard < best[0]:
            best = (hard, f, x.copy())

    _track_best()
    recent_f = []
    for it in range(1, max_iter + 1):
        kkt_res = _kkt_residual(g, je, ji, ci, mu, lam)
        theta_all = _theta_inf(ce, ci)
        trace.append({"iter": it, "objective": f, "kkt": kkt_res,
                      "violation": theta_all, "penalty": rho})
        if callback is not None:
            callback(it, x, f, kkt_res, theta_all)
        if kkt_res < tol and theta_all < feas_tol:
            status = "converged"
            break
        # plateau exit: nearly feasible with no measurable objective motion
        # over ten iterations means a flat (degenerate) optimum; polishing
        # further burns iterations without improving the returned plan
        recent_f.append(f)
        if len(recent_f) > 10:
            recent_f.pop(0)
            spread = max(recent_f) - min(recent_f)
            if spread < 1e-10 * max(1.0, abs(f)) and theta_all < 10.0 * feas_tol:
                logger.debug("plateau exit at iteration %d", it)
                break

        h_sp = hessian.as_sparse()
        if damp > 0.0:
            # short-step damping: when the merit function keeps rejecting
            # long proposals, pull the model back toward a scaled-identity
            # trust region until full steps are acceptable again
            h_sp = (h_sp + sp.diags(damp * d_init)).tocsc()
        qp = solve_qp(h_sp, g, je, -ce, ji, -ci, warm_set=wset)
        if qp.status in ("infeasible", "singular", "maxiter"):
            logger.debug("qp status %s at iteration %d", qp.status, it)
            if restorations < 3 and _theta_inf(ce, ci, hard_mask) > feas_tol:
                restorations += 1
                x, ok = _restore(problem, x, hard_mask, target=1e-6)
                f, g, ce, je, ci, ji = _eval_problem(problem, x)
                _track_best()
                if ok:
                    wset = []
                    continue
            status = "max-iter"
            break
        d = qp.x
        wset = qp.working_set
        mu_new, lam_new = qp.mult_eq, qp.mult_ineq

        step_inf = float(np.max(np.abs(d))) if d.size else 0.0
        if step_inf < 1e-12 * max(1.0, float(np.max(np.abs(x)))) \
                and theta_all < feas_tol:
            # null step: the QP multipliers either certify optimality or
            # nothing further can improve the iterate
            mu, lam = mu_new, lam_new
            kkt_res = _kkt_residual(g, je, ji, ci, mu, lam)
            status = "converged" if kkt_res < tol else "max-iter"
            trace.append({"iter": it + 1, "objective": f, "kkt": kkt_res,
                          "violation": theta_all, "penalty": rho})
            break

        # l1 penalty large enough to make d a descent direction.  Linear
        # rows never regress along the step (the QP enforces them exactly
        # and they vary affinely), so only nonlinear-row multipliers set
        # the penalty; a 10x cap lets a transient spike decay again.
        theta1 = _theta(ce, ci)
        gd = float(g @ d)
        mult_inf = max(
            float(np.max(np.abs(mu_new))) if mu_new.size else 0.0,
            float(np.max(lam_new[nl_mask])) if lam_new.size and
            nl_mask.any() else 0.0)
        rho_need = 1.1 * mult_inf + 1e-3
        if theta1 > 1e-14:
            curv = float(d @ (h_sp @ d))
            rho_need = max(rho_need, (gd + 0.5 * curv) / (0.5 * theta1))
        rho = min(max(rho, rho_need), max(10.0 * rho_need, 1.0))
        deriv = gd - rho * theta1

        def _merit(xt):
            try:
                ft, _, cet, _, cit, _ = _eval_problem(problem, xt)
            except _EVAL_ERRORS:
                return np.inf, None
            return ft + rho * _theta(cet, cit), ft

        phi0 = f + rho * theta1
        slack_rhs = 1e-14 * (1.0 + abs(phi0))
        alpha = 1.0
        accepted = False
        tried_soc = False
        for _ in range(40):
            phi_t, _ = _merit(x + alpha * d)
            if phi_t <= phi0 + 1e-4 * alpha * deriv + slack_rhs:
                accepted = True
                break
            if alpha == 1.0 and not tried_soc and (ce.size or ci.size):
                tried_soc = True
                soc = _second_order_step(problem, h_sp, x, d, qp, je, ci, ji)
                if soc is not None:
                    phi_soc, _ = _merit(x + d + soc)
                    if phi_soc <= phi0 + 1e-4 * deriv + slack_rhs:
                        d = d + soc
                        alpha = 1.0
                        accepted = True
                        break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        if not accepted:
            if restorations < 3 and _theta_inf(ce, ci, hard_mask) > 1e-8:
                restorations += 1
                x, _ = _restore(problem, x, hard_mask, target=1e-6)
                f, g, ce, je, ci, ji = _eval_problem(problem, x)
                _track_best()
                wset = []
                continue
            logger.debug("line search failed at iteration %d", it)
            status = "max-iter"
            break

        trace[-1]["alpha"] = alpha
        if alpha <= 0.0625:
            damp = min(max(4.0 * damp, 1e-2), 1e8)
        elif alpha >= 1.0 and damp > 0.0:
            damp = 0.0 if damp < 1e-4 else 0.25 * damp
        x_new = x + alpha * d
        f_new, g_new, ce_new, je_new, ci_new, ji_new = _eval_problem(problem, x_new)
        grad_l_old = g - (je.T @ mu_new if mu_new.size else 0.0) \
            - (ji.T @ lam_new if lam_new.size else 0.0)
        grad_l_new = g_new - (je_new.T @ mu_new if mu_new.size else 0.0) \
            - (ji_new.T @ lam_new if lam_new.size else 0.0)
        hessian.update(x_new - x, np.asarray(grad_l_new - grad_l_old))
        x, f, g = x_new, f_new, g_new
        ce, je, ci, ji = ce_new, je_new, ci_new, ji_new
        mu, lam = mu_new, lam_new
        _track_best()

    hard_final = best[0] if best is not None else np.inf
    if status != "converged" and hard_final > hard_tol:
        status = "infeasible-hard"
    x_out = best[2] if best is not None else x
    if status == "converged":
        x_out = x
    try:
        f_out, g_out, ce_out, je_out, ci_out, ji_out = _eval_problem(problem, x_out)
        kkt_out = _kkt_residual(g_out, je_out, ji_out, ci_out, mu, lam)
        theta_out = _theta_inf(ce_out, ci_out)
        hard_out = _theta_inf(ce_out, ci_out, hard_mask)
    except _EVAL_ERRORS:
        f_out, kkt_out, theta_out, hard_out = np.inf, np.inf, np.inf, np.inf
    return SqpResult(x=x_out, objective=f_out, status=status, iterations=it,
                     kkt_residual=kkt_out, constraint_violation=theta_out,
                     hard_violation=hard_out, mult_eq=mu, mult_ineq=lam,
                     working_set=list(wset), trace=trace)


def _second_order_step(problem, h_sp, x, d, qp, je, ci, ji):
    """Correction step re-evaluating constraints at the trial point.

    Constraints are re-evaluated at ``x + d`` while their Jacobians from
    ``x`` are reused; the correction is the minimum-curvature step that
    cancels the re-evaluated residuals on the working set.
    """
    try:
        _, _, ce_t, _, ci_t, _ = _eval_problem(problem, x + d)
    except _EVAL_ERRORS:
        return None
    rows = [je]
    rhs = [-ce_t]
    active = [i for i in qp.working_set if i < ci.size]
    if active:
        rows.append(ji[active])
        rhs.append(-ci_t[active])
    mat = sp.vstack(rows, format="csr")
    vec = np.concatenate(rhs)
    if mat.shape[0] == 0:
        return None
    res = solve_qp(h_sp, np.zeros(problem.n_vars), mat, vec)
    if res.status != "optimal":
        return None
    return res.x
