"""Dense convex QP backend.

Solves ``min 0.5 z'Hz + g'z  s.t.  lo <= G z <= hi`` for strictly convex
``H`` with a primal active-set method: each iteration solves the
equality-constrained problem on the current working set exactly, steps
with a blocking-constraint line search, and drops constraints with
negative multipliers.  Rows with ``lo == hi`` are treated as hard
equalities.  When the zero vector is infeasible, a small phase-1
problem (minimize the worst violation ``s`` over ``(z, s)``) produces a
feasible start.

The backend is pluggable behind :func:`solve_qp`'s contract; this dense
implementation is the reference and the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class QPError(RuntimeError):
    """The backend could not produce a solution with certified residuals."""


@dataclass
class SolverConfig:
    """Numerical knobs shared by the level solver and the QP backend.

    ``regularization`` is added as ``eps * ||u||^2`` to each level
    objective so the reduced Hessian is strictly convex even when the
    projected task matrix is rank deficient; the minimizer is then the
    minimum-norm one, matching pseudoinverse behaviour in the strict
    limit.
    """

    regularization: float = 1e-8
    qp_tolerance: float = 1e-8
    max_qp_iterations: int = 300
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.regularization <= 0.0:
            raise ValueError("regularization must be > 0")
        if self.qp_tolerance <= 0.0:
            raise ValueError("qp_tolerance must be > 0")


@dataclass
class QPProblem:
    """Canonical dense QP: ``min 0.5 z'Hz + g'z  s.t.  lo <= G z <= hi``."""

    H: np.ndarray
    g: np.ndarray
    G: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, float)
        self.g = np.asarray(self.g, float)
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.g.shape != (n,):
            raise ValueError("H must be square and g conformable")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-9 * max(
            1.0, np.max(np.abs(self.H), initial=0.0)
        ):
            raise ValueError("H must be symmetric")
        self.G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, float)
        self.lo = np.asarray(self.lo, float).reshape(-1)
        self.hi = np.asarray(self.hi, float).reshape(-1)
        m = self.G.shape[0]
        if self.G.shape != (m, n) or self.lo.shape != (m,) or self.hi.shape != (m,):
            raise ValueError("constraint shapes do not match")
        if np.any(self.lo > self.hi):
            raise ValueError("lo must be elementwise <= hi")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]


@dataclass
class QPResult:
    z: np.ndarray
    status: str  # optimal | max_iterations | infeasible
    iterations: int
    # stationarity, primal feasibility, complementary slackness (inf-norms)
    kkt: tuple[float, float, float] = (np.nan, np.nan, np.nan)
    # multipliers per original row: positive for the upper side, negative
    # for the lower side (zero when inactive)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _refined_solve(M, rhs):
    """Linear solve with one step of iterative refinement.

    The regularized level Hessians can be ill conditioned (ratio of task
    curvature to the tiny regularization), and a single refinement step
    restores the residual to machine-epsilon scale.
    """
    sol = np.linalg.solve(M, rhs)
    sol += np.linalg.solve(M, rhs - M @ sol)
    return sol


def _solve_eqp(H, g, A, b):
    """min 0.5 z'Hz + g'z s.t. A z = b; returns (z, multipliers)."""
    n = H.shape[0]
    m = A.shape[0]
    if m == 0:
        return _refined_solve(H, -g), np.zeros(0)
    KKT = np.block([[H, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([-g, b])
    sol = _refined_solve(KKT, rhs)
    return sol[:n], sol[n:]


def _independent_subset(rows, idxs, base=()):
    kept = list(base)
    for i in idxs:
        cand = kept + [i]
        A = rows[cand]
        if np.linalg.matrix_rank(A, tol=1e-11) == len(cand):
            kept.append(i)
    return kept


def _primal_active_set(H, g, rows, bnds, eq_idx, z0, max_iter, tol=1e-11):
    """Active-set loop over one-sided rows ``rows[i] @ z <= bnds[i]``.

    ``rows`` is an (m, n) matrix.  Rows listed in ``eq_idx`` are
    equalities and stay in the working set.  ``z0`` must satisfy the
    equalities exactly and the inequalities up to roundoff.
    """
    m = rows.shape[0]
    eq_set = set(eq_idx)
    z = np.asarray(z0, float).copy()
    vals0 = rows @ z
    act0 = [i for i in range(m) if i not in eq_set and vals0[i] >= bnds[i] - 1e-10]
    W = _independent_subset(rows, act0, base=_independent_subset(rows, list(eq_idx)))
    is_ineq_free = np.ones(m, bool)  # not in W and not an equality
    is_ineq_free[list(eq_set)] = False
    for j in W:
        is_ineq_free[j] = False
    for it in range(1, max_iter + 1):
        A = rows[W] if W else np.zeros((0, rows.shape[1]))
        b = bnds[W] if W else np.zeros(0)
        try:
            z_target, lam = _solve_eqp(H, g, A, b)
        except np.linalg.LinAlgError:
            W = _independent_subset(rows, W, base=[j for j in W if j in eq_set])
            is_ineq_free[:] = True
            is_ineq_free[list(eq_set)] = False
            for j in W:
                is_ineq_free[j] = False
            continue
        p = z_target - z
        if np.max(np.abs(p), initial=0.0) <= tol * max(
            1.0, np.max(np.abs(z), initial=0.0)
        ):
            ineq_lams = [(lam[k], j) for k, j in enumerate(W) if j not in eq_set]
            if not ineq_lams or min(v for v, _ in ineq_lams) >= -1e-9:
                lam_full = np.zeros(m)
                for k, j in enumerate(W):
                    lam_full[j] = lam[k]
                return z_target, lam_full, "optimal", it
            jdrop = min(ineq_lams)[1]
            W.remove(jdrop)
            is_ineq_free[jdrop] = True
            continue
        # blocking-constraint line search over the free inequality rows
        alpha = 1.0
        block = -1
        free = np.nonzero(is_ineq_free)[0]
        if free.size:
            rp = rows[free] @ p
            movers = rp > tol
            if np.any(movers):
                ratios = (bnds[free[movers]] - rows[free[movers]] @ z) / rp[movers]
                k = int(np.argmin(ratios))
                if ratios[k] < alpha - 1e-14:
                    alpha = max(float(ratios[k]), 0.0)
                    block = int(free[movers][k])
        z = z + alpha * p
        if block >= 0:
            A_cand = rows[W + [block]]
            if np.linalg.matrix_rank(A_cand, tol=1e-11) == len(W) + 1:
                W.append(block)
                is_ineq_free[block] = False
            else:
                # Degenerate geometry: make room before retrying the add.
                ineq_lams = [(lam[k], j) for k, j in enumerate(W) if j not in eq_set]
                if ineq_lams:
                    jdrop = min(ineq_lams)[1]
                    W.remove(jdrop)
                    is_ineq_free[jdrop] = True
    return z, None, "max_iterations", max_iter


def _phase1(rows, bnds, eq_idx, z0, n, max_iter):
    """Minimize the worst inequality violation ``s`` over ``(z, s)``."""
    m = rows.shape[0]
    s_col = np.full((m, 1), -1.0)
    if eq_idx:
        s_col[list(eq_idx), 0] = 0.0
    floor = np.zeros((1, n + 1))
    floor[0, -1] = -1.0  # s >= -1 keeps the problem bounded
    rows1 = np.vstack([np.hstack([rows, s_col]), floor])
    bnds1 = np.concatenate([bnds, [1.0]])
    H1 = np.eye(n + 1) * 1e-8
    H1[-1, -1] = 1e-6
    g1 = np.zeros(n + 1)
    g1[-1] = 1.0
    ineq = [j for j in range(m) if j not in eq_idx]
    viol = float(np.max(rows[ineq] @ z0 - bnds[ineq], initial=-1.0)) if ineq else -1.0
    z0s = np.concatenate([z0, [max(viol, 0.0) + 1.0]])
    zs, _, status, it = _primal_active_set(
        H1, g1, rows1, bnds1, list(eq_idx), z0s, max_iter
    )
    return zs[:n], float(zs[-1]), status, it


def kkt_residuals(problem: QPProblem, z: np.ndarray, multipliers: np.ndarray):
    """Inf-norm stationarity, primal feasibility and complementarity residuals.

    ``multipliers`` follow the sign convention of :class:`QPResult`.
    """
    G, lo, hi = problem.G, problem.lo, problem.hi
    grad = problem.H @ z + problem.g
    if problem.m:
        grad = grad + G.T @ multipliers
    stationarity = float(np.max(np.abs(grad), initial=0.0))
    if not problem.m:
        return stationarity, 0.0, 0.0
    v = G @ z
    over = np.where(np.isfinite(hi), v - hi, -np.inf)
    under = np.where(np.isfinite(lo), lo - v, -np.inf)
    primal = float(max(np.max(over), np.max(under), 0.0))
    ineq = hi - lo > 1e-14  # equality rows carry free-sign multipliers
    lam = multipliers
    slack_hi = np.where(np.isfinite(hi), v - hi, 0.0)
    slack_lo = np.where(np.isfinite(lo), v - lo, 0.0)
    comp_hi = np.where(ineq & (lam > 0.0), np.abs(lam * slack_hi), 0.0)
    comp_lo = np.where(ineq & (lam < 0.0), np.abs(lam * slack_lo), 0.0)
    complementarity = float(max(np.max(comp_hi), np.max(comp_lo)))
    return stationarity, primal, complementarity


def solve_qp(problem: QPProblem, config: SolverConfig | None = None) -> QPResult:
    """Solve the QP; certify KKT residuals against ``config.qp_tolerance``.

    Status is ``optimal`` when the active-set loop converged and the
    residuals pass, ``max_iterations`` when the iteration cap was hit
    and ``infeasible`` when phase 1 could not drive the worst violation
    to zero.
    """
    config = config or SolverConfig()
    n = problem.n
    if problem.m == 0:
        z = _refined_solve(problem.H, -problem.g)
        res = kkt_residuals(problem, z, np.zeros(0))
        status = "optimal" if max(res) <= config.qp_tolerance else "max_iterations"
        return QPResult(z=z, status=status, iterations=1, kkt=res,
                        multipliers=np.zeros(0))

    # Expand two-sided rows into one-sided ones (equalities, then upper
    # sides, then lower sides); remember each row's source and side so
    # multipliers can be folded back.
    finite_lo = np.isfinite(problem.lo)
    finite_hi = np.isfinite(problem.hi)
    eq_mask = finite_lo & finite_hi & (problem.hi - problem.lo <= 1e-14)
    hi_mask = finite_hi & ~eq_mask
    lo_mask = finite_lo & ~eq_mask
    rows = np.vstack([problem.G[eq_mask], problem.G[hi_mask], -problem.G[lo_mask]])
    bnds_arr = np.concatenate(
        [problem.hi[eq_mask], problem.hi[hi_mask], -problem.lo[lo_mask]]
    )
    eq_idx = list(range(int(eq_mask.sum())))
    src_row = np.concatenate(
        [np.nonzero(eq_mask)[0], np.nonzero(hi_mask)[0], np.nonzero(lo_mask)[0]]
    )
    src_side = np.concatenate(
        [
            np.ones(int(eq_mask.sum())),
            np.ones(int(hi_mask.sum())),
            -np.ones(int(lo_mask.sum())),
        ]
    )
    max_iter = max(config.max_qp_iterations, 50 + 20 * rows.shape[0])

    if eq_idx:
        A_eq = rows[eq_idx]
        b_eq = bnds_arr[eq_idx]
        z0, *_ = np.linalg.lstsq(A_eq, b_eq, rcond=None)
        if np.max(np.abs(A_eq @ z0 - b_eq), initial=0.0) > config.qp_tolerance:
            return QPResult(z=z0, status="infeasible", iterations=0)
    else:
        z0 = np.zeros(n)
    ineq = [j for j in range(rows.shape[0]) if j not in eq_idx]
    worst = float(np.max(rows[ineq] @ z0 - bnds_arr[ineq], initial=-1.0)) if ineq else -1.0
    it1 = 0
    if worst > 0.0:
        z0, s, status1, it1 = _phase1(rows, bnds_arr, eq_idx, z0, n, max_iter)
        if status1 != "optimal" or s > max(config.qp_tolerance, 1e-9):
            return QPResult(z=z0, status="infeasible", iterations=it1)

    z, lam_rows, status, it = _primal_active_set(
        problem.H, problem.g, rows, bnds_arr, eq_idx, z0, max_iter
    )
    multipliers = np.zeros(problem.m)
    if lam_rows is not None:
        np.add.at(multipliers, src_row, src_side * lam_rows)
        res = kkt_residuals(problem, z, multipliers)
        if max(res) > config.qp_tolerance:
            status = "max_iterations"
    else:
        res = (np.nan, np.nan, np.nan)
    return QPResult(
        z=z, status=status, iterations=it1 + it, kkt=res, multipliers=multipliers
    )
