"""Level-by-level solution of the task hierarchy.

Each level solves a small QP over ``z = (u, v)``:

    min  || A (x_prev + P_prev u) - b_hat ||^2_W_hat + eps ||u||^2 + ||v||^2
    s.t. lo_i  <= C_i (x_prev + P_prev u) + v     <= hi_i      (this level)
         lo_k  <= C_k (x_prev + P_prev u) + v_k*  <= hi_k      (levels k < i)

where ``W_hat`` is the stacked weight scaled by the per-row occupation
values and ``b_hat`` blends each task's target with its value at the
carried solution, so a task being released asks for the status quo
instead of its own target.  Slack variables exist only for constraints
first introduced at the level; upper-level slacks stay frozen at their
optimizing values.  The accumulated command after level ``i`` is
``x_i = x_prev + P_prev u_i``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .projection import LevelProjection, compute_rhp
from .qp import QPProblem, QPResult, SolverConfig, solve_qp
from .task_model import Constraint, PriorityMatrix, TaskLibrary


class HierarchyError(RuntimeError):
    """A level's QP failed; carries the failing level and backend result."""

    def __init__(self, message: str, level: int, result: QPResult | None = None):
        super().__init__(message)
        self.level = level
        self.result = result


@dataclass
class LevelProblem:
    """Everything needed to assemble one level's QP."""

    A_stack: np.ndarray
    b_hat: np.ndarray
    W_hat: np.ndarray
    P_prev: np.ndarray
    x_prev: np.ndarray
    new_constraints: tuple[Constraint, ...] = ()
    # (constraint, frozen slack) pairs from upper levels
    upper_constraints: tuple[tuple[Constraint, np.ndarray], ...] = ()


@dataclass
class LevelSolution:
    """Per-level optimum plus diagnostics recorded during the sweep."""

    level: int
    u_star: np.ndarray
    v_star: np.ndarray
    x_star: np.ndarray
    P: np.ndarray  # projector of the upper level+1 levels
    task_order: tuple[int, ...]
    task_residual: float  # || A x_star - b || over this level's stack
    qp_status: str
    qp_iterations: int
    kkt: tuple[float, float, float]
    solve_time: float


@dataclass
class HierarchySolution:
    x: np.ndarray
    levels: list[LevelSolution] = field(default_factory=list)

    @property
    def total_qp_iterations(self) -> int:
        return sum(lv.qp_iterations for lv in self.levels)

    @property
    def total_solve_time(self) -> float:
        return sum(lv.solve_time for lv in self.levels)


def shifted_target(
    lam: np.ndarray, b: np.ndarray, A: np.ndarray, x_prev: np.ndarray
) -> np.ndarray:
    """Blend task targets with their value at the carried solution.

    ``lam`` holds the per-row occupation values of the full (unreduced)
    stack.  With ``lam = 1`` the target is the task's own ``b``; with
    ``lam = 0`` it is ``A x_prev``, i.e. a fully released task asks for
    whatever the upper levels already decided.
    """
    lam = np.asarray(lam, float)
    return lam * b + (1.0 - lam) * (A @ x_prev)


def accumulate(x_prev: np.ndarray, P_prev: np.ndarray, u_star: np.ndarray) -> np.ndarray:
    """Carry the level optimum into the accumulated command."""
    return x_prev + P_prev @ u_star


def build_level_qp(problem: LevelProblem, config: SolverConfig) -> QPProblem:
    """Assemble the level QP over ``z = (u, v)`` in canonical dense form."""
    n = problem.P_prev.shape[0]
    if problem.A_stack.shape[1] != n and problem.A_stack.size:
        raise ValueError(
            f"task stack has {problem.A_stack.shape[1]} columns, projector {n}"
        )
    n_v = sum(c.dim for c in problem.new_constraints)
    AP = problem.A_stack @ problem.P_prev if problem.A_stack.size else np.zeros((0, n))
    r = (
        problem.A_stack @ problem.x_prev - problem.b_hat
        if problem.A_stack.size
        else np.zeros(0)
    )
    H = np.zeros((n + n_v, n + n_v))
    g = np.zeros(n + n_v)
    Hu = AP.T @ problem.W_hat @ AP if AP.size else np.zeros((n, n))
    Hu = 0.5 * (Hu + Hu.T) + config.regularization * np.eye(n)
    H[:n, :n] = 2.0 * Hu
    H[n:, n:] = 2.0 * np.eye(n_v)
    if AP.size:
        g[:n] = 2.0 * (AP.T @ (problem.W_hat @ r))

    rows = []
    lo = []
    hi = []
    offset = 0
    for c in problem.new_constraints:
        block = np.zeros((c.dim, n + n_v))
        block[:, :n] = c.C @ problem.P_prev
        block[:, n + offset : n + offset + c.dim] = np.eye(c.dim)
        rows.append(block)
        lo.append(c.lower - c.C @ problem.x_prev)
        hi.append(c.upper - c.C @ problem.x_prev)
        offset += c.dim
    for c, v_frozen in problem.upper_constraints:
        v_frozen = np.asarray(v_frozen, float)
        if v_frozen.shape != (c.dim,):
            raise ValueError(
                f"frozen slack for constraint {c.constraint_id} has wrong shape"
            )
        block = np.zeros((c.dim, n + n_v))
        block[:, :n] = c.C @ problem.P_prev
        rows.append(block)
        lo.append(c.lower - c.C @ problem.x_prev - v_frozen)
        hi.append(c.upper - c.C @ problem.x_prev - v_frozen)
    if rows:
        G = np.vstack(rows)
        lo_arr = np.concatenate(lo)
        hi_arr = np.concatenate(hi)
    else:
        G = np.zeros((0, n + n_v))
        lo_arr = np.zeros(0)
        hi_arr = np.zeros(0)
    return QPProblem(H=H, g=g, G=G, lo=lo_arr, hi=hi_arr)


def solve_hierarchy(
    psi: PriorityMatrix,
    library: TaskLibrary,
    config: SolverConfig | None = None,
) -> HierarchySolution:
    """Sweep the levels top to bottom and accumulate the command.

    Every level runs the projection recursion, assembles its QP with the
    previous level's projector and solves it; slacks of constraints
    introduced at the level are frozen afterwards.  A level with no
    selected tasks and no new constraints is skipped without touching
    the carried state.  QP failures raise :class:`HierarchyError` with
    the level attached.
    """
    config = config or SolverConfig()
    if psi.n_tasks != library.n_tasks:
        raise ValueError(
            f"priority matrix has {psi.n_tasks} columns, library {library.n_tasks} tasks"
        )
    n = library.n
    P_prev = np.eye(n)
    x = np.zeros(n)
    frozen: list[tuple[Constraint, np.ndarray]] = []
    solution = HierarchySolution(x=x)
    for level in range(psi.n_levels):
        tic = time.perf_counter()
        proj: LevelProjection = compute_rhp(psi, library, level, P_prev, config.rank_tol)
        new_cons = library.constraints_at_level(level)
        stack = proj.stack
        if stack.rows == 0 and not new_cons:
            solution.levels.append(
                LevelSolution(
                    level=level,
                    u_star=np.zeros(n),
                    v_star=np.zeros(0),
                    x_star=x,
                    P=proj.P,
                    task_order=stack.order,
                    task_residual=0.0,
                    qp_status="skipped",
                    qp_iterations=0,
                    kkt=(0.0, 0.0, 0.0),
                    solve_time=time.perf_counter() - tic,
                )
            )
            P_prev = proj.P
            continue
        lam = stack.expanded_alphas()
        b_hat = shifted_target(lam, stack.b, stack.A, x)
        W_hat = stack.W * lam[:, None] if stack.rows else stack.W
        problem = LevelProblem(
            A_stack=stack.A,
            b_hat=b_hat,
            W_hat=W_hat,
            P_prev=P_prev,
            x_prev=x,
            new_constraints=new_cons,
            upper_constraints=tuple(frozen),
        )
        qp = build_level_qp(problem, config)
        result = solve_qp(qp, config)
        if result.status == "infeasible":
            raise HierarchyError(
                f"level {level} QP reported infeasible although every "
                "level constraint carries a slack",
                level,
                result,
            )
        if result.status != "optimal":
            raise HierarchyError(
                f"level {level} QP did not certify optimality "
                f"(status {result.status}, kkt {result.kkt})",
                level,
                result,
            )
        u = result.z[:n]
        v = result.z[n:]
        x = accumulate(x, P_prev, u)
        offset = 0
        for c in new_cons:
            frozen.append((c, v[offset : offset + c.dim].copy()))
            offset += c.dim
        residual = float(np.linalg.norm(stack.A @ x - stack.b)) if stack.rows else 0.0
        solution.levels.append(
            LevelSolution(
                level=level,
                u_star=u,
                v_star=v,
                x_star=x,
                P=proj.P,
                task_order=stack.order,
                task_residual=residual,
                qp_status=result.status,
                qp_iterations=result.iterations,
                kkt=result.kkt,
                solve_time=time.perf_counter() - tic,
            )
        )
        P_prev = proj.P
    solution.x = x
    return solution
