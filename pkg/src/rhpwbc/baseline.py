"""Strict-hierarchy reference solver.

Classical nested null-space hierarchical QP for binary priority
matrices: levels are solved in order, each restricted to the null space
of everything above it via pseudoinverse-based projectors.  The
projector chain is computed independently of the recursive path
(SVD-based null space projectors instead of the Gauss-Jordan/QR
recursion), so this solver doubles as the equivalence reference the
acceptance checks compare against, and as the CLI's
``strict_hqp_baseline`` run mode.
"""

from __future__ import annotations

import time

import numpy as np

from .hqp import HierarchyError, HierarchySolution, LevelSolution
from .projection import null_space_projector
from .qp import QPProblem, SolverConfig, solve_qp
from .task_model import Constraint, PriorityMatrix, TaskLibrary, select_level_tasks, sort_descending


def require_binary(psi: PriorityMatrix) -> None:
    vals = psi.values
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise ValueError("strict baseline needs a binary priority matrix")


def solve_strict_hierarchy(
    psi: PriorityMatrix,
    library: TaskLibrary,
    config: SolverConfig | None = None,
) -> HierarchySolution:
    """Nested null-space sweep; same QP structure, pinv-based projectors."""
    config = config or SolverConfig()
    require_binary(psi)
    if psi.n_tasks != library.n_tasks:
        raise ValueError(
            f"priority matrix has {psi.n_tasks} columns, library {library.n_tasks} tasks"
        )
    n = library.n
    N = np.eye(n)
    x = np.zeros(n)
    frozen: list[tuple[Constraint, np.ndarray]] = []
    solution = HierarchySolution(x=x)
    for level in range(psi.n_levels):
        tic = time.perf_counter()
        stack = sort_descending(select_level_tasks(psi, level), psi, level, library)
        new_cons = library.constraints_at_level(level)
        if stack.rows == 0 and not new_cons:
            solution.levels.append(
                LevelSolution(
                    level=level,
                    u_star=np.zeros(n),
                    v_star=np.zeros(0),
                    x_star=x,
                    P=N,
                    task_order=stack.order,
                    task_residual=0.0,
                    qp_status="skipped",
                    qp_iterations=0,
                    kkt=(0.0, 0.0, 0.0),
                    solve_time=time.perf_counter() - tic,
                )
            )
            continue
        AN = stack.A @ N if stack.rows else np.zeros((0, n))
        r = stack.A @ x - stack.b if stack.rows else np.zeros(0)
        n_v = sum(c.dim for c in new_cons)
        H = np.zeros((n + n_v, n + n_v))
        g = np.zeros(n + n_v)
        Hu = AN.T @ stack.W @ AN if stack.rows else np.zeros((n, n))
        Hu = 0.5 * (Hu + Hu.T) + config.regularization * np.eye(n)
        H[:n, :n] = 2.0 * Hu
        H[n:, n:] = 2.0 * np.eye(n_v)
        if stack.rows:
            g[:n] = 2.0 * (AN.T @ (stack.W @ r))
        rows, lo, hi = [], [], []
        offset = 0
        for c in new_cons:
            block = np.zeros((c.dim, n + n_v))
            block[:, :n] = c.C @ N
            block[:, n + offset : n + offset + c.dim] = np.eye(c.dim)
            rows.append(block)
            lo.append(c.lower - c.C @ x)
            hi.append(c.upper - c.C @ x)
            offset += c.dim
        for c, v_frozen in frozen:
            block = np.zeros((c.dim, n + n_v))
            block[:, :n] = c.C @ N
            rows.append(block)
            lo.append(c.lower - c.C @ x - v_frozen)
            hi.append(c.upper - c.C @ x - v_frozen)
        qp = QPProblem(
            H=H,
            g=g,
            G=np.vstack(rows) if rows else np.zeros((0, n + n_v)),
            lo=np.concatenate(lo) if lo else np.zeros(0),
            hi=np.concatenate(hi) if hi else np.zeros(0),
        )
        result = solve_qp(qp, config)
        if result.status != "optimal":
            raise HierarchyError(
                f"baseline level {level} QP failed (status {result.status})",
                level,
                result,
            )
        u = result.z[:n]
        v = result.z[n:]
        x = x + N @ u
        offset = 0
        for c in new_cons:
            frozen.append((c, v[offset : offset + c.dim].copy()))
            offset += c.dim
        if stack.rows:
            N = N @ null_space_projector(AN, config.rank_tol)
        residual = float(np.linalg.norm(stack.A @ x - stack.b)) if stack.rows else 0.0
        solution.levels.append(
            LevelSolution(
                level=level,
                u_star=u,
                v_star=v,
                x_star=x,
                P=N,
                task_order=stack.order,
                task_residual=residual,
                qp_status=result.status,
                qp_iterations=result.iterations,
                kkt=result.kkt,
                solve_time=time.perf_counter() - tic,
            )
        )
    solution.x = x
    return solution
