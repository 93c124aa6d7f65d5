import numpy as np
import pytest

from rhpwbc.baseline import solve_strict_hierarchy
from rhpwbc.hqp import (
    HierarchyError,
    LevelProblem,
    accumulate,
    build_level_qp,
    shifted_target,
    solve_hierarchy,
)
from rhpwbc.projection import null_space_projector
from rhpwbc.qp import SolverConfig, solve_qp
from rhpwbc.task_model import Constraint, PriorityMatrix, Task, TaskLibrary


def make_library(rng, n, dims, constraints=()):
    tasks = tuple(
        Task(k, f"t{k}", rng.standard_normal((d, n)), rng.standard_normal(d), np.eye(d))
        for k, d in enumerate(dims)
    )
    return TaskLibrary(tasks=tasks, constraints=tuple(constraints), n=n)


def strict_lexicographic_oracle(library, order, config):
    """Nested null-space lexicographic least squares, one task per level.

    Works with an explicit null-space basis (SVD), so it shares nothing
    with the level solver's QP path.
    """
    n = library.n
    x = np.zeros(n)
    Z = np.eye(n)
    for task_idx in order:
        t = library.tasks[task_idx]
        AZ = t.A @ Z
        r = t.b - t.A @ x
        # minimum-norm damped least squares in the reduced coordinates
        u = np.linalg.solve(
            AZ.T @ AZ + config.regularization * np.eye(Z.shape[1]), AZ.T @ r
        )
        x = x + Z @ u
        _, s, Vt = np.linalg.svd(AZ, full_matrices=True)
        rank = int(np.sum(s > 1e-10 * max(1.0, s.max() if s.size else 0.0)))
        Znew = Vt[rank:].T
        Z = Z @ Znew if Znew.size else np.zeros((n, 0))
        if Z.shape[1] == 0:
            break
    return x


class TestShiftedTarget:
    def test_full_occupation_keeps_target(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([2.0, 3.0])
        out = shifted_target(np.ones(2), b, A, np.array([5.0, 5.0]))
        np.testing.assert_array_equal(out, b)

    def test_zero_occupation_asks_for_status_quo(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0]])
        x_prev = np.array([5.0, 7.0])
        out = shifted_target(np.zeros(2), np.array([2.0, 3.0]), A, x_prev)
        np.testing.assert_array_equal(out, A @ x_prev)

    def test_halfway_blend(self):
        A = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([2.0, 0.0])
        x_prev = np.array([0.0, 2.0])
        out = shifted_target(0.5 * np.ones(2), b, A, x_prev)
        np.testing.assert_allclose(out, [1.0, 1.0])


class TestAccumulate:
    def test_zero_step(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(accumulate(x, np.eye(2), np.zeros(2)), x)

    def test_zero_projector_freezes(self):
        x = np.array([1.0, 2.0])
        out = accumulate(x, np.zeros((2, 2)), np.array([5.0, 5.0]))
        np.testing.assert_array_equal(out, x)

    def test_partial_projector(self):
        out = accumulate(np.array([1.0, 1.0]), np.diag([0.0, 1.0]), np.array([5.0, 2.0]))
        np.testing.assert_array_equal(out, [1.0, 3.0])


class TestBuildLevelQP:
    def test_unconstrained_regularized_least_squares(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((2, 4))
        b_hat = rng.standard_normal(2)
        config = SolverConfig(regularization=1e-8)
        problem = LevelProblem(
            A_stack=A,
            b_hat=b_hat,
            W_hat=np.eye(2),
            P_prev=np.eye(4),
            x_prev=np.zeros(4),
        )
        qp = build_level_qp(problem, config)
        res = solve_qp(qp, config)
        expected = np.linalg.solve(A.T @ A + config.regularization * np.eye(4), A.T @ b_hat)
        # conditioning of the regularized system limits the agreement
        np.testing.assert_allclose(res.z, expected, atol=1e-6)

    def test_zero_projector_leaves_u_free_and_slack_zero(self):
        config = SolverConfig()
        c = Constraint(0, np.array([[1.0, 0.0]]), np.array([-1.0]), np.array([1.0]))
        problem = LevelProblem(
            A_stack=np.zeros((0, 2)),
            b_hat=np.zeros(0),
            W_hat=np.zeros((0, 0)),
            P_prev=np.zeros((2, 2)),
            x_prev=np.array([0.2, 0.0]),  # constraint already satisfied strictly
            new_constraints=(c,),
        )
        qp = build_level_qp(problem, config)
        res = solve_qp(qp, config)
        assert res.status == "optimal"
        np.testing.assert_allclose(res.z, np.zeros(3), atol=1e-6)

    def test_frozen_slack_offsets_bounds(self):
        config = SolverConfig()
        c = Constraint(0, np.array([[1.0, 0.0]]), np.array([-1.0]), np.array([1.0]))
        v_frozen = np.array([0.1])
        problem = LevelProblem(
            A_stack=np.zeros((0, 2)),
            b_hat=np.zeros(0),
            W_hat=np.zeros((0, 0)),
            P_prev=np.eye(2),
            x_prev=np.array([0.5, 0.0]),
            upper_constraints=((c, v_frozen),),
        )
        qp = build_level_qp(problem, config)
        np.testing.assert_allclose(qp.lo, [-1.0 - 0.5 - 0.1])
        np.testing.assert_allclose(qp.hi, [1.0 - 0.5 - 0.1])


class TestSolveHierarchy:
    def test_single_level_single_task(self):
        rng = np.random.default_rng(1)
        n = 5
        lib = make_library(rng, n, [3])
        psi = PriorityMatrix(np.array([[1.0]]))
        config = SolverConfig()
        sol = solve_hierarchy(psi, lib, config)
        A, b = lib.tasks[0].A, lib.tasks[0].b
        expected = np.linalg.solve(A.T @ A + config.regularization * np.eye(n), A.T @ b)
        np.testing.assert_allclose(sol.x, expected, atol=1e-8)

    def test_binary_two_levels_match_lexicographic_oracle(self):
        rng = np.random.default_rng(2)
        config = SolverConfig()
        for _ in range(25):
            n = 10
            lib = make_library(rng, n, [int(rng.integers(1, 4)), int(rng.integers(1, 4))])
            psi = PriorityMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
            sol = solve_hierarchy(psi, lib, config)
            oracle = strict_lexicographic_oracle(lib, [0, 1], config)
            assert np.linalg.norm(sol.x - oracle) <= 1e-6

    def test_duplicate_task_adds_nothing(self):
        rng = np.random.default_rng(3)
        n = 6
        A = rng.standard_normal((2, n))
        b = rng.standard_normal(2)
        tasks = (
            Task(0, "a", A, b, np.eye(2)),
            Task(1, "b", A.copy(), b.copy(), np.eye(2)),
        )
        lib = TaskLibrary(tasks=tasks, n=n)
        psi = PriorityMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
        sol = solve_hierarchy(psi, lib)
        assert abs(sol.levels[1].task_residual - sol.levels[0].task_residual) <= 1e-9

    def test_priority_protection_strict_case(self):
        # adding a lower level never worsens the top-level residual
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = 8
            lib = make_library(rng, n, [2, 3])
            psi1 = PriorityMatrix(np.array([[1.0]]))
            psi2 = PriorityMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
            lib1 = TaskLibrary(tasks=lib.tasks[:1], n=n)
            sol1 = solve_hierarchy(psi1, lib1)
            sol2 = solve_hierarchy(psi2, lib)
            t0 = lib.tasks[0]
            r1 = np.linalg.norm(t0.A @ sol1.x - t0.b)
            r2 = np.linalg.norm(t0.A @ sol2.x - t0.b)
            assert r2 <= r1 + 1e-8
            # the projected top-level rows are annihilated
            assert np.max(np.abs(t0.A @ sol2.levels[0].P)) <= 1e-9

    def test_frozen_slacks_keep_upper_constraints_satisfied(self):
        rng = np.random.default_rng(5)
        config = SolverConfig()
        for _ in range(10):
            n = 6
            cons = (
                Constraint(
                    0,
                    np.eye(n),
                    lower=-0.2 * np.ones(n),
                    upper=0.2 * np.ones(n),
                    level=0,
                ),
            )
            lib = make_library(rng, n, [2, 2], cons)
            psi = PriorityMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
            sol = solve_hierarchy(psi, lib, config)
            v0 = sol.levels[0].v_star
            val = sol.x + v0  # C = I
            assert np.all(val <= 0.2 + 10 * config.qp_tolerance)
            assert np.all(val >= -0.2 - 10 * config.qp_tolerance)

    def test_empty_level_skipped_without_arithmetic(self):
        rng = np.random.default_rng(6)
        lib = make_library(rng, 5, [2])
        psi = PriorityMatrix(np.array([[1.0], [1.0]]))
        sol = solve_hierarchy(psi, lib)
        assert sol.levels[1].qp_status == "skipped"
        assert sol.levels[1].P is sol.levels[0].P

    def test_mismatched_library_raises(self):
        rng = np.random.default_rng(7)
        lib = make_library(rng, 5, [2])
        psi = PriorityMatrix(np.array([[1.0, 0.0]]))
        with pytest.raises(ValueError):
            solve_hierarchy(psi, lib)


class TestStrictBaselineEquivalence:
    def test_matches_recursive_path_on_binary_hierarchies(self):
        rng = np.random.default_rng(8)
        config = SolverConfig()
        for _ in range(50):
            n = 10
            n_tasks = 3
            dims = [int(rng.integers(1, 4)) for _ in range(n_tasks)]
            lib = make_library(rng, n, dims)
            vals = np.tril(np.ones((3, 3)))
            psi = PriorityMatrix(vals)
            sol_rhp = solve_hierarchy(psi, lib, config)
            sol_base = solve_strict_hierarchy(psi, lib, config)
            assert np.linalg.norm(sol_rhp.x - sol_base.x) <= 1e-6

    def test_with_constraints(self):
        rng = np.random.default_rng(9)
        config = SolverConfig()
        for _ in range(10):
            n = 8
            cons = (
                Constraint(0, np.eye(n), -0.5 * np.ones(n), 0.5 * np.ones(n), level=0),
            )
            lib = make_library(rng, n, [2, 2], cons)
            psi = PriorityMatrix(np.array([[1.0, 0.0], [1.0, 1.0]]))
            sol_rhp = solve_hierarchy(psi, lib, config)
            sol_base = solve_strict_hierarchy(psi, lib, config)
            assert np.linalg.norm(sol_rhp.x - sol_base.x) <= 1e-6

    def test_baseline_rejects_fractional_matrix(self):
        rng = np.random.default_rng(10)
        lib = make_library(rng, 5, [1, 1])
        psi = PriorityMatrix(np.array([[1.0, 0.5], [1.0, 1.0]]))
        with pytest.raises(ValueError, match="binary"):
            solve_strict_hierarchy(psi, lib)


class TestContinuityInAlpha:
    def test_command_sweep_is_lipschitz(self):
        # open-loop alpha sweep with fixed tasks; constant retained rank
        rng = np.random.default_rng(11)
        n = 8
        lib = make_library(rng, n, [2, 2])
        config = SolverConfig()
        xs = []
        alphas = np.arange(0.0, 1.0 + 1e-12, 1e-3)
        for a in alphas:
            psi = PriorityMatrix(np.array([[1.0, a], [1.0, 1.0]]))
            xs.append(solve_hierarchy(psi, lib, config).x)
        xs = np.asarray(xs)
        steps = np.linalg.norm(np.diff(xs, axis=0), axis=1)
        assert steps.max() <= 1e-2
