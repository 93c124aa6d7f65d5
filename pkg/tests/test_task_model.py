import numpy as np
import pytest

from rhpwbc.task_model import (
    Constraint,
    DimensionError,
    PriorityMatrix,
    Task,
    TaskLibrary,
    select_level_tasks,
    sort_descending,
    validate_priority_matrix,
)

# Candidate hierarchies of the two-candidate transition scenario.
PSI1_CASE2 = np.array(
    [[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]], dtype=float
)
PSI2_CASE2 = np.array(
    [[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 0, 1]], dtype=float
)


def make_task(task_id, A, b=None, W=None):
    A = np.atleast_2d(np.asarray(A, float))
    b = np.zeros(A.shape[0]) if b is None else b
    W = np.eye(A.shape[0]) if W is None else W
    return Task(task_id=task_id, name=f"t{task_id}", A=A, b=b, W=W)


class TestTaskValidation:
    def test_weight_must_be_spd(self):
        with pytest.raises(ValueError, match="positive definite"):
            make_task(0, np.ones((2, 3)), W=np.diag([1.0, -1.0]))

    def test_weight_must_be_symmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            make_task(0, np.ones((2, 3)), W=np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_b_shape_checked(self):
        with pytest.raises(DimensionError):
            make_task(0, np.ones((2, 3)), b=np.zeros(3))

    def test_arrays_frozen(self):
        t = make_task(0, np.ones((1, 3)))
        with pytest.raises(ValueError):
            t.A[0, 0] = 2.0


class TestConstraint:
    def test_bounds_ordering(self):
        with pytest.raises(ValueError, match="lower"):
            Constraint(0, np.eye(2), lower=np.array([1.0, 0.0]), upper=np.zeros(2))

    def test_equal_bounds_allowed(self):
        c = Constraint(0, np.eye(2), lower=np.zeros(2), upper=np.zeros(2))
        assert c.dim == 2


class TestLibrary:
    def test_duplicate_ids_rejected(self):
        t = make_task(1, np.ones((1, 3)))
        with pytest.raises(ValueError, match="duplicate"):
            TaskLibrary(tasks=(t, t))

    def test_column_count_enforced(self):
        t1 = make_task(1, np.ones((1, 3)))
        t2 = make_task(2, np.ones((1, 4)))
        with pytest.raises(DimensionError):
            TaskLibrary(tasks=(t1, t2))


class TestValidatePriorityMatrix:
    def test_case2_nominal_ok(self):
        assert validate_priority_matrix(PriorityMatrix(PSI1_CASE2)) is None

    def test_all_zero_ok(self):
        assert validate_priority_matrix(PriorityMatrix(np.zeros((3, 4)))) is None

    def test_non_monotone_column_reported(self):
        vals = np.zeros((3, 2))
        vals[:, 1] = [1.0, 0.0, 1.0]
        v = validate_priority_matrix(PriorityMatrix(vals))
        assert v is not None
        assert (v.row, v.col) == (1, 1)
        assert v.rule == "monotonicity"

    def test_range_violation_reported(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = 1.5
        v = validate_priority_matrix(PriorityMatrix(vals))
        assert v.rule == "range"
        assert (v.row, v.col) == (0, 0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            validate_priority_matrix(PriorityMatrix(PSI1_CASE2), n_tasks=5)


class TestSelectLevelTasks:
    def test_level0_selects_first_task(self):
        psi = PriorityMatrix(PSI1_CASE2)
        assert select_level_tasks(psi, 0) == [0]

    def test_level2_selects_third_task(self):
        psi = PriorityMatrix(PSI1_CASE2)
        assert select_level_tasks(psi, 2) == [2]

    def test_identical_rows_select_nothing(self):
        vals = PSI1_CASE2.copy()
        vals[2] = vals[1]
        psi = PriorityMatrix(vals)
        assert select_level_tasks(psi, 2) == []

    def test_selection_partitions_column_changes(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            raw = np.sort(rng.uniform(0, 1, size=(4, 5)), axis=0)
            raw[rng.random((4, 5)) < 0.3] = 0.0
            raw = np.maximum.accumulate(raw, axis=0)
            psi = PriorityMatrix(raw)
            assert validate_priority_matrix(psi) is None
            seen = {}
            for level in range(psi.n_levels):
                for j in select_level_tasks(psi, level):
                    seen.setdefault(j, []).append(level)
                    prev = psi.row(level - 1)[j]
                    cur = psi.row(level)[j]
                    assert cur != prev
                    if prev == 0.0:
                        assert cur > 0.0
            for j in range(psi.n_tasks):
                changes = [
                    i
                    for i in range(psi.n_levels)
                    if psi.row(i)[j] != psi.row(i - 1)[j]
                ]
                assert seen.get(j, []) == changes


class TestSortDescending:
    def _library(self, dims, n=4):
        tasks = tuple(
            make_task(k, np.arange(d * n, dtype=float).reshape(d, n) + k)
            for k, d in enumerate(dims)
        )
        return TaskLibrary(tasks=tasks, n=n)

    def test_higher_value_first(self):
        lib = self._library([1, 1, 1, 1])
        psi = PriorityMatrix(np.array([[0.9, 0.0, 0.4, 0.0]]))
        stack = sort_descending([0, 2], psi, 0, lib)
        assert stack.order == (0, 2)
        psi = PriorityMatrix(np.array([[0.4, 0.0, 0.9, 0.0]]))
        stack = sort_descending([0, 2], psi, 0, lib)
        assert stack.order == (2, 0)

    def test_tie_breaks_ascending_id(self):
        lib = self._library([1, 1, 1, 1])
        psi = PriorityMatrix(np.array([[0.0, 0.5, 0.0, 0.5]]))
        stack = sort_descending([3, 1], psi, 0, lib)
        assert stack.order == (1, 3)

    def test_single_task_stack_is_its_own_A(self):
        lib = self._library([2])
        psi = PriorityMatrix(np.array([[1.0]]))
        stack = sort_descending([0], psi, 0, lib)
        np.testing.assert_array_equal(stack.A, lib.tasks[0].A)
        np.testing.assert_array_equal(stack.b, lib.tasks[0].b)

    def test_stack_shapes_and_block_weight(self):
        lib = self._library([2, 1, 3])
        psi = PriorityMatrix(np.array([[0.7, 0.9, 0.3]]))
        stack = sort_descending([0, 1, 2], psi, 0, lib)
        assert stack.order == (1, 0, 2)
        assert stack.rows == sum(stack.dims) == 6
        np.testing.assert_array_equal(
            stack.A, np.vstack([lib.tasks[1].A, lib.tasks[0].A, lib.tasks[2].A])
        )
        # block diagonal weight, zeros off the blocks
        assert np.count_nonzero(stack.W[0, 1:]) == 0
        np.testing.assert_allclose(stack.expanded_alphas(), [0.9, 0.7, 0.7, 0.3, 0.3, 0.3])
