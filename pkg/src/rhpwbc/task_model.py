"""Task library, priority matrix and per-level task selection.

A controller cycle works on a :class:`TaskLibrary`: equality tasks
``A x = b`` with a positive definite weight ``W``, and two-sided
inequality constraints ``lo <= C x <= hi`` that are enforced from a
given priority level downwards.  The :class:`PriorityMatrix` assigns
each task a continuous priority value per level; the selection and
sorting helpers below turn it into the stacked per-level task data
consumed by the projection recursion and the level solver.

All types are immutable value objects; the module functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Shapes of tasks, constraints or priority matrices do not line up."""


def _frozen_array(value, shape=None, dtype=float) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Task:
    """Equality task ``A x = b`` with weight ``W``.

    ``A`` is ``dim x n`` where ``n`` is the number of optimization
    variables, ``b`` has length ``dim`` and ``W`` is a symmetric
    positive definite ``dim x dim`` matrix.
    """

    task_id: int
    name: str
    A: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        A = _frozen_array(self.A)
        if A.ndim != 2 or A.shape[0] < 1:
            raise DimensionError(f"task {self.task_id}: A must be 2-d with >= 1 row")
        b = _frozen_array(self.b, shape=(A.shape[0],))
        W = _frozen_array(self.W, shape=(A.shape[0], A.shape[0]))
        if np.max(np.abs(W - W.T)) > 1e-12 * max(1.0, np.max(np.abs(W))):
            raise ValueError(f"task {self.task_id}: W must be symmetric")
        diag = np.diagonal(W)
        if np.count_nonzero(W) == np.count_nonzero(diag):
            min_eig = float(diag.min())  # diagonal weight
        else:
            min_eig = float(np.min(np.linalg.eigvalsh(W)))
        if min_eig <= -1e-12:
            raise ValueError(f"task {self.task_id}: W must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class Constraint:
    """Two-sided inequality ``lower <= C x <= upper`` enforced from ``level`` on.

    ``level`` uses the same 0-based indexing as the rows of the priority
    matrix.
    """

    constraint_id: int
    C: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: int = 0

    def __post_init__(self):
        C = _frozen_array(self.C)
        if C.ndim != 2:
            raise DimensionError(f"constraint {self.constraint_id}: C must be 2-d")
        lower = _frozen_array(self.lower, shape=(C.shape[0],))
        upper = _frozen_array(self.upper, shape=(C.shape[0],))
        if np.any(lower > upper):
            raise ValueError(
                f"constraint {self.constraint_id}: lower bound exceeds upper bound"
            )
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class PriorityViolation:
    """First offending entry found by :func:`validate_priority_matrix`."""

    row: int
    col: int
    rule: str
    message: str


@dataclass(frozen=True)
class PriorityMatrix:
    """Matrix of per-level priority values, one column per library task.

    Entry ``(i, j)`` in [0, 1] states how fully task ``j`` occupies its
    directions above level ``i + 1``.  Columns must be non-decreasing
    down the rows: once a task holds directions at some level it keeps
    holding them at every deeper level.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 2:
            raise DimensionError("priority matrix must be 2-d")
        object.__setattr__(self, "values", vals)

    @property
    def n_levels(self) -> int:
        return self.values.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.values.shape[1]

    def row(self, level: int) -> np.ndarray:
        """Row for ``level``; ``level == -1`` is the virtual all-zero base row."""
        if level == -1:
            return np.zeros(self.n_tasks)
        return self.values[level]


def validate_priority_matrix(
    psi: PriorityMatrix, n_tasks: int | None = None
) -> PriorityViolation | None:
    """Check range and column monotonicity; return the first violation or None.

    Cells are scanned row-major, so the reported violation is the first
    one a reader would meet going down the matrix.
    """
    if n_tasks is not None and psi.n_tasks != n_tasks:
        raise DimensionError(
            f"priority matrix has {psi.n_tasks} columns, task library has {n_tasks}"
        )
    vals = psi.values
    for i in range(psi.n_levels):
        for j in range(psi.n_tasks):
            a = vals[i, j]
            if not np.isfinite(a) or a < 0.0 or a > 1.0:
                return PriorityViolation(
                    i, j, "range", f"entry ({i},{j}) = {a} outside [0, 1]"
                )
            if i > 0 and a < vals[i - 1, j]:
                return PriorityViolation(
                    i,
                    j,
                    "monotonicity",
                    f"column {j} decreases from {vals[i - 1, j]} to {a} at level {i}",
                )
    return None


def select_level_tasks(psi: PriorityMatrix, level: int) -> list[int]:
    """Task columns to be solved at ``level``: those whose value changed.

    Comparison against the previous row is exact; level 0 compares
    against the all-zero base row, so it selects every task with a
    nonzero first-row value.
    """
    if not 0 <= level < psi.n_levels:
        raise IndexError(f"level {level} outside 0..{psi.n_levels - 1}")
    cur = psi.row(level)
    prev = psi.row(level - 1)
    return [j for j in range(psi.n_tasks) if cur[j] != prev[j]]


@dataclass(frozen=True)
class LevelStack:
    """Sorted, stacked task data for one level.

    ``order`` holds library column indices sorted by descending priority
    value (ties by ascending task id).  ``A``, ``b`` are the stacked
    task matrices/targets, ``W`` the block-diagonal stacked weight,
    ``dims`` the per-task row counts and ``alphas`` the per-task
    priority values at this level, both in sorted order.
    """

    order: tuple[int, ...]
    A: np.ndarray
    b: np.ndarray
    W: np.ndarray
    dims: tuple[int, ...]
    alphas: tuple[float, ...]

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def expanded_alphas(self) -> np.ndarray:
        """Per-row priority values (each task's value repeated over its rows)."""
        if not self.dims:
            return np.zeros(0)
        return np.repeat(np.asarray(self.alphas, float), self.dims)


def sort_descending(
    task_indices: Sequence[int],
    psi: PriorityMatrix,
    level: int,
    library: "TaskLibrary",
) -> LevelStack:
    """Sort selected tasks by descending priority value and stack their data."""
    vals = psi.row(level)
    order = sorted(
        task_indices, key=lambda j: (-vals[j], library.tasks[j].task_id)
    )
    n = library.n
    if not order:
        return LevelStack(
            order=(),
            A=np.zeros((0, n)),
            b=np.zeros(0),
            W=np.zeros((0, 0)),
            dims=(),
            alphas=(),
        )
    tasks = [library.tasks[j] for j in order]
    A = np.vstack([t.A for t in tasks])
    b = np.concatenate([t.b for t in tasks])
    m = A.shape[0]
    W = np.zeros((m, m))
    r = 0
    for t in tasks:
        W[r : r + t.dim, r : r + t.dim] = t.W
        r += t.dim
    return LevelStack(
        order=tuple(order),
        A=A,
        b=b,
        W=W,
        dims=tuple(t.dim for t in tasks),
        alphas=tuple(float(vals[j]) for j in order),
    )


@dataclass(frozen=True)
class TaskLibrary:
    """All tasks and constraints a cycle may draw from, over ``n`` variables."""

    tasks: tuple[Task, ...]
    constraints: tuple[Constraint, ...] = ()
    n: int = field(default=0)

    def __post_init__(self):
        tasks = tuple(self.tasks)
        constraints = tuple(self.constraints)
        n = self.n
        if n == 0:
            if not tasks:
                raise DimensionError("empty library needs an explicit n")
            n = tasks[0].n
        ids = [t.task_id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate task ids: {ids}")
        for t in tasks:
            if t.n != n:
                raise DimensionError(
                    f"task {t.task_id} has {t.n} columns, expected {n}"
                )
        for c in constraints:
            if c.C.shape[1] != n:
                raise DimensionError(
                    f"constraint {c.constraint_id} has {c.C.shape[1]} columns, expected {n}"
                )
        object.__setattr__(self, "tasks", tasks)
        object.__setattr__(self, "constraints", constraints)
        object.__setattr__(self, "n", n)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def constraints_at_level(self, level: int) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.level == level)
