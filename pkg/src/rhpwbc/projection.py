"""Recursive construction of per-level projection matrices.

The projector of the upper ``i`` levels is built from the previous
level's projector ``P_prev`` and the level's sorted task stack in four
steps: reduce ``A_stack @ P_prev`` to independent rows (in-order
Gauss-Jordan, so higher-priority rows win rank conflicts), take an
orthonormal basis ``Q`` of their row space via QR, expand the per-task
priority values into the diagonal occupation matrix restricted to the
retained rows, and update

    P = P_prev @ (I - Q diag(occupation) Q^T).

With all occupation values at 1 the update factor equals the classical
null space projector of the stack, so a binary priority matrix
reproduces the strict nested-null-space hierarchy; fractional values
interpolate continuously between keeping and releasing directions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .task_model import LevelStack, PriorityMatrix, TaskLibrary, select_level_tasks, sort_descending

#: Relative rank tolerance: a row counts as dependent when its residual
#: after elimination is below RANK_TOL_REL * max(1, max |B|).
RANK_TOL_REL = 1e-10


class ProjectionRankError(RuntimeError):
    """QR saw a rank deficiency the row reduction should have removed."""


@dataclass(frozen=True)
class RowBasis:
    """Orthonormal basis ``Q`` (n x r) of the retained rows' row space.

    ``r_indices`` are the positions of the retained rows in the stacked
    matrix the reduction ran on, strictly increasing.
    """

    Q: np.ndarray
    r_indices: np.ndarray

    @property
    def rank(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True)
class OccupationMatrix:
    """Diagonal of per-direction occupation values, one per retained row."""

    diagonal: np.ndarray

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)


@dataclass(frozen=True)
class ProjectionState:
    """Projector of the upper ``level + 1`` levels (level is 0-based)."""

    P: np.ndarray
    level: int


@dataclass(frozen=True)
class LevelProjection:
    """Result of one recursion step plus the intermediates the solver needs."""

    P: np.ndarray
    basis: RowBasis
    occupation: OccupationMatrix
    stack: LevelStack


def rank_threshold(B: np.ndarray, tol_rel: float = RANK_TOL_REL) -> float:
    scale = max(1.0, float(np.max(np.abs(B))) if B.size else 0.0)
    return tol_rel * scale


def row_full_rank(
    B: np.ndarray, tol_rel: float = RANK_TOL_REL
) -> tuple[np.ndarray, np.ndarray]:
    """Keep a maximal independent subset of rows of ``B``, in original order.

    Rows are processed top to bottom; each new row is eliminated against
    the rows already kept (pivot = its largest remaining entry) and is
    dropped when the residual's max-norm falls below the relative
    threshold.  Processing in original order makes the kept set the
    lexicographically first maximal independent subset, so in a sorted
    task stack the higher-priority rows win rank conflicts.

    Returns the kept rows of ``B`` (not the eliminated forms) and their
    indices.  An all-zero ``B`` legally yields an empty result.
    """
    B = np.asarray(B, float)
    if B.ndim != 2:
        raise ValueError("row_full_rank expects a 2-d matrix")
    thresh = rank_threshold(B, tol_rel)
    pivots: list[tuple[int, np.ndarray]] = []
    kept: list[int] = []
    for k in range(B.shape[0]):
        r = B[k].copy()
        for col, prow in pivots:
            r -= r[col] * prow
        if not r.size or np.max(np.abs(r)) <= thresh:
            continue
        col = int(np.argmax(np.abs(r)))
        pivots.append((col, r / r[col]))
        kept.append(k)
    idx = np.array(kept, dtype=int)
    return B[idx], idx


def orthonormal_basis(B_reduced: np.ndarray, tol_rel: float = RANK_TOL_REL) -> np.ndarray:
    """Orthonormal basis of the row space of a full-row-rank matrix.

    QR of ``B_reduced.T``; the sign of each column is fixed so that its
    first entry larger than 1e-12 in magnitude is positive, which keeps
    results reproducible across LAPACK builds.  Raises
    :class:`ProjectionRankError` if the triangular factor signals a rank
    deficiency, which would mean the row reduction tolerance and the QR
    disagree.
    """
    B_reduced = np.asarray(B_reduced, float)
    r = B_reduced.shape[0]
    if r == 0:
        return np.zeros((B_reduced.shape[1] if B_reduced.ndim == 2 else 0, 0))
    Q, R = np.linalg.qr(B_reduced.T)
    diag = np.abs(np.diag(R))
    thresh = rank_threshold(B_reduced, tol_rel)
    if np.any(diag <= thresh):
        raise ProjectionRankError(
            f"rank deficiency in QR (min |R_kk| = {diag.min():.3e}); "
            "row reduction tolerance mismatch"
        )
    for j in range(Q.shape[1]):
        col = Q[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0.0:
            Q[:, j] = -col
    return Q


def occupation_matrix(
    alphas: Sequence[float], dims: Sequence[int], r_indices: np.ndarray
) -> OccupationMatrix:
    """Expand per-task priority values over task rows, keep the retained ones.

    ``alphas[k]`` is repeated ``dims[k]`` times to build the full
    stacked diagonal, then the entries at ``r_indices`` are selected.
    """
    full = (
        np.repeat(np.asarray(alphas, float), np.asarray(dims, int))
        if len(dims)
        else np.zeros(0)
    )
    r_indices = np.asarray(r_indices, int)
    if r_indices.size and (r_indices.min() < 0 or r_indices.max() >= full.size):
        raise IndexError(
            f"retained-row index out of range (stack has {full.size} rows)"
        )
    return OccupationMatrix(diagonal=full[r_indices])


def rhp_update(P_prev: np.ndarray, Q: np.ndarray, occupation: OccupationMatrix) -> np.ndarray:
    """One recursion step: ``P_prev @ (I - Q diag Q^T)``.

    A zero or empty occupation returns ``P_prev`` itself (no arithmetic),
    so a level without active tasks leaves the projector untouched
    bit for bit.
    """
    diag = occupation.diagonal
    if diag.size == 0 or not np.any(diag):
        return P_prev
    n = P_prev.shape[0]
    factor = np.eye(n) - (Q * diag) @ Q.T
    return P_prev @ factor


def compute_rhp(
    psi: PriorityMatrix,
    library: TaskLibrary,
    level: int,
    P_prev: np.ndarray,
    tol_rel: float = RANK_TOL_REL,
) -> LevelProjection:
    """Run the full recursion step for ``level`` (0-based).

    Selects the tasks whose priority value changed at this level, sorts
    and stacks them, reduces ``A_stack @ P_prev`` to independent rows,
    and applies the projector update.  When nothing is selected (or the
    projected stack is all zero) the returned ``P`` is ``P_prev``
    unchanged.
    """
    selected = select_level_tasks(psi, level)
    stack = sort_descending(selected, psi, level, library)
    n = library.n
    if stack.rows == 0:
        return LevelProjection(
            P=P_prev,
            basis=RowBasis(Q=np.zeros((n, 0)), r_indices=np.zeros(0, int)),
            occupation=OccupationMatrix(diagonal=np.zeros(0)),
            stack=stack,
        )
    B = stack.A @ P_prev
    B_reduced, r_indices = row_full_rank(B, tol_rel)
    Q = orthonormal_basis(B_reduced, tol_rel)
    occ = occupation_matrix(stack.alphas, stack.dims, r_indices)
    P = rhp_update(P_prev, Q, occ)
    return LevelProjection(
        P=P,
        basis=RowBasis(Q=Q, r_indices=r_indices),
        occupation=occ,
        stack=stack,
    )


def null_space_projector(A: np.ndarray, tol_rel: float = RANK_TOL_REL) -> np.ndarray:
    """``I - pinv(A) A`` via SVD with the same relative rank cutoff.

    Projects onto the null space of ``A``; the result is symmetric and
    idempotent.  Used as the independent reference for the strict
    hierarchy equivalence checks and by the strict baseline solver.
    """
    A = np.asarray(A, float)
    if A.ndim != 2:
        raise ValueError("null_space_projector expects a 2-d matrix")
    n = A.shape[1]
    if A.shape[0] == 0 or not A.size or not np.any(A):
        return np.eye(n)
    s_cut = rank_threshold(A, tol_rel)
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > s_cut))
    Vr = Vt[:rank]
    return np.eye(n) - Vr.T @ Vr
