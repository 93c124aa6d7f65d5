"""Scheduling of priority transitions.

The instantaneous priority matrix is a convex combination of candidate
hierarchies.  The weight of the long-term target candidate follows a
clamped ramp of the minimum obstacle distance; the remaining weight
goes to the avoidance candidate.  Events from scenario predicates may
retarget the long-term candidate at any time, including mid-transition.
Per-cycle motion of the proportion vector is rate limited along the
straight line to the desired point, which keeps the blended matrix
Lipschitz in time and the proportions on the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .task_model import PriorityMatrix, validate_priority_matrix


class UnknownEventError(ValueError):
    """An event tag has no rule attached in the schedule configuration."""


@dataclass(frozen=True)
class BlendPolicy:
    """Distance ramp and rate limit for proportion motion.

    Below ``d_low`` the proportion saturates toward the avoidance
    candidate, above ``d_high`` toward the target candidate; in between
    it ramps linearly or with a smoothstep.  ``rate_limit`` bounds the
    per-cycle max-norm change of the proportion vector.
    """

    d_low: float = 0.05
    d_high: float = 0.2
    ramp: str = "linear"
    rate_limit: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.d_low < self.d_high:
            raise ValueError("need 0 < d_low < d_high")
        if self.rate_limit <= 0.0:
            raise ValueError("rate_limit must be > 0")
        if self.ramp not in ("linear", "smoothstep"):
            raise ValueError(f"unknown ramp shape {self.ramp!r}")


@dataclass(frozen=True)
class CandidateSet:
    """Candidate hierarchies available for blending, all the same shape."""

    candidates: tuple[PriorityMatrix, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ValueError("need at least one candidate hierarchy")
        shape = cands[0].values.shape
        for k, c in enumerate(cands):
            if c.values.shape != shape:
                raise ValueError(f"candidate {k} has shape {c.values.shape}, expected {shape}")
            violation = validate_priority_matrix(c)
            if violation is not None:
                raise ValueError(f"candidate {k} invalid: {violation.message}")
        labels = tuple(self.labels) or tuple(f"H{k}" for k in range(len(cands)))
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class ScheduleState:
    """Current proportions, long-term target candidate and phase tag."""

    p: np.ndarray
    target_candidate: int
    mode: str = "nominal"  # nominal | transitioning | avoidance

    def __post_init__(self):
        p = np.array(self.p, float)
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"proportions must lie on the simplex, got {p}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


def initial_state(n_candidates: int, start: int = 0) -> ScheduleState:
    p = np.zeros(n_candidates)
    p[start] = 1.0
    return ScheduleState(p=p, target_candidate=start, mode="nominal")


def proportion_from_distance(d_min: float, policy: BlendPolicy) -> float:
    """Weight of the target candidate as a function of obstacle distance.

    Returns exactly 1.0 at or above ``d_high`` and exactly 0.0 at or
    below ``d_low`` so saturated phases reproduce candidates bit for
    bit.
    """
    if d_min < 0.0:
        d_min = 0.0
    if d_min >= policy.d_high:
        return 1.0
    if d_min <= policy.d_low:
        return 0.0
    t = (d_min - policy.d_low) / (policy.d_high - policy.d_low)
    if policy.ramp == "smoothstep":
        return t * t * (3.0 - 2.0 * t)
    return t


def blend(candidates: CandidateSet | Sequence[PriorityMatrix], p: np.ndarray) -> PriorityMatrix:
    """Elementwise convex combination of the candidates.

    At a proportion vertex the corresponding candidate is returned
    unchanged; elsewhere the combination is anchored at candidate 0 so
    that entries equal across all candidates stay bitwise equal, which
    keeps level selection free of spurious float noise.
    """
    cands = candidates.candidates if isinstance(candidates, CandidateSet) else tuple(candidates)
    p = np.asarray(p, float)
    if p.shape != (len(cands),):
        raise ValueError(f"got {p.shape[0] if p.ndim else 0} proportions for {len(cands)} candidates")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"proportions must be nonnegative and sum to 1, got {p}")
    for k, pk in enumerate(p):
        if pk == 1.0:
            return cands[k]
    base = cands[0].values
    vals = base.copy()
    for k in range(1, len(cands)):
        if p[k] != 0.0:
            vals = vals + p[k] * (cands[k].values - base)
    return PriorityMatrix(values=np.clip(vals, 0.0, 1.0))


def step_schedule(
    state: ScheduleState,
    d_min: float,
    events: Sequence[str],
    policy: BlendPolicy,
    *,
    event_rules: Mapping[str, int] | None = None,
    avoidance_candidate: int | None = None,
) -> ScheduleState:
    """Advance the proportions one control cycle.

    ``events`` are tags raised by scenario predicates this cycle; each
    must map to a candidate index in ``event_rules`` and retargets the
    long-term candidate (an unknown tag raises
    :class:`UnknownEventError`).  The desired proportion point blends
    the target candidate with ``avoidance_candidate`` by the distance
    ramp; without an avoidance candidate the desired point is the
    target vertex.  The actual step toward the desired point is rate
    limited in max-norm, and assignments hit the desired point exactly
    once within reach, so saturated phases are exact vertices.
    """
    n = state.p.shape[0]
    target = state.target_candidate
    rules = event_rules or {}
    for tag in events:
        if tag not in rules:
            raise UnknownEventError(f"no rule for event tag {tag!r}")
        target = int(rules[tag])
        if not 0 <= target < n:
            raise ValueError(f"event {tag!r} targets candidate {target} of {n}")

    ramp = proportion_from_distance(d_min, policy)
    desired = np.zeros(n)
    if avoidance_candidate is None or avoidance_candidate == target:
        desired[target] = 1.0
    else:
        desired[target] = ramp
        desired[avoidance_candidate] = 1.0 - ramp

    delta = desired - state.p
    gap = float(np.max(np.abs(delta), initial=0.0))
    if gap <= policy.rate_limit:
        p_new = desired
    else:
        # Convex combination of two simplex points: stays on the simplex.
        theta = policy.rate_limit / gap
        p_new = (1.0 - theta) * state.p + theta * desired

    if avoidance_candidate is not None and p_new[avoidance_candidate] == 1.0:
        mode = "avoidance"
    elif p_new[target] == 1.0:
        mode = "nominal"
    else:
        mode = "transitioning"
    return ScheduleState(p=p_new, target_candidate=target, mode=mode)
