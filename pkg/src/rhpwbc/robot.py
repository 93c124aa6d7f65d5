"""Kinematic serial-chain simulator and per-cycle task generation.

A desk-scale 10-DOF chain (3 waist + 7 arm joints) stands in for a
humanoid upper body.  The module provides forward kinematics, point and
orientation Jacobians, sphere-obstacle distance queries with analytic
gradients, generation of the four library tasks (torso avoidance, hand
orientation, hand position, arm avoidance) plus the velocity and
position-limit constraints, and explicit-Euler velocity integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .task_model import Constraint, Task, TaskLibrary

TASK_KINDS = ("torso_avoidance", "hand_orientation", "hand_position", "arm_avoidance")


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (inverse of the exponential map)."""
    cos_theta = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return w  # first-order: w already approximates theta * axis
    if np.pi - theta < 1e-6:
        # Near a half-turn the sine form degenerates; use that
        # (R + I)/2 approaches axis axis^T and read the axis off its
        # largest column.
        M = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / max(np.linalg.norm(M[:, k]), 1e-12)
        if w @ axis < 0.0:
            axis = -axis
        return theta * axis
    return (theta / np.sin(theta)) * w


class Frame(NamedTuple):
    R: np.ndarray
    p: np.ndarray


@dataclass(frozen=True)
class Joint:
    """Revolute joint: translation from the parent frame, then rotation."""

    name: str
    axis: tuple[float, float, float]
    offset: tuple[float, float, float]

    def __post_init__(self):
        a = np.asarray(self.axis, float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError(f"joint {self.name}: axis must be unit norm")


@dataclass(frozen=True)
class KinematicChain:
    """Open serial chain with per-link collision-check points.

    ``link_points[k]`` are points on link ``k`` (the body moving with
    joint ``k``) in local coordinates.  ``tip_offset`` is the hand point
    on the last link; the hand orientation is the last link's frame.
    ``torso_links``/``arm_links`` partition the links for the two
    avoidance tasks.
    """

    joints: tuple[Joint, ...]
    link_points: tuple[tuple[tuple[float, float, float], ...], ...]
    tip_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    torso_links: tuple[int, ...] = ()
    arm_links: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.link_points) != len(self.joints):
            raise ValueError("need one point list per link")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def tip_link(self) -> int:
        return len(self.joints) - 1


@dataclass(frozen=True)
class RobotState:
    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0
    limit_exceeded: bool = False

    def __post_init__(self):
        q = np.asarray(self.q, float)
        qdot = np.asarray(self.qdot, float)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("robot state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


@dataclass(frozen=True)
class Obstacle:
    """Sphere moving along a piecewise-linear waypoint path."""

    radius: float
    times: tuple[float, ...]
    centers: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("obstacle radius must be > 0")
        if len(self.times) != len(self.centers) or not self.times:
            raise ValueError("need matching, nonempty times and centers")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.centers[0], float)

    def center_at(self, t: float) -> np.ndarray:
        times = self.times
        centers = np.asarray(self.centers, float)
        if t <= times[0]:
            return centers[0]
        if t >= times[-1]:
            return centers[-1]
        k = int(np.searchsorted(times, t, side="right")) - 1
        span = times[k + 1] - times[k]
        w = (t - times[k]) / span
        return (1.0 - w) * centers[k] + w * centers[k + 1]


def default_chain() -> KinematicChain:
    """Desk-scale 10-DOF chain: 3 waist joints plus a 7-DOF arm.

    Total reach is about 1.2 m; the arm extends along +x at q = 0.
    """
    joints = (
        Joint("waist_yaw", (0.0, 0.0, 1.0), (0.0, 0.0, 0.25)),
        Joint("waist_pitch", (0.0, 1.0, 0.0), (0.0, 0.0, 0.12)),
        Joint("waist_roll", (1.0, 0.0, 0.0), (0.0, 0.0, 0.12)),
        Joint("shoulder_pitch", (0.0, 1.0, 0.0), (0.0, 0.20, 0.14)),
        Joint("shoulder_roll", (1.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        Joint("shoulder_yaw", (0.0, 0.0, 1.0), (0.12, 0.0, 0.0)),
        Joint("elbow_pitch", (0.0, 1.0, 0.0), (0.16, 0.0, 0.0)),
        Joint("wrist_roll", (1.0, 0.0, 0.0), (0.14, 0.0, 0.0)),
        Joint("wrist_pitch", (0.0, 1.0, 0.0), (0.10, 0.0, 0.0)),
        Joint("wrist_yaw", (0.0, 0.0, 1.0), (0.04, 0.0, 0.0)),
    )
    link_points = (
        ((0.0, 0.0, 0.06), (0.0, 0.0, 0.12)),
        ((0.0, 0.0, 0.06),),
        ((0.0, 0.0, 0.07), (0.0, 0.10, 0.14)),
        ((0.0, 0.0, 0.0),),
        ((0.06, 0.0, 0.0),),
        ((0.06, 0.0, 0.0), (0.12, 0.0, 0.0)),
        ((0.0, 0.0, 0.0), (0.07, 0.0, 0.0), (0.14, 0.0, 0.0)),
        ((0.05, 0.0, 0.0), (0.10, 0.0, 0.0)),
        ((0.04, 0.0, 0.0),),
        ((0.04, 0.0, 0.0), (0.08, 0.0, 0.0)),
    )
    return KinematicChain(
        joints=joints,
        link_points=link_points,
        tip_offset=(0.08, 0.0, 0.0),
        torso_links=(0, 1, 2),
        arm_links=(3, 4, 5, 6, 7, 8, 9),
    )


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> list[Frame]:
    """World frame of every link, base to tip."""
    q = np.asarray(q, float)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values, got {q.shape}")
    R = np.eye(3)
    p = np.zeros(3)
    frames = []
    for joint, angle in zip(chain.joints, q):
        p = p + R @ np.asarray(joint.offset, float)
        R = R @ rotation_about_axis(np.asarray(joint.axis, float), angle)
        frames.append(Frame(R=R, p=p))
    return frames


def world_point(frames: Sequence[Frame], link: int, local_point) -> np.ndarray:
    f = frames[link]
    return f.p + f.R @ np.asarray(local_point, float)


def _world_axes_origins(chain: KinematicChain, frames: Sequence[Frame]):
    """World joint axes and origins, stacked (n, 3) each."""
    R = np.stack([f.R for f in frames])
    axes_local = np.stack([np.asarray(j.axis, float) for j in chain.joints])
    axes = np.einsum("nij,nj->ni", R, axes_local)
    origins = np.stack([f.p for f in frames])
    return axes, origins


def point_jacobian(
    chain: KinematicChain,
    q: np.ndarray,
    link: int,
    local_point,
    frames: Sequence[Frame] | None = None,
) -> np.ndarray:
    """3 x n Jacobian of a point on ``link`` w.r.t. joint velocities."""
    frames = frames or forward_kinematics(chain, q)
    p = world_point(frames, link, local_point)
    axes, origins = _world_axes_origins(chain, frames)
    J = np.zeros((3, chain.dof))
    lever = p - origins[: link + 1]
    J[:, : link + 1] = np.cross(axes[: link + 1], lever).T
    return J


def orientation_jacobian(
    chain: KinematicChain,
    q: np.ndarray,
    link: int,
    frames: Sequence[Frame] | None = None,
) -> np.ndarray:
    """3 x n map from joint velocities to the link's world angular velocity."""
    frames = frames or forward_kinematics(chain, q)
    axes, _ = _world_axes_origins(chain, frames)
    J = np.zeros((3, chain.dof))
    J[:, : link + 1] = axes[: link + 1].T
    return J


def min_distance(
    chain: KinematicChain,
    q: np.ndarray,
    obstacle: Obstacle,
    center: np.ndarray | None = None,
    links: Sequence[int] | None = None,
    frames: Sequence[Frame] | None = None,
):
    """Minimum sphere distance over the chain's collision points.

    Returns ``(d_min, (link, point_index), gradient_row)`` where the
    gradient row is ``d(d_min)/dq`` of the witness point.  Ties go to
    the lowest link index (then lowest point index).  ``center``
    overrides the obstacle's waypoint position, letting callers evaluate
    a moving obstacle at a given time.
    """
    frames = frames or forward_kinematics(chain, q)
    c = obstacle.center if center is None else np.asarray(center, float)
    link_set = range(chain.dof) if links is None else links
    best = None
    for link in link_set:
        pts = np.asarray(chain.link_points[link], float)
        if pts.size == 0:
            continue
        world = frames[link].p + pts @ frames[link].R.T
        dists = np.linalg.norm(world - c, axis=1) - obstacle.radius
        idx = int(np.argmin(dists))
        d = float(dists[idx])
        if best is None or d < best[0] - 1e-15:
            best = (d, (link, idx), world[idx])
    if best is None:
        raise ValueError("no collision points on the selected links")
    d, witness, p = best
    diff = p - c
    norm = np.linalg.norm(diff)
    if norm < 1e-12:
        grad = np.zeros(chain.dof)
    else:
        u = diff / norm
        grad = u @ point_jacobian(
            chain, q, witness[0], chain.link_points[witness[0]][witness[1]], frames
        )
    return d, witness, grad


def extension_ratio(
    chain: KinematicChain, q: np.ndarray, base_joint: int = 3, end_joint: int = 9,
    frames: Sequence[Frame] | None = None,
) -> float:
    """How straight the arm is: joint-span distance over its maximum."""
    frames = frames or forward_kinematics(chain, q)
    d = float(np.linalg.norm(frames[end_joint].p - frames[base_joint].p))
    length = sum(
        float(np.linalg.norm(np.asarray(chain.joints[k].offset, float)))
        for k in range(base_joint + 1, end_joint + 1)
    )
    return d / length if length > 0.0 else 0.0


@dataclass(frozen=True)
class TaskBinding:
    """How one library task is generated from robot state.

    Avoidance kinds hold the repulsion geometry: the task row is always
    the distance gradient of the witness point (so the occupied
    direction evolves continuously) and the target is the repulsive
    speed ``gain * max(0, d_safe - d)``.  Beyond ``activation_distance``
    the task keeps its row but its weight drops to ``inactive_weight``.
    """

    kind: str
    gain: float
    d_safe: float = 0.05
    activation_distance: float = 0.30
    weight: float = 1.0
    inactive_weight: float = 1e-6

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.gain <= 0.0:
            raise ValueError("gain must be > 0")


@dataclass(frozen=True)
class Targets:
    """Fixed hand setpoints for a scenario."""

    position: np.ndarray
    orientation: np.ndarray  # 3x3 rotation

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, float))


@dataclass(frozen=True)
class JointLimits:
    qdot_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "qdot_max", np.asarray(self.qdot_max, float))
        object.__setattr__(self, "q_min", np.asarray(self.q_min, float))
        object.__setattr__(self, "q_max", np.asarray(self.q_max, float))


def make_tasks(
    chain: KinematicChain,
    state: RobotState,
    bindings: Sequence[TaskBinding],
    obstacle: Obstacle,
    targets: Targets,
    limits: JointLimits,
    dt: float,
    obstacle_center: np.ndarray | None = None,
) -> TaskLibrary:
    """Evaluate all bindings at the current state into a task library.

    Task ids follow binding order; the constraint set holds the joint
    velocity box and the position-limit rows ``(q_min - q)/dt <= qdot <=
    (q_max - q)/dt``, both enforced from ``limits.level``.
    """
    frames = forward_kinematics(chain, state.q)
    n = chain.dof
    center = obstacle.center_at(state.t) if obstacle_center is None else obstacle_center
    tasks = []
    for k, binding in enumerate(bindings):
        if binding.kind == "hand_position":
            A = point_jacobian(chain, state.q, chain.tip_link, chain.tip_offset, frames)
            err = targets.position - world_point(frames, chain.tip_link, chain.tip_offset)
            b = binding.gain * err
            W = binding.weight * np.eye(3)
        elif binding.kind == "hand_orientation":
            A = orientation_jacobian(chain, state.q, chain.tip_link, frames)
            err = rotation_log(targets.orientation @ frames[chain.tip_link].R.T)
            b = binding.gain * err
            W = binding.weight * np.eye(3)
        else:
            links = chain.torso_links if binding.kind == "torso_avoidance" else chain.arm_links
            d, _, grad = min_distance(chain, state.q, obstacle, center, links, frames)
            A = grad.reshape(1, n)
            b = np.array([binding.gain * max(0.0, binding.d_safe - d)])
            w = binding.weight if d <= binding.activation_distance else binding.inactive_weight
            W = np.array([[w]])
        tasks.append(Task(task_id=k, name=binding.kind, A=A, b=b, W=W))
    constraints = (
        Constraint(
            constraint_id=0,
            C=np.eye(n),
            lower=-limits.qdot_max * np.ones(n),
            upper=limits.qdot_max * np.ones(n),
            level=limits.level,
        ),
        Constraint(
            constraint_id=1,
            C=np.eye(n),
            lower=(limits.q_min - state.q) / dt,
            upper=(limits.q_max - state.q) / dt,
            level=limits.level,
        ),
    )
    return TaskLibrary(tasks=tuple(tasks), constraints=constraints, n=n)


def step(
    state: RobotState,
    x_command: np.ndarray,
    dt: float,
    qdot_max: np.ndarray | None = None,
    tol: float = 1e-8,
) -> RobotState:
    """Explicit-Euler velocity integration.

    When ``qdot_max`` is given and the command exceeds it by more than
    ``tol`` the returned state carries ``limit_exceeded=True``; that
    signals a constraint violation upstream, it does not reject the
    step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x_command, float)
    flag = bool(qdot_max is not None and np.any(np.abs(x) > np.asarray(qdot_max) + tol))
    return RobotState(
        q=state.q + x * dt, qdot=x.copy(), t=state.t + dt, limit_exceeded=flag
    )
