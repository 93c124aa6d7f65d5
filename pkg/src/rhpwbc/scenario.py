"""Scenario configuration: schema, loading and validation.

Scenario files are YAML documents (shipped with a ``.cfg`` extension)
carrying a ``schema_version`` field.  A scenario fixes the robot chain,
the obstacle path, the candidate hierarchies with their blend policy
and event rules, the task bindings and targets, joint limits, solver
settings, duration and run mode.  Loading resolves everything into
ready-to-run objects; ``initial`` targets are resolved against the
starting configuration.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .qp import SolverConfig
from .robot import (
    Joint,
    JointLimits,
    KinematicChain,
    Obstacle,
    Targets,
    TaskBinding,
    default_chain,
    forward_kinematics,
    rotation_about_axis,
    world_point,
)
from .task_model import PriorityMatrix, validate_priority_matrix
from .transition import BlendPolicy, CandidateSet

SCHEMA_VERSION = 1
MODES = ("rhp_hqp", "strict_hqp_baseline")


class ConfigError(ValueError):
    """A scenario file failed to parse or validate."""


@dataclass(frozen=True)
class EventRule:
    """Scenario predicate that retargets the long-term candidate.

    ``predicate`` currently supports ``arm_extension``: fires while the
    arm extension ratio is at or above ``threshold``.
    """

    name: str
    predicate_type: str
    threshold: float
    set_target: int


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    dt: float
    mode: str
    solver: SolverConfig
    chain: KinematicChain
    initial_q: np.ndarray
    limits: JointLimits
    obstacle: Obstacle
    bindings: tuple[TaskBinding, ...]
    targets: Targets
    candidates: CandidateSet
    blend_policy: BlendPolicy
    initial_candidate: int
    avoidance_candidate: int | None
    event_rules: tuple[EventRule, ...]
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_cycles(self) -> int:
        return int(round(self.duration / self.dt))


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return data[key]


def _as_vector(value, n: int, context: str) -> np.ndarray:
    arr = np.asarray(value, float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{context}: expected scalar or length-{n} list")
    return arr


def _build_chain(spec) -> KinematicChain:
    if spec is None or spec == "default_10dof":
        return default_chain()
    if not isinstance(spec, dict):
        raise ConfigError(f"chain: expected 'default_10dof' or a mapping, got {spec!r}")
    joints = tuple(
        Joint(j["name"], tuple(j["axis"]), tuple(j["offset"]))
        for j in _require(spec, "joints", "chain")
    )
    link_points = tuple(
        tuple(tuple(p) for p in pts) for pts in _require(spec, "link_points", "chain")
    )
    return KinematicChain(
        joints=joints,
        link_points=link_points,
        tip_offset=tuple(spec.get("tip_offset", (0.0, 0.0, 0.0))),
        torso_links=tuple(spec.get("torso_links", ())),
        arm_links=tuple(spec.get("arm_links", ())),
    )


def _build_obstacle(spec: dict) -> Obstacle:
    radius = float(_require(spec, "radius", "obstacle"))
    waypoints = _require(spec, "waypoints", "obstacle")
    times = tuple(float(w["t"]) for w in waypoints)
    centers = tuple(tuple(float(c) for c in w["center"]) for w in waypoints)
    try:
        return Obstacle(radius=radius, times=times, centers=centers)
    except ValueError as exc:
        raise ConfigError(f"obstacle: {exc}") from exc


def _build_bindings(specs) -> tuple[TaskBinding, ...]:
    bindings = []
    for k, spec in enumerate(specs):
        try:
            bindings.append(
                TaskBinding(
                    kind=_require(spec, "kind", f"tasks[{k}]"),
                    gain=float(_require(spec, "gain", f"tasks[{k}]")),
                    d_safe=float(spec.get("d_safe", 0.05)),
                    activation_distance=float(spec.get("activation_distance", 0.30)),
                    weight=float(spec.get("weight", 1.0)),
                    inactive_weight=float(spec.get("inactive_weight", 1e-6)),
                )
            )
        except ValueError as exc:
            raise ConfigError(f"tasks[{k}]: {exc}") from exc
    return tuple(bindings)


def _resolve_targets(spec: dict, chain: KinematicChain, q0: np.ndarray) -> Targets:
    frames = forward_kinematics(chain, q0)
    tip0 = world_point(frames, chain.tip_link, chain.tip_offset)
    R0 = frames[chain.tip_link].R
    pos_spec = spec.get("hand_position", "initial")
    if pos_spec == "initial":
        position = tip0
    elif isinstance(pos_spec, dict) and "offset" in pos_spec:
        position = tip0 + np.asarray(pos_spec["offset"], float)
    else:
        position = np.asarray(pos_spec, float)
        if position.shape != (3,):
            raise ConfigError("targets.hand_position: expected 3 numbers")
    orient_spec = spec.get("hand_orientation", "initial")
    if orient_spec == "initial":
        orientation = R0
    else:
        rotvec = np.asarray(orient_spec, float)
        if rotvec.shape != (3,):
            raise ConfigError("targets.hand_orientation: expected 'initial' or a rotation vector")
        angle = float(np.linalg.norm(rotvec))
        axis = rotvec / angle if angle > 0.0 else np.array([1.0, 0.0, 0.0])
        orientation = rotation_about_axis(axis, angle)
    return Targets(position=position, orientation=orientation)


def _build_hierarchy(spec: dict, n_tasks: int):
    cand_specs = _require(spec, "candidates", "hierarchy")
    matrices = []
    labels = []
    for k, c in enumerate(cand_specs):
        mat = np.asarray(_require(c, "matrix", f"hierarchy.candidates[{k}]"), float)
        psi = PriorityMatrix(mat)
        violation = validate_priority_matrix(psi, n_tasks=n_tasks)
        if violation is not None:
            raise ConfigError(
                f"hierarchy.candidates[{k}] ({c.get('label', k)}): {violation.message}"
            )
        matrices.append(psi)
        labels.append(str(c.get("label", f"H{k}")))
    try:
        candidates = CandidateSet(candidates=tuple(matrices), labels=tuple(labels))
    except ValueError as exc:
        raise ConfigError(f"hierarchy: {exc}") from exc
    blend_spec = spec.get("blend", {})
    try:
        policy = BlendPolicy(
            d_low=float(blend_spec.get("d_low", 0.05)),
            d_high=float(blend_spec.get("d_high", 0.2)),
            ramp=str(blend_spec.get("ramp", "linear")),
            rate_limit=float(blend_spec.get("rate_limit", 0.01)),
        )
    except ValueError as exc:
        raise ConfigError(f"hierarchy.blend: {exc}") from exc
    initial = int(spec.get("initial_candidate", 0))
    avoidance = spec.get("avoidance_candidate")
    avoidance = None if avoidance is None else int(avoidance)
    for label, idx in (("initial_candidate", initial), ("avoidance_candidate", avoidance)):
        if idx is not None and not 0 <= idx < len(candidates):
            raise ConfigError(f"hierarchy.{label}: index {idx} out of range")
    rules = []
    for k, ev in enumerate(spec.get("events", ())):
        pred = _require(ev, "predicate", f"hierarchy.events[{k}]")
        ptype = _require(pred, "type", f"hierarchy.events[{k}].predicate")
        if ptype != "arm_extension":
            raise ConfigError(
                f"hierarchy.events[{k}]: unknown predicate type {ptype!r}"
            )
        target = int(_require(ev, "set_target", f"hierarchy.events[{k}]"))
        if not 0 <= target < len(candidates):
            raise ConfigError(f"hierarchy.events[{k}]: set_target out of range")
        rules.append(
            EventRule(
                name=str(_require(ev, "name", f"hierarchy.events[{k}]")),
                predicate_type=ptype,
                threshold=float(pred.get("threshold", 0.95)),
                set_target=target,
            )
        )
    return candidates, policy, initial, avoidance, tuple(rules)


def scenario_from_dict(data: dict, name_hint: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r} (this build reads {SCHEMA_VERSION})"
        )
    name = str(data.get("name", name_hint))
    mode = str(data.get("mode", "rhp_hqp"))
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    duration = float(_require(data, "duration", name))
    dt = float(_require(data, "dt", name))
    if duration < 0.0 or dt <= 0.0:
        raise ConfigError("duration must be >= 0 and dt > 0")
    solver_spec = data.get("solver", {})
    try:
        solver = SolverConfig(
            regularization=float(solver_spec.get("regularization", 1e-8)),
            qp_tolerance=float(solver_spec.get("qp_tolerance", 1e-8)),
            max_qp_iterations=int(solver_spec.get("max_qp_iterations", 300)),
            rank_tol=float(solver_spec.get("rank_tol", 1e-10)),
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    chain = _build_chain(data.get("chain"))
    n = chain.dof
    initial_q = _as_vector(data.get("initial_q", 0.0), n, "initial_q")
    limits_spec = data.get("limits", {})
    limits = JointLimits(
        qdot_max=_as_vector(limits_spec.get("qdot_max", 3.0), n, "limits.qdot_max"),
        q_min=_as_vector(limits_spec.get("q_min", -2.9), n, "limits.q_min"),
        q_max=_as_vector(limits_spec.get("q_max", 2.9), n, "limits.q_max"),
        level=int(limits_spec.get("level", 0)),
    )
    if np.any(initial_q < limits.q_min) or np.any(initial_q > limits.q_max):
        raise ConfigError("initial_q violates the position limits")
    obstacle = _build_obstacle(_require(data, "obstacle", name))
    bindings = _build_bindings(_require(data, "tasks", name))
    targets = _resolve_targets(data.get("targets", {}), chain, initial_q)
    candidates, policy, initial, avoidance, rules = _build_hierarchy(
        _require(data, "hierarchy", name), n_tasks=len(bindings)
    )
    n_levels = candidates.candidates[0].n_levels
    if limits.level >= n_levels:
        raise ConfigError(
            f"limits.level {limits.level} outside the {n_levels}-level hierarchy"
        )
    if mode == "strict_hqp_baseline":
        for k, cand in enumerate(candidates.candidates):
            vals = cand.values
            if not np.all((vals == 0.0) | (vals == 1.0)):
                raise ConfigError(
                    f"strict_hqp_baseline needs binary candidates; candidate {k} is not"
                )
    return Scenario(
        name=name,
        seed=int(data.get("seed", 0)),
        duration=duration,
        dt=dt,
        mode=mode,
        solver=solver,
        chain=chain,
        initial_q=initial_q,
        limits=limits,
        obstacle=obstacle,
        bindings=bindings,
        targets=targets,
        candidates=candidates,
        blend_policy=policy,
        initial_candidate=initial,
        avoidance_candidate=avoidance,
        event_rules=rules,
        raw=data,
    )


def shipped_config_path(name: str) -> Path | None:
    """Path of a bundled scenario config, if ``name`` matches one."""
    base = name if name.endswith(".cfg") else f"{name}.cfg"
    ref = importlib.resources.files("rhpwbc") / "configs" / base
    if ref.is_file():
        return Path(str(ref))
    return None


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario from a file path or a bundled config name."""
    p = Path(path)
    if not p.is_file():
        shipped = shipped_config_path(str(path))
        if shipped is None:
            raise ConfigError(f"scenario config not found: {path}")
        p = shipped
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML: {exc}") from exc
    return scenario_from_dict(data, name_hint=p.stem)
