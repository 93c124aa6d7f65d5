"""Closed-loop scenario execution, logging and report emission.

Each control cycle: evaluate event predicates, advance the transition
schedule, blend the candidate hierarchies, generate tasks and
constraints from the robot state, solve the hierarchy (recursive
projection path or strict baseline), then integrate the commanded joint
velocity.  Every cycle is recorded; reports are written as delimited
text with 17 significant digits so a round trip through the files is
exact.

Wall-clock timings are logged in a separate table (``timing.csv``) so
the per-cycle dynamics table stays byte-identical across repeated runs
of the same config.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import solve_strict_hierarchy
from .hqp import HierarchyError, solve_hierarchy
from .robot import (
    RobotState,
    extension_ratio,
    forward_kinematics,
    make_tasks,
    min_distance,
    rotation_log,
    step,
    world_point,
)
from .scenario import Scenario
from .transition import blend, initial_state, step_schedule

FLOAT_FMT = "%.17g"


class RunError(RuntimeError):
    """Scenario execution aborted; carries the failing cycle."""

    def __init__(self, message: str, cycle: int):
        super().__init__(message)
        self.cycle = cycle


@dataclass
class RunLog:
    """Per-cycle record of a scenario run.

    Dynamics arrays go into ``cycles.csv``; the wall-clock arrays
    (``cycle_time``, ``level_times``, ``level_iters``) go into
    ``timing.csv``.
    """

    scenario: str
    mode: str
    dt: float
    n_levels: int
    task_names: tuple[str, ...]
    candidate_labels: tuple[str, ...]
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    x_command: np.ndarray
    p: np.ndarray
    psi: np.ndarray  # flattened row-major per cycle
    d_min: np.ndarray
    task_residuals: np.ndarray
    hand_pos_err: np.ndarray
    hand_orient_err: np.ndarray
    extension: np.ndarray
    limit_flags: np.ndarray
    cycle_time: np.ndarray
    level_times: np.ndarray
    level_iters: np.ndarray

    @property
    def n_cycles(self) -> int:
        return self.t.shape[0]

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    @property
    def n_candidates(self) -> int:
        return self.p.shape[1]

    def cycle_columns(self) -> list[str]:
        n, n_h = self.dof, self.n_candidates
        n_t = len(self.task_names)
        n_l = self.n_levels
        cols = ["cycle", "t"]
        cols += [f"q{j}" for j in range(n)]
        cols += [f"qdot{j}" for j in range(n)]
        cols += [f"cmd{j}" for j in range(n)]
        cols += [f"p{k}" for k in range(n_h)]
        cols += [f"psi_{i}_{j}" for i in range(n_l) for j in range(n_t)]
        cols += ["d_min"]
        cols += [f"resid_{name}" for name in self.task_names]
        cols += ["hand_pos_err", "hand_orient_err", "extension", "limit_flag"]
        return cols

    def cycle_table(self) -> np.ndarray:
        idx = np.arange(self.n_cycles, dtype=float).reshape(-1, 1)
        return np.hstack(
            [
                idx,
                self.t.reshape(-1, 1),
                self.q,
                self.qdot,
                self.x_command,
                self.p,
                self.psi,
                self.d_min.reshape(-1, 1),
                self.task_residuals,
                self.hand_pos_err.reshape(-1, 1),
                self.hand_orient_err.reshape(-1, 1),
                self.extension.reshape(-1, 1),
                self.limit_flags.reshape(-1, 1).astype(float),
            ]
        )


def run_scenario(scenario: Scenario, mode: str | None = None, progress: bool = False):
    """Execute the closed loop; returns ``(RunLog, summary_dict)``.

    ``mode`` overrides the scenario's run mode.  Solver failures abort
    with :class:`RunError` carrying the cycle index.
    """
    mode = mode or scenario.mode
    chain = scenario.chain
    n = chain.dof
    n_cycles = scenario.n_cycles
    n_h = len(scenario.candidates)
    psi0 = scenario.candidates.candidates[0]
    n_levels, n_tasks = psi0.n_levels, psi0.n_tasks

    state = RobotState(q=scenario.initial_q.copy(), qdot=np.zeros(n), t=0.0)
    sched = initial_state(n_h, start=scenario.initial_candidate)
    rules = {rule.name: rule.set_target for rule in scenario.event_rules}

    rec = {
        "t": np.zeros(n_cycles),
        "q": np.zeros((n_cycles, n)),
        "qdot": np.zeros((n_cycles, n)),
        "x_command": np.zeros((n_cycles, n)),
        "p": np.zeros((n_cycles, n_h)),
        "psi": np.zeros((n_cycles, n_levels * n_tasks)),
        "d_min": np.zeros(n_cycles),
        "task_residuals": np.zeros((n_cycles, n_tasks)),
        "hand_pos_err": np.zeros(n_cycles),
        "hand_orient_err": np.zeros(n_cycles),
        "extension": np.zeros(n_cycles),
        "limit_flags": np.zeros(n_cycles, dtype=int),
        "cycle_time": np.zeros(n_cycles),
        "level_times": np.zeros((n_cycles, n_levels)),
        "level_iters": np.zeros((n_cycles, n_levels), dtype=int),
    }

    for cycle in range(n_cycles):
        tic = time.perf_counter()
        center = scenario.obstacle.center_at(state.t)
        frames = forward_kinematics(chain, state.q)
        d_min, _, _ = min_distance(chain, state.q, scenario.obstacle, center, None, frames)
        ext = extension_ratio(chain, state.q, frames=frames)
        events = [
            rule.name
            for rule in scenario.event_rules
            if rule.predicate_type == "arm_extension" and ext >= rule.threshold
        ]
        sched = step_schedule(
            sched,
            d_min,
            events,
            scenario.blend_policy,
            event_rules=rules,
            avoidance_candidate=scenario.avoidance_candidate,
        )
        psi = blend(scenario.candidates, sched.p)
        library = make_tasks(
            chain,
            state,
            scenario.bindings,
            scenario.obstacle,
            scenario.targets,
            scenario.limits,
            scenario.dt,
            obstacle_center=center,
        )
        try:
            if mode == "strict_hqp_baseline":
                solution = solve_strict_hierarchy(psi, library, scenario.solver)
            else:
                solution = solve_hierarchy(psi, library, scenario.solver)
        except (HierarchyError, ValueError) as exc:
            raise RunError(
                f"cycle {cycle} (t = {state.t:.4f} s): {exc}", cycle
            ) from exc
        toc = time.perf_counter()

        tip = world_point(frames, chain.tip_link, chain.tip_offset)
        pos_err = float(np.linalg.norm(scenario.targets.position - tip))
        orient_err = float(
            np.linalg.norm(
                rotation_log(scenario.targets.orientation @ frames[chain.tip_link].R.T)
            )
        )
        x_cmd = solution.x
        rec["t"][cycle] = state.t
        rec["q"][cycle] = state.q
        rec["qdot"][cycle] = state.qdot
        rec["x_command"][cycle] = x_cmd
        rec["p"][cycle] = sched.p
        rec["psi"][cycle] = psi.values.reshape(-1)
        rec["d_min"][cycle] = d_min
        for j, task in enumerate(library.tasks):
            rec["task_residuals"][cycle, j] = np.linalg.norm(task.A @ x_cmd - task.b)
        rec["hand_pos_err"][cycle] = pos_err
        rec["hand_orient_err"][cycle] = orient_err
        rec["extension"][cycle] = ext
        rec["cycle_time"][cycle] = toc - tic
        for lv in solution.levels:
            rec["level_times"][cycle, lv.level] = lv.solve_time
            rec["level_iters"][cycle, lv.level] = lv.qp_iterations

        state = step(state, x_cmd, scenario.dt, qdot_max=scenario.limits.qdot_max)
        rec["limit_flags"][cycle] = int(state.limit_exceeded)
        if progress and cycle % max(1, n_cycles // 10) == 0:
            print(
                f"  cycle {cycle:5d}/{n_cycles}  t={rec['t'][cycle]:7.3f}s  "
                f"d_min={d_min:6.3f}m  pos_err={pos_err:8.5f}m"
            )

    log = RunLog(
        scenario=scenario.name,
        mode=mode,
        dt=scenario.dt,
        n_levels=n_levels,
        task_names=tuple(b.kind for b in scenario.bindings),
        candidate_labels=scenario.candidates.labels,
        **rec,
    )
    return log, summarize(log)


def summarize(log: RunLog) -> dict:
    """Scalar metrics recomputed from the per-cycle arrays."""
    summary = {
        "scenario": log.scenario,
        "mode": log.mode,
        "n_cycles": log.n_cycles,
        "dt": log.dt,
        "duration": log.n_cycles * log.dt,
    }
    if log.n_cycles == 0:
        return summary
    jumps = (
        np.max(np.abs(np.diff(log.x_command, axis=0)), axis=1)
        if log.n_cycles > 1
        else np.zeros(1)
    )
    psi_steps = (
        np.max(np.abs(np.diff(log.psi, axis=0)), axis=1)
        if log.n_cycles > 1
        else np.zeros(1)
    )
    at_vertex = np.any(log.p == 1.0, axis=1)
    summary.update(
        {
            "max_rss_hand_orientation_error_rad": float(log.hand_orient_err.max()),
            "max_rss_hand_position_error_m": float(log.hand_pos_err.max()),
            "integrated_abs_hand_position_error_m_s": float(
                np.trapz(log.hand_pos_err, dx=log.dt)
            ),
            "final_hand_position_error_m": float(log.hand_pos_err[-1]),
            "final_hand_orientation_error_rad": float(log.hand_orient_err[-1]),
            "min_d_min_m": float(log.d_min.min()),
            "mean_cycle_solve_time_s": float(log.cycle_time.mean()),
            "max_cycle_solve_time_s": float(log.cycle_time.max()),
            "max_joint_velocity_jump_rad_s": float(jumps.max()),
            "max_psi_step": float(psi_steps.max()),
            "velocity_limit_violations": int(log.limit_flags.sum()),
            "transition_cycles": int(np.sum(~at_vertex)),
        }
    )
    for k in range(log.n_candidates):
        summary[f"p_max_{log.candidate_labels[k]}"] = float(log.p[:, k].max())
    if np.any(~at_vertex) and np.any(at_vertex):
        summary["mean_solve_time_transition_s"] = float(
            log.cycle_time[~at_vertex].mean()
        )
        summary["mean_solve_time_no_transition_s"] = float(
            log.cycle_time[at_vertex].mean()
        )
        jump_mask = at_vertex[:-1] & at_vertex[1:] if log.n_cycles > 1 else np.zeros(0, bool)
        if jump_mask.any():
            summary["max_jump_no_transition_rad_s"] = float(jumps[jump_mask].max())
        if (~jump_mask).any():
            summary["max_jump_transition_rad_s"] = float(jumps[~jump_mask].max())
    return summary


def _write_table(path: Path, header: list[str], table: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def emit_outputs(log: RunLog, summary: dict, out_dir: str | Path, figures: bool = True):
    """Write the per-cycle table, timing table, summary and plot data.

    Layout under ``out_dir``:

    - ``cycles.csv``: all dynamics columns, one row per cycle
      (deterministic for a fixed config).
    - ``timing.csv``: wall-clock cycle and per-level solve times plus QP
      iteration counts.
    - ``summary.txt``: ``key: value`` lines.
    - ``plotdata/*.csv``: one time-series file per report figure.
    - ``figures/*.png``: rendered figures (optional).

    All floats are serialized with 17 significant digits.  Returns the
    list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    cycles_path = out / "cycles.csv"
    _write_table(cycles_path, log.cycle_columns(), log.cycle_table())
    written.append(cycles_path)

    timing_cols = (
        ["cycle", "t", "cycle_time"]
        + [f"level_time{i}" for i in range(log.n_levels)]
        + [f"level_iters{i}" for i in range(log.n_levels)]
    )
    timing_tab = np.hstack(
        [
            np.arange(log.n_cycles, dtype=float).reshape(-1, 1),
            log.t.reshape(-1, 1),
            log.cycle_time.reshape(-1, 1),
            log.level_times,
            log.level_iters.astype(float),
        ]
    )
    timing_path = out / "timing.csv"
    _write_table(timing_path, timing_cols, timing_tab)
    written.append(timing_path)

    summary_path = out / "summary.txt"
    with open(summary_path, "w") as fh:
        for key, value in summary.items():
            if isinstance(value, float):
                fh.write(f"{key}: {FLOAT_FMT % value}\n")
            else:
                fh.write(f"{key}: {value}\n")
    written.append(summary_path)

    plotdata = out / "plotdata"
    plotdata.mkdir(exist_ok=True)
    t = log.t.reshape(-1, 1)
    series = {
        "hierarchy_proportion": (
            ["t"] + [f"p_{lbl}" for lbl in log.candidate_labels],
            np.hstack([t, log.p]),
        ),
        "joint_velocity": (
            ["t"] + [f"cmd{j}" for j in range(log.dof)],
            np.hstack([t, log.x_command]),
        ),
        "joint_acceleration_estimate": (
            ["t"] + [f"qddot{j}" for j in range(log.dof)],
            np.hstack(
                [
                    t,
                    np.vstack(
                        [np.zeros((1, log.dof)), np.diff(log.x_command, axis=0) / log.dt]
                    )
                    if log.n_cycles
                    else np.zeros((0, log.dof)),
                ]
            ),
        ),
        "hand_position_error": (
            ["t", "rss_error_m"],
            np.hstack([t, log.hand_pos_err.reshape(-1, 1)]),
        ),
        "min_distance": (
            ["t", "d_min_m"],
            np.hstack([t, log.d_min.reshape(-1, 1)]),
        ),
        "hand_orientation_error": (
            ["t", "rss_error_rad"],
            np.hstack([t, log.hand_orient_err.reshape(-1, 1)]),
        ),
        "solve_duration": (
            ["t", "cycle_time_s"],
            np.hstack([t, log.cycle_time.reshape(-1, 1)]),
        ),
    }
    for name, (header, tab) in series.items():
        path = plotdata / f"{name}.csv"
        _write_table(path, header, tab)
        written.append(path)

    if figures:
        from .figures import render_figures

        written.extend(render_figures(log, out / "figures"))
    return written


def load_cycles(path: str | Path):
    """Parse a ``cycles.csv`` back into ``(columns, table)`` exactly."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.size == 0:
        table = table.reshape(0, len(header))
    if table.shape[1] != len(header):
        raise ValueError(f"{path}: {table.shape[1]} columns, header has {len(header)}")
    return header, table


@dataclass
class DivergenceReport:
    max_x_command: float
    max_q: float
    first_exceed_cycle: int  # -1 when never over threshold
    threshold: float
    per_cycle: np.ndarray = field(repr=False, default=None)

    @property
    def max_divergence(self) -> float:
        return max(self.max_x_command, self.max_q)


def compare_runs(log_a, log_b, threshold: float = 1e-6) -> DivergenceReport:
    """Per-cycle divergence of command and position between two runs.

    Accepts :class:`RunLog` objects or paths to ``cycles.csv`` files.
    Requires equal cycle counts.
    """

    def extract(obj):
        if isinstance(obj, RunLog):
            return obj.x_command, obj.q
        header, table = load_cycles(obj)
        cmd_cols = [k for k, c in enumerate(header) if c.startswith("cmd")]
        q_cols = [k for k, c in enumerate(header) if c.startswith("q") and c[1:].isdigit()]
        return table[:, cmd_cols], table[:, q_cols]

    cmd_a, q_a = extract(log_a)
    cmd_b, q_b = extract(log_b)
    if cmd_a.shape != cmd_b.shape or q_a.shape != q_b.shape:
        raise ValueError(
            f"shape mismatch: {cmd_a.shape}/{q_a.shape} vs {cmd_b.shape}/{q_b.shape}"
        )
    d_cmd = (
        np.max(np.abs(cmd_a - cmd_b), axis=1) if cmd_a.size else np.zeros(len(cmd_a))
    )
    d_q = np.max(np.abs(q_a - q_b), axis=1) if q_a.size else np.zeros(len(q_a))
    per_cycle = np.maximum(d_cmd, d_q)
    over = np.nonzero(per_cycle > threshold)[0]
    return DivergenceReport(
        max_x_command=float(d_cmd.max(initial=0.0)),
        max_q=float(d_q.max(initial=0.0)),
        first_exceed_cycle=int(over[0]) if over.size else -1,
        threshold=threshold,
        per_cycle=per_cycle,
    )
