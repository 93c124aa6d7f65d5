"""Render the report figures from a run log to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

import numpy as np


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_figures(log, out_dir: str | Path) -> list[Path]:
    """One PNG per report quantity; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    t = log.t
    if t.size == 0:
        return written

    fig, ax = plt.subplots(figsize=(8, 3))
    for k, label in enumerate(log.candidate_labels):
        ax.plot(t, log.p[:, k], label=label, linewidth=1.5)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("hierarchy proportion")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(loc="center right", fontsize=8)
    written.append(_save(fig, out / "hierarchy_proportion.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    for j in range(log.dof):
        ax.plot(t, log.x_command[:, j], linewidth=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("joint velocity (rad/s)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "joint_velocity.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    accel = np.vstack([np.zeros((1, log.dof)), np.diff(log.x_command, axis=0) / log.dt])
    for j in range(log.dof):
        ax.plot(t, accel[:, j], linewidth=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("commanded accel estimate (rad/s$^2$)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "joint_acceleration_estimate.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, log.hand_pos_err * 1e3, "b-", linewidth=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("hand position RSS error (mm)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "hand_position_error.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, log.d_min, "g-", linewidth=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("minimum obstacle distance (m)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "min_distance.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, log.hand_orient_err * 1e3, "r-", linewidth=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("hand orientation RSS error (mrad)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "hand_orientation_error.png"))

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, log.cycle_time * 1e3, "k-", linewidth=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("cycle solve time (ms)")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out / "solve_duration.png"))
    return written
