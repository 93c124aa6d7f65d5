"""Command line interface.

Subcommands:

- ``run <config> [--out DIR] [--mode rhp_hqp|strict_hqp_baseline]
  [--no-figures] [--quiet]``: execute a scenario and write the report.
- ``compare <logA> <logB> [--threshold X]``: per-cycle divergence of two
  ``cycles.csv`` logs.
- ``validate <config>``: parse and validate a scenario file.

Exit codes: 0 success, 1 runtime/solver failure, 2 configuration error,
3 comparison over threshold.  ``RHP_HQP_OUT`` overrides the default
output directory of ``run``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .runner import RunError, compare_runs, emit_outputs, run_scenario
from .scenario import MODES, ConfigError, load_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rhpwbc",
        description="Hierarchical task-priority control scenario runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write its report")
    p_run.add_argument("config", help="scenario file path or bundled config name")
    p_run.add_argument(
        "--out",
        default=None,
        help="output directory (default $RHP_HQP_OUT/<scenario> or ./out/<scenario>)",
    )
    p_run.add_argument("--mode", choices=MODES, default=None, help="override run mode")
    p_run.add_argument(
        "--no-figures", action="store_true", help="skip PNG figure rendering"
    )
    p_run.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_cmp = sub.add_parser("compare", help="compare two per-cycle logs")
    p_cmp.add_argument("log_a", help="first cycles.csv")
    p_cmp.add_argument("log_b", help="second cycles.csv")
    p_cmp.add_argument("--threshold", type=float, default=1e-6)

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("config", help="scenario file path or bundled config name")
    return parser


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    if out is None:
        base = os.environ.get("RHP_HQP_OUT", "out")
        out = Path(base) / scenario.name
    mode = args.mode or scenario.mode
    if not args.quiet:
        print(f"running {scenario.name} ({mode}), {scenario.n_cycles} cycles ...")
    try:
        log, summary = run_scenario(scenario, mode=mode, progress=not args.quiet)
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    written = emit_outputs(log, summary, out, figures=not args.no_figures)
    if not args.quiet:
        for key in (
            "max_rss_hand_position_error_m",
            "max_rss_hand_orientation_error_rad",
            "min_d_min_m",
            "mean_cycle_solve_time_s",
            "max_joint_velocity_jump_rad_s",
        ):
            if key in summary:
                print(f"  {key}: {summary[key]:.6g}")
        print(f"report written to {Path(out)} ({len(written)} files)")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        report = compare_runs(args.log_a, args.log_b, threshold=args.threshold)
    except (OSError, ValueError) as exc:
        print(f"compare failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"max |command| divergence: {report.max_x_command:.6g}")
    print(f"max |position| divergence: {report.max_q:.6g}")
    if report.first_exceed_cycle >= 0:
        print(
            f"threshold {report.threshold:g} first exceeded at cycle "
            f"{report.first_exceed_cycle}"
        )
        return EXIT_DIVERGED
    print(f"within threshold {report.threshold:g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.config)
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(
        f"ok: {scenario.name} ({scenario.mode}, {scenario.n_cycles} cycles, "
        f"{len(scenario.candidates)} candidate hierarchies)"
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "compare":
        return cmd_compare(args)
    return cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
