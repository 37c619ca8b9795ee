"""Command-line front end: single runs, batch sweeps, snapshot inspection."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .controller import MODES, NavigationController, WorldSnapshot
from .geometry import extract_level_contours
from .prediction import ObstacleTrack
from .scenarios import BUILTIN_SCENARIOS, load_scenario, write_example_yamls
from .sim_harness import MetricsTable, run_batch, run_scenario, write_trajectory


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "scenario",
        help=f"builtin scenario ({', '.join(sorted(BUILTIN_SCENARIOS))}) or YAML path",
    )
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario, seed=args.seed)
    record = run_scenario(config, mode=args.mode, theta0=args.theta)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    traj_path = args.out_dir / f"{record.scenario}_{record.mode}_trajectory.csv"
    write_trajectory(record, traj_path)
    summary = {
        "scenario": record.scenario,
        "mode": record.mode,
        "seed": record.seed,
        "outcome": record.outcome,
        "timespan": record.timespan,
        "steps": record.steps,
        "infeasible_steps": record.infeasible_steps,
        "min_clearance": record.min_clearance,
        "cycle_ms_mean": float(record.cycle_times.mean() * 1e3),
    }
    summary_path = args.out_dir / f"{record.scenario}_{record.mode}_run.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"{record.scenario} [{record.mode}] -> {record.outcome} "
        f"in {record.timespan:.2f} s ({record.steps} steps, "
        f"{record.infeasible_steps} infeasible)"
    )
    print(f"trajectory: {traj_path}")
    return 0


def _cmd_batch(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario, seed=args.seed)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            print(f"unknown mode {m!r}; choose from {MODES}", file=sys.stderr)
            return 2
    table, records = run_batch(config, modes, n_runs=args.runs)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out_dir / f"{config.name}_metrics.csv")
    table.to_json(args.out_dir / f"{config.name}_metrics.json")
    if args.save_trajectories:
        for i, rec in enumerate(records):
            write_trajectory(
                rec, args.out_dir / f"{rec.scenario}_{rec.mode}_run{i % args.runs}.csv"
            )
    print(table.to_text())
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    """Dump the fields the controller would see at t = 0 for plotting."""
    config = load_scenario(args.scenario, seed=args.seed)
    controller = NavigationController(config.controller)
    tracks = []
    for ped in config.pedestrians:
        track = ObstacleTrack(obstacle_id=ped.name, radius=ped.radius)
        track.append(0.0, ped.waypoints[0])
        track.append(config.dt, ped.waypoints[0] + config.dt * ped.speed * _unit(ped))
        tracks.append(track)
    snapshot = WorldSnapshot(
        t=config.dt,
        robot=config.robot,
        target=config.target,
        tracks=tracks,
        statics=config.statics,
    )
    u, diag = controller.step(snapshot)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    info = {
        "scenario": config.name,
        "mode": config.controller.mode,
        "u": [u.v, u.omega],
        "feasible": diag.feasible,
        "h_values": diag.h_values,
        "h_combined": diag.h_combined,
        "min_h": diag.min_h,
        "beta": diag.beta,
        "phi": None if diag.phi is None else [float(x) for x in diag.phi],
        "active_constraints": diag.active_constraints,
    }
    (args.out_dir / f"{config.name}_snapshot.json").write_text(
        json.dumps(info, indent=2) + "\n"
    )

    grid = controller._raster_grid
    if grid is not None:
        np.savetxt(
            args.out_dir / f"{config.name}_sbar.csv",
            grid.values,
            delimiter=",",
            header=f"origin={grid.origin.tolist()} resolution={grid.resolution}",
        )
        level = grid.value_at(config.robot.poi)
        for i, contour in enumerate(extract_level_contours(grid, level)):
            np.savetxt(
                args.out_dir / f"{config.name}_isoline{i}.csv",
                contour.points,
                delimiter=",",
            )
    print(json.dumps(info, indent=2))
    return 0


def _unit(ped) -> np.ndarray:
    d = ped.waypoints[1] - ped.waypoints[0]
    n = np.linalg.norm(d)
    return d / n if n > 0 else np.zeros(2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcbfnav",
        description="Proactive safe navigation: scenario runs, sweeps, inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario run")
    _add_common(p_run)
    p_run.add_argument("--mode", choices=MODES, default=None, help="controller mode override")
    p_run.add_argument("--theta", type=float, default=None, help="initial heading override")
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="sweep modes over seeded orientations")
    _add_common(p_batch)
    p_batch.add_argument(
        "--modes", default="CBF,MCBF,MMP_MCBF", help="comma-separated mode list"
    )
    p_batch.add_argument("--runs", type=int, default=10, help="runs per mode")
    p_batch.add_argument(
        "--save-trajectories", action="store_true", help="write per-run CSVs"
    )
    p_batch.set_defaults(func=_cmd_batch)

    p_inspect = sub.add_parser("inspect", help="dump fields/contours of the first cycle")
    _add_common(p_inspect)
    p_inspect.set_defaults(func=_cmd_inspect)

    p_examples = sub.add_parser("examples", help="write builtin scenarios as YAML")
    p_examples.add_argument("--out-dir", type=Path, default=Path("scenarios"))
    p_examples.set_defaults(func=_cmd_examples)

    return parser


def _cmd_examples(args: argparse.Namespace) -> int:
    for path in write_example_yamls(args.out_dir):
        print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
