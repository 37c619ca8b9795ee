"""Deterministic scenario simulation and batch evaluation.

A scenario is a static world, waypoint-following pedestrians with seeded
Gaussian jitter, one robot, and a controller configuration. Runs are fully
reproducible: identical (config, seed, mode) produce bitwise-identical
trajectories. Collision is judged against physical geometry only (robot disc
vs. pedestrian discs and static polygons); predicted reachable sets are
virtual and may be grazed without penalty.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from numpy.typing import NDArray

from .controller import (
    ControllerConfig,
    ControlInput,
    NavigationController,
    RobotState,
    WorldSnapshot,
)
from .geometry import Polyline, polygon_contains, polyline_distance, wrap_angle
from .prediction import ObstacleTrack

STEP_CAP = 800

OUTCOMES = ("SUCCESS", "COLLISION", "TIMEOUT")

TRAJECTORY_COLUMNS = (
    "t",
    "px",
    "py",
    "theta",
    "v",
    "omega",
    "min_h",
    "feasible",
    "beta",
    "phi_x",
    "phi_y",
)


@dataclass
class PedestrianSpec:
    """Waypoint walker: advances along its polyline at constant speed after an
    optional start delay, with per-step zero-mean Gaussian positional jitter.
    The jittered position is the physical one (used for collisions and seen by
    the controller). At the final waypoint the walker stops and holds."""

    name: str
    waypoints: NDArray[np.float64]
    speed: float
    delay: float = 0.0
    noise: float = 0.0
    radius: float = 0.3

    def __post_init__(self) -> None:
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if self.waypoints.shape[0] < 2:
            raise ValueError(f"pedestrian {self.name!r} needs at least 2 waypoints")
        if self.speed <= 0.0 or self.noise < 0.0 or self.delay < 0.0 or self.radius <= 0.0:
            raise ValueError(f"pedestrian {self.name!r} has invalid parameters")

    def path(self) -> Polyline:
        return Polyline(self.waypoints, closed=False)


@dataclass
class ScenarioConfig:
    """Complete, serializable description of one simulation setup."""

    name: str
    robot: RobotState
    target: NDArray[np.float64]
    seed: int = 0
    dt: float = 0.033
    duration: float = 26.4
    statics: list[Polyline] = field(default_factory=list)
    static_names: list[str] = field(default_factory=list)
    pedestrians: list[PedestrianSpec] = field(default_factory=list)
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self) -> None:
        self.target = np.asarray(self.target, dtype=np.float64).reshape(2)
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps > STEP_CAP:
            raise ValueError(
                f"duration/dt = {self.steps} exceeds the step cap {STEP_CAP}"
            )
        for poly in self.statics:
            if not poly.closed:
                raise ValueError("static obstacles must be closed polygons")
        if not self.static_names:
            self.static_names = [f"static{i}" for i in range(len(self.statics))]
        if len(self.static_names) != len(self.statics):
            raise ValueError("static_names must align with statics")

    @property
    def steps(self) -> int:
        return int(np.ceil(self.duration / self.dt - 1e-9))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "dt": self.dt,
            "duration": self.duration,
            "robot": {
                "x": self.robot.px,
                "y": self.robot.py,
                "theta": self.robot.theta,
                "model": self.robot.model,
                "a": self.robot.a,
            },
            "target": [float(self.target[0]), float(self.target[1])],
            "statics": [
                {"name": nm, "vertices": poly.points.tolist()}
                for nm, poly in zip(self.static_names, self.statics)
            ],
            "pedestrians": [
                {
                    "name": p.name,
                    "waypoints": p.waypoints.tolist(),
                    "speed": p.speed,
                    "delay": p.delay,
                    "noise": p.noise,
                    "radius": p.radius,
                }
                for p in self.pedestrians
            ],
            "controller": {
                k: v for k, v in vars(self.controller).items() if v is not None
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {
            "name",
            "seed",
            "dt",
            "duration",
            "robot",
            "target",
            "statics",
            "pedestrians",
            "controller",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        rb = data["robot"]
        robot = RobotState(
            px=float(rb["x"]),
            py=float(rb["y"]),
            theta=float(rb.get("theta", 0.0)),
            model=rb.get("model", "shifted"),
            a=float(rb.get("a", 0.2)),
        )
        statics = []
        names = []
        for entry in data.get("statics", []):
            names.append(entry["name"])
            statics.append(Polyline(np.asarray(entry["vertices"], dtype=np.float64), closed=True))
        peds = [
            PedestrianSpec(
                name=entry["name"],
                waypoints=np.asarray(entry["waypoints"], dtype=np.float64),
                speed=float(entry["speed"]),
                delay=float(entry.get("delay", 0.0)),
                noise=float(entry.get("noise", 0.0)),
                radius=float(entry.get("radius", 0.3)),
            )
            for entry in data.get("pedestrians", [])
        ]
        controller = ControllerConfig(**data.get("controller", {}))
        return cls(
            name=data["name"],
            seed=int(data.get("seed", 0)),
            dt=float(data.get("dt", 0.033)),
            duration=float(data.get("duration", 26.4)),
            robot=robot,
            target=np.asarray(data["target"], dtype=np.float64),
            statics=statics,
            static_names=names,
            pedestrians=peds,
            controller=controller,
        )

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def step_unicycle(state: RobotState, u: ControlInput, dt: float) -> RobotState:
    """RK4 step of the standard unicycle kinematics; the shifted point of
    interest is an output map, so the physical pose is what integrates."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v, omega = u.v, u.omega

    def deriv(theta: float) -> NDArray[np.float64]:
        return np.array([v * np.cos(theta), v * np.sin(theta), omega])

    y = state.pose
    k1 = deriv(y[2])
    k2 = deriv(y[2] + 0.5 * dt * k1[2])
    k3 = deriv(y[2] + 0.5 * dt * k2[2])
    k4 = deriv(y[2] + dt * k3[2])
    y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return RobotState(
        px=float(y[0]),
        py=float(y[1]),
        theta=float(wrap_angle(y[2])),
        model=state.model,
        a=state.a,
    )


@dataclass
class _PedestrianRuntime:
    spec: PedestrianSpec
    path: Polyline
    arc: float = 0.0
    position: NDArray[np.float64] = field(default_factory=lambda: np.zeros(2))
    finished: bool = False


def _init_pedestrians(specs: list[PedestrianSpec]) -> list[_PedestrianRuntime]:
    out = []
    for spec in specs:
        path = spec.path()
        out.append(_PedestrianRuntime(spec, path, 0.0, spec.waypoints[0].copy(), False))
    return out


def step_pedestrians(
    peds: list[_PedestrianRuntime],
    t: float,
    dt: float,
    rng: np.random.Generator,
    tracks: list[ObstacleTrack],
) -> None:
    """Advance walkers by one step and append their new physical positions to
    the tracks. Noise is fresh per step (a jittery walk, not a random drift);
    finished walkers hold the final waypoint without jitter."""
    for ped, track in zip(peds, tracks):
        if ped.finished:
            pass
        elif t < ped.spec.delay:
            ped.position = ped.spec.waypoints[0].copy()
        else:
            ped.arc = min(ped.arc + ped.spec.speed * dt, ped.path.length)
            base = ped.path.point_at(ped.arc)
            if ped.arc >= ped.path.length:
                ped.finished = True
                ped.position = ped.spec.waypoints[-1].copy()
            else:
                noise = rng.normal(0.0, ped.spec.noise, 2) if ped.spec.noise > 0.0 else np.zeros(2)
                ped.position = base + noise
        track.append(t, ped.position)


@dataclass
class RunRecord:
    """Everything one run produced, sufficient to recompute every metric."""

    scenario: str
    mode: str
    seed: int
    outcome: str
    timespan: float
    steps: int
    infeasible_steps: int
    min_clearance: float
    trajectory: dict[str, NDArray[np.float64]]
    cycle_times: NDArray[np.float64]

    @property
    def collided(self) -> bool:
        return self.outcome == "COLLISION"

    @property
    def succeeded(self) -> bool:
        return self.outcome == "SUCCESS"


def _clearance(
    position: NDArray[np.float64],
    safety_radius: float,
    statics: list[Polyline],
    peds: list[_PedestrianRuntime],
) -> float:
    """Signed distance from the robot disc to the nearest physical obstacle."""
    best = float("inf")
    for poly in statics:
        d = polyline_distance(poly, position)
        if polygon_contains(poly, position):
            d = -d
        best = min(best, d - safety_radius)
    for ped in peds:
        gap = float(np.linalg.norm(position - ped.position)) - ped.spec.radius - safety_radius
        best = min(best, gap)
    return best


def run_scenario(
    config: ScenarioConfig,
    mode: str | None = None,
    seed: int | None = None,
    theta0: float | None = None,
) -> RunRecord:
    """Simulate one run to SUCCESS, COLLISION, or TIMEOUT.

    The loop order is: pedestrians move, the controller sees the new world,
    the robot integrates the returned input, and the new pose is checked for
    collision and goal arrival.
    """
    ctrl_cfg = replace(config.controller, dt=config.dt)
    if mode is not None:
        ctrl_cfg = replace(ctrl_cfg, mode=mode)
    run_seed = config.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)

    state = config.robot
    if theta0 is not None:
        state = replace(state, theta=float(theta0))
    controller = NavigationController(ctrl_cfg)
    peds = _init_pedestrians(config.pedestrians)
    tracks = [
        ObstacleTrack(obstacle_id=p.spec.name, radius=p.spec.radius) for p in peds
    ]

    n_steps = config.steps
    cols: dict[str, list[float]] = {c: [] for c in TRAJECTORY_COLUMNS}
    cycle_times: list[float] = []
    outcome = "TIMEOUT"
    timespan = n_steps * config.dt
    min_clearance = float("inf")

    for k in range(n_steps):
        t = k * config.dt
        step_pedestrians(peds, t, config.dt, rng, tracks)
        snapshot = WorldSnapshot(
            t=t,
            robot=state,
            target=config.target,
            tracks=tracks,
            statics=config.statics,
        )
        u, diag = controller.step(snapshot)

        cols["t"].append(t)
        cols["px"].append(state.px)
        cols["py"].append(state.py)
        cols["theta"].append(state.theta)
        cols["v"].append(u.v)
        cols["omega"].append(u.omega)
        cols["min_h"].append(diag.min_h)
        cols["feasible"].append(1.0 if diag.feasible else 0.0)
        cols["beta"].append(diag.beta if diag.beta is not None else float("nan"))
        cols["phi_x"].append(float(diag.phi[0]) if diag.phi is not None else float("nan"))
        cols["phi_y"].append(float(diag.phi[1]) if diag.phi is not None else float("nan"))
        cycle_times.append(diag.cycle_time)

        state = step_unicycle(state, u, config.dt)
        clearance = _clearance(state.position, ctrl_cfg.safety_radius, config.statics, peds)
        min_clearance = min(min_clearance, clearance)
        if clearance < 0.0:
            outcome = "COLLISION"
            timespan = (k + 1) * config.dt
            break
        if float(np.linalg.norm(config.target - state.poi)) <= ctrl_cfg.goal_tolerance:
            outcome = "SUCCESS"
            timespan = (k + 1) * config.dt
            break

    trajectory = {c: np.asarray(cols[c], dtype=np.float64) for c in TRAJECTORY_COLUMNS}
    return RunRecord(
        scenario=config.name,
        mode=ctrl_cfg.mode,
        seed=run_seed,
        outcome=outcome,
        timespan=timespan,
        steps=len(cols["t"]),
        infeasible_steps=controller.infeasible_steps,
        min_clearance=min_clearance,
        trajectory=trajectory,
        cycle_times=np.asarray(cycle_times, dtype=np.float64),
    )


def write_trajectory(record: RunRecord, path: str | Path) -> None:
    """One row per control cycle, full double precision, nan for absent."""
    buf = io.StringIO()
    buf.write(",".join(TRAJECTORY_COLUMNS) + "\n")
    n = record.steps
    for i in range(n):
        row = []
        for c in TRAJECTORY_COLUMNS:
            value = record.trajectory[c][i]
            if c == "feasible":
                row.append(str(int(value)))
            else:
                row.append(format(value, ".17g"))
        buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue())


@dataclass
class MetricsRow:
    scenario: str
    mode: str
    runs: int
    safety_count: int
    success_count: int
    collision_count: int
    timeout_count: int
    infeasible_total: int
    infeasible_mean: float
    mean_timespan: float | None
    runtime_mean_ms: float
    runtime_std_ms: float


@dataclass
class MetricsTable:
    """Aggregate of a batch: one row per (scenario, mode)."""

    rows: list[MetricsRow]

    @classmethod
    def from_records(cls, records: list[RunRecord]) -> "MetricsTable":
        groups: dict[tuple[str, str], list[RunRecord]] = {}
        for rec in records:
            groups.setdefault((rec.scenario, rec.mode), []).append(rec)
        rows = []
        for (scenario, mode), recs in sorted(groups.items()):
            successes = [r for r in recs if r.succeeded]
            cycle_ms = np.concatenate([r.cycle_times for r in recs]) * 1e3
            rows.append(
                MetricsRow(
                    scenario=scenario,
                    mode=mode,
                    runs=len(recs),
                    safety_count=sum(1 for r in recs if not r.collided),
                    success_count=len(successes),
                    collision_count=sum(1 for r in recs if r.collided),
                    timeout_count=sum(1 for r in recs if r.outcome == "TIMEOUT"),
                    infeasible_total=sum(r.infeasible_steps for r in recs),
                    infeasible_mean=float(np.mean([r.infeasible_steps for r in recs])),
                    mean_timespan=(
                        float(np.mean([r.timespan for r in successes])) if successes else None
                    ),
                    runtime_mean_ms=float(cycle_ms.mean()),
                    runtime_std_ms=float(cycle_ms.std()),
                )
            )
        return cls(rows)

    def to_text(self) -> str:
        headers = [
            "scenario",
            "mode",
            "runs",
            "safety",
            "success",
            "infeas_total",
            "mean_time_s",
            "cycle_ms",
        ]
        table = [headers]
        for r in self.rows:
            table.append(
                [
                    r.scenario,
                    r.mode,
                    str(r.runs),
                    f"{r.safety_count}/{r.runs}",
                    f"{r.success_count}/{r.runs}",
                    str(r.infeasible_total),
                    "--" if r.mean_timespan is None else f"{r.mean_timespan:.2f}",
                    f"{r.runtime_mean_ms:.1f}+-{r.runtime_std_ms:.1f}",
                ]
            )
        widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in table
        ]
        return "\n".join(lines)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "scenario",
                    "mode",
                    "runs",
                    "safety_count",
                    "success_count",
                    "collision_count",
                    "timeout_count",
                    "infeasible_total",
                    "infeasible_mean",
                    "mean_timespan",
                    "runtime_mean_ms",
                    "runtime_std_ms",
                ]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.scenario,
                        r.mode,
                        r.runs,
                        r.safety_count,
                        r.success_count,
                        r.collision_count,
                        r.timeout_count,
                        r.infeasible_total,
                        f"{r.infeasible_mean:.6g}",
                        "" if r.mean_timespan is None else f"{r.mean_timespan:.6g}",
                        f"{r.runtime_mean_ms:.6g}",
                        f"{r.runtime_std_ms:.6g}",
                    ]
                )

    def to_json(self, path: str | Path) -> None:
        payload = [
            {**vars(r)} for r in self.rows
        ]
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def run_batch(
    config: ScenarioConfig,
    modes: list[str],
    n_runs: int = 10,
) -> tuple[MetricsTable, list[RunRecord]]:
    """Sweep modes x initial orientations with per-run child seeds.

    Run k rotates the start heading by 2*pi*k/n_runs and draws its noise from
    default_rng([scenario seed, k]), so runs are independent and reproducible
    regardless of batch composition.
    """
    if not modes or n_runs < 1:
        raise ValueError("need at least one mode and one run")
    records = []
    for mode in modes:
        for k in range(n_runs):
            theta0 = float(wrap_angle(config.robot.theta + 2.0 * np.pi * k / n_runs))
            child_seed = int(np.random.SeedSequence([config.seed, k]).generate_state(1)[0])
            records.append(run_scenario(config, mode=mode, seed=child_seed, theta0=theta0))
    return MetricsTable.from_records(records), records
