"""Built-in benchmark scenarios.

Three setups cover the controller's failure-mode spectrum: an empty field
(sanity), a concave pocket that traps a plain safety filter (modulation
ablation), and a crowd of converging pedestrians (proactivity ablation).
Geometry and pedestrian parameters are authored for these behaviors, not
measured from any particular building.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .controller import ControllerConfig, RobotState
from .geometry import Polyline
from .sim_harness import PedestrianSpec, ScenarioConfig


def open_field(seed: int = 0) -> ScenarioConfig:
    """No obstacles; the nominal controller should just drive to the goal."""
    return ScenarioConfig(
        name="open_field",
        seed=seed,
        dt=0.033,
        duration=12.0,
        robot=RobotState(-2.0, 0.0, 0.0),
        target=np.array([2.0, 0.0]),
        controller=ControllerConfig(mode="CBF"),
    )


def u_trap(seed: int = 0) -> ScenarioConfig:
    """A C-shaped wall opening toward the robot, goal on the far side.

    The pocket interior is a local minimum of the plain safety filter: the
    goal direction points into the back wall, so the unmodulated controller
    stalls there. Modulated modes slide along the isoline and exit. gamma is
    raised above the default so the tangential creep is fast enough to clear
    the pocket within the run duration.
    """
    wall = Polyline(
        np.array(
            [
                [-1.0, -1.3],
                [1.3, -1.3],
                [1.3, 1.3],
                [-1.0, 1.3],
                [-1.0, 1.0],
                [1.0, 1.0],
                [1.0, -1.0],
                [-1.0, -1.0],
            ]
        ),
        closed=True,
    )
    return ScenarioConfig(
        name="u_trap",
        seed=seed,
        dt=0.04,
        duration=32.0,
        robot=RobotState(-3.0, 0.0, 0.0),
        target=np.array([3.0, 0.0]),
        statics=[wall],
        static_names=["c_wall"],
        controller=ControllerConfig(mode="MCBF", gamma=0.2),
    )


def crowd(seed: int = 0) -> ScenarioConfig:
    """A blocked corridor with three pedestrians converging on the passage.

    A walled corridor has one pedestrian parked on the robot's goal line and
    a single open slot north of it. Two more walkers come down that slot
    head-on, one after the other, timed so their swept regions occupy the
    slot exactly when a reactive controller reaches it. The plain safety
    filter stalls at the parked blocker (its goal direction points straight
    into the obstacle, a textbook local minimum). The modulated filter
    escapes the minimum but enters the slot on sight, meeting the walkers at
    close range where braking is the only feasible answer; walkers do not
    yield, so a braked robot in their path gets run into. With motion
    prediction the slot reads as occupied before entry: the robot holds
    short of it, lets both walkers pass, then threads through.

    The asymmetric south wall seals the gap below the blocker so the slot is
    the only route, and omega_max is raised so the turn-in-place authority
    is enough to stay feasible while holding between wall and walkers.
    """
    def wall(x0: float, y0: float, y1: float) -> Polyline:
        return Polyline(
            np.array([[x0, y0], [5.2, y0], [5.2, y1], [x0, y1]]), closed=True
        )

    peds = [
        # Drifts 0.15 m and parks on the goal line before the robot arrives.
        PedestrianSpec(
            name="blocker",
            waypoints=np.array([[-1.3, -0.15], [-1.3, 0.0]]),
            speed=0.1,
            noise=0.01,
        ),
        PedestrianSpec(
            name="oncoming_a",
            waypoints=np.array([[3.9, 1.3], [-6.0, 1.3]]),
            speed=0.8,
            noise=0.01,
        ),
        PedestrianSpec(
            name="oncoming_b",
            waypoints=np.array([[7.5, 1.3], [-6.0, 1.3]]),
            speed=1.0,
            noise=0.01,
        ),
    ]
    return ScenarioConfig(
        name="crowd",
        seed=seed,
        dt=0.033,
        duration=24.0,
        robot=RobotState(-4.0, 0.0, 0.0),
        target=np.array([4.0, 0.0]),
        statics=[wall(-3.4, 2.2, 2.6), wall(-3.4, -1.25, -0.85)],
        static_names=["wall_north", "wall_south"],
        pedestrians=peds,
        controller=ControllerConfig(
            mode="MMP_MCBF",
            gamma=0.3,
            tau_max=1.5,
            alpha_gain=2.0,
            omega_max=3.2,
            b_range=1.5,
        ),
    )


BUILTIN_SCENARIOS = {
    "open_field": open_field,
    "u_trap": u_trap,
    "crowd": crowd,
}


def load_scenario(ref: str, seed: int | None = None) -> ScenarioConfig:
    """Resolve a scenario reference: builtin name or YAML path."""
    if ref in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[ref](seed=seed if seed is not None else 0)
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(
            f"{ref!r} is neither a builtin scenario {sorted(BUILTIN_SCENARIOS)} nor a file"
        )
    config = ScenarioConfig.from_yaml(path)
    if seed is not None:
        config.seed = seed
    return config


def write_example_yamls(directory: str | Path) -> list[Path]:
    """Materialize the builtin scenarios as editable YAML files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, builder in BUILTIN_SCENARIOS.items():
        path = directory / f"{name}.yaml"
        builder().to_yaml(path)
        out.append(path)
    return out
