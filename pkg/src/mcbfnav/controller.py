"""Per-cycle safe control: nominal tracking, constraint assembly, tiny QP.

One control cycle turns a world snapshot into an input for the unicycle:
obstacle tracks become distance-field barriers (physical footprints always,
predicted reachable sets in the proactive modes), the barriers become linear
constraints on u = [v, omega], and the closest feasible input to a
goal-seeking nominal is found by exact enumeration over the two-dimensional
decision space. Modulated modes add a tangential-velocity constraint along
the planner's exit direction, which removes the stalling equilibria of the
plain safety filter.

Modes:
    CBF       per-obstacle safety rows over physical footprints
    MCBF      CBF + combined-barrier row + tangential modulation row
    MMP_CBF   CBF + reachable-set barriers (proactive, unmodulated)
    MMP_MCBF  everything
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .barrier import (
    BarrierQuery,
    CombinedQuery,
    ObstacleBarrier,
    active_set,
    augmented_barrier,
    barrier_query,
    combine_queries,
    combined_field,
)
from .geometry import Polyline, ScalarGrid, resample_closed, wrap_angle
from .gpdf import GpdfModel, KernelParams, fit_with_jitter
from .planner import (
    MapSpec,
    ModulationConfig,
    auto_param_select,
    select_phi,
    snapped_extent,
)
from .prediction import (
    ObstacleTrack,
    ProbMapStack,
    cvm_efrs,
    cvm_velocity,
    probmap_efrs,
)

MODES = ("CBF", "MCBF", "MMP_CBF", "MMP_MCBF")
MODULATED_MODES = ("MCBF", "MMP_MCBF")
MMP_MODES = ("MMP_CBF", "MMP_MCBF")


@dataclass
class RobotState:
    """Unicycle pose plus the output model used for barrier evaluation."""

    px: float
    py: float
    theta: float
    model: str = "shifted"  # "shifted" (point of interest a meters ahead) or "standard"
    a: float = 0.2

    def __post_init__(self) -> None:
        self.theta = float(wrap_angle(self.theta))
        if self.model not in ("shifted", "standard"):
            raise ValueError(f"unknown robot model {self.model!r}")
        if self.model == "shifted" and self.a <= 0.0:
            raise ValueError("shifted model needs a > 0")

    @property
    def a_eff(self) -> float:
        return self.a if self.model == "shifted" else 0.0

    @property
    def position(self) -> NDArray[np.float64]:
        return np.array([self.px, self.py])

    @property
    def pose(self) -> NDArray[np.float64]:
        return np.array([self.px, self.py, self.theta])

    @property
    def heading(self) -> NDArray[np.float64]:
        return np.array([np.cos(self.theta), np.sin(self.theta)])

    @property
    def poi(self) -> NDArray[np.float64]:
        """Controlled output point: the pose for standard, a ahead for shifted."""
        return self.position + self.a_eff * self.heading


@dataclass
class ControlInput:
    v: float
    omega: float

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.v, self.omega])


BRAKE = ControlInput(0.0, 0.0)


@dataclass
class ControllerConfig:
    """All controller knobs; field names match the configuration schema."""

    mode: str = "MMP_MCBF"
    alpha_gain: float = 1.0
    gamma: float = 0.05
    rho: float = 5.0
    b_range: float = 3.0
    w: float = 0.5
    a: float = 0.2
    N: int = 60
    m: int = 2
    w_goal: float = 1.0
    w_barrier: float = 0.5
    v_min: float = -0.2
    v_max: float = 1.0
    omega_max: float = 1.5
    goal_tolerance: float = 0.05
    beta_min: float = 0.005
    beta_max: float = 1.0
    beta_fallback: float = 0.02
    eta: float = 0.05
    cruise_speed: float = 1.0
    safety_radius: float = 0.3
    tau_max: float = 4.0
    efrs_margin: float = 0.1
    delta_kappa: float | None = None
    boundary_spacing: float = 0.05
    boundary_max_points: int = 200
    raster_resolution: float = 0.05
    raster_margin: float = 1.0
    raster_snap: float = 0.25
    refresh_divider: int = 3
    modulation_goal_radius: float = 0.5
    dt: float = 0.033

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dt <= 0.0 or self.alpha_gain <= 0.0 or self.gamma <= 0.0:
            raise ValueError("dt, alpha_gain, gamma must be positive")
        if self.v_min > self.v_max or self.omega_max <= 0.0:
            raise ValueError("invalid input box")
        if self.refresh_divider < 1:
            raise ValueError("refresh_divider must be at least 1")

    @property
    def modulated(self) -> bool:
        return self.mode in MODULATED_MODES

    @property
    def proactive(self) -> bool:
        return self.mode in MMP_MODES

    def modulation(self, beta: float) -> ModulationConfig:
        return ModulationConfig(
            m=self.m,
            N=self.N,
            beta=beta,
            gamma=self.gamma,
            w_goal=self.w_goal,
            w_barrier=self.w_barrier,
            eta=self.eta,
            beta_min=self.beta_min,
            beta_max=self.beta_max,
            beta_fallback=self.beta_fallback,
        )

    def map_spec(self) -> MapSpec:
        return MapSpec(self.raster_resolution, self.raster_margin, self.raster_snap)


def nominal_control(
    state: RobotState,
    xi_tar: NDArray,
    dt: float,
    cruise_speed: float = 1.0,
    goal_tolerance: float = 0.05,
    omega_max: float = 1.5,
) -> ControlInput:
    """Goal-seeking nominal input: cruise toward the target, turn to face it.

    The heading error over one cycle gives the nominal turn rate, clamped to
    the box; linear speed is the configured cruise (the safety filter slows
    it down when needed). Inside the goal tolerance the nominal is full stop.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    delta = np.asarray(xi_tar, dtype=np.float64).reshape(2) - state.poi
    dist = float(np.linalg.norm(delta))
    if dist < goal_tolerance:
        return ControlInput(0.0, 0.0)
    psi = float(wrap_angle(np.arctan2(delta[1], delta[0]) - state.theta))
    omega = float(np.clip(psi / dt, -omega_max, omega_max))
    return ControlInput(cruise_speed, omega)


def input_matrix(state: RobotState) -> NDArray[np.float64]:
    """Maps u = [v, omega] to [poi_x_dot, poi_y_dot, theta_dot] (a = 0: pose rates)."""
    a = state.a_eff
    c, s = np.cos(state.theta), np.sin(state.theta)
    return np.array([[c, -a * s], [s, a * c], [0.0, 1.0]])


@dataclass
class QpProblem:
    """min ||u - u_nom||^2 subject to rows @ u >= bounds."""

    u_nom: NDArray[np.float64]
    rows: NDArray[np.float64]  # (k, 2)
    bounds: NDArray[np.float64]  # (k,)
    labels: list[str]

    def __post_init__(self) -> None:
        self.u_nom = np.asarray(self.u_nom, dtype=np.float64).reshape(2)
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, 2)
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1)
        if self.rows.shape[0] != self.bounds.shape[0] or len(self.labels) != self.rows.shape[0]:
            raise ValueError("rows, bounds, labels must align")
        if not (np.all(np.isfinite(self.rows)) and np.all(np.isfinite(self.bounds))):
            raise ValueError("QP rows must be finite")


@dataclass
class QpSolution:
    u: NDArray[np.float64] | None
    feasible: bool
    active_labels: list[str]
    objective: float


def _lift_gradient(gradient: NDArray[np.float64], g_matrix: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row vector grad^T g(x); accepts position (2) or pose (3) gradients."""
    if gradient.shape[0] == 2:
        return gradient @ g_matrix[:2, :]
    return gradient @ g_matrix


def assemble_qp(
    state: RobotState,
    u_nom: ControlInput,
    barrier_ids: list[str],
    queries: list[BarrierQuery],
    phi: NDArray[np.float64] | None,
    config: ControllerConfig,
    combined: CombinedQuery | None = None,
) -> QpProblem:
    """Build the cycle's constraint rows.

    Safety rows keep each barrier's decrease bounded by the class-K term;
    modulated modes add the soft-min combined row (blocks reentrant-corner
    gaps between barriers) and the tangential row phi^T xdot >= gamma. Box
    limits close the polytope.
    """
    g_matrix = input_matrix(state)
    rows: list[NDArray[np.float64]] = []
    bounds: list[float] = []
    labels: list[str] = []

    for oid, q in zip(barrier_ids, queries):
        rows.append(_lift_gradient(q.gradient, g_matrix))
        bounds.append(-config.alpha_gain * q.value - q.dhdt_env)
        labels.append(f"safety:{oid}")

    if config.modulated and combined is not None:
        rows.append(_lift_gradient(combined.gradient, g_matrix))
        bounds.append(-config.alpha_gain * combined.value - combined.dhdt_env)
        labels.append("combined")

    if config.modulated and phi is not None:
        rows.append(_lift_gradient(np.asarray(phi, dtype=np.float64), g_matrix))
        bounds.append(config.gamma)
        labels.append("modulation")

    rows.extend(
        [
            np.array([1.0, 0.0]),
            np.array([-1.0, 0.0]),
            np.array([0.0, 1.0]),
            np.array([0.0, -1.0]),
        ]
    )
    bounds.extend([config.v_min, -config.v_max, -config.omega_max, -config.omega_max])
    labels.extend(["box:v_min", "box:v_max", "box:omega_min", "box:omega_max"])

    return QpProblem(u_nom.as_array(), np.stack(rows), np.array(bounds), labels)


FEAS_SLACK = 1e-9
ACTIVE_TOL = 1e-7


def solve_qp(qp: QpProblem) -> QpSolution:
    """Exact minimizer of ||u - u_nom||^2 over the row polytope, or INFEASIBLE.

    In two variables the minimizer is u_nom itself, the projection onto a
    single row's hyperplane, or a vertex of two rows; all candidates are
    enumerated and the feasible one closest to u_nom returned. Exhausting
    the candidates proves infeasibility: a nonempty polytope always contains
    the projection of u_nom, which is one of the enumerated points.
    """
    A = qp.rows
    b = qp.bounds
    norms = np.linalg.norm(A, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        if np.any(b[degenerate] > FEAS_SLACK):
            return QpSolution(None, False, [], float("inf"))
        keep = ~degenerate
        A, b = A[keep], b[keep]
        labels = [lb for lb, k in zip(qp.labels, keep) if k]
        norms = norms[keep]
    else:
        labels = list(qp.labels)

    def feasible(u: NDArray[np.float64]) -> bool:
        return bool(np.all(A @ u - b >= -FEAS_SLACK))

    candidates: list[NDArray[np.float64]] = [qp.u_nom]
    residuals = A @ qp.u_nom - b
    for i in range(A.shape[0]):
        if residuals[i] < 0.0:
            candidates.append(qp.u_nom + A[i] * (-residuals[i]) / (norms[i] ** 2))
    for i in range(A.shape[0]):
        for j in range(i + 1, A.shape[0]):
            det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
            if abs(det) <= 1e-12 * max(1.0, norms[i] * norms[j]):
                continue
            candidates.append(
                np.array(
                    [
                        (b[i] * A[j, 1] - b[j] * A[i, 1]) / det,
                        (A[i, 0] * b[j] - A[j, 0] * b[i]) / det,
                    ]
                )
            )

    best: NDArray[np.float64] | None = None
    best_cost = float("inf")
    for u in candidates:
        if not feasible(u):
            continue
        cost = float(np.sum((u - qp.u_nom) ** 2))
        if cost < best_cost - 1e-15:
            best, best_cost = u, cost
    if best is None:
        return QpSolution(None, False, [], float("inf"))
    active = [labels[i] for i in np.flatnonzero(np.abs(A @ best - b) <= ACTIVE_TOL)]
    return QpSolution(best, True, active, best_cost)


@dataclass
class WorldSnapshot:
    """Everything the controller sees at one instant."""

    t: float
    robot: RobotState
    target: NDArray[np.float64]
    tracks: list[ObstacleTrack] = field(default_factory=list)
    statics: list[Polyline] = field(default_factory=list)
    probmaps: list[ProbMapStack] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.target = np.asarray(self.target, dtype=np.float64).reshape(2)
        for poly in self.statics:
            if not poly.closed:
                raise ValueError("static obstacles must be closed polygons")


@dataclass
class CycleDiagnostics:
    """Per-cycle record of what the controller saw and decided."""

    feasible: bool
    active_constraints: list[str]
    h_values: dict[str, float]
    h_combined: float | None
    min_h: float
    phi: NDArray[np.float64] | None
    beta: float | None
    beta_fallback: bool
    saturated: bool
    solve_time: float
    cycle_time: float


def _fit_boundary(points: NDArray[np.float64]) -> GpdfModel:
    return fit_with_jitter(points, KernelParams())


def _circle_points(center: NDArray[np.float64], radius: float, spacing: float, cap: int) -> NDArray[np.float64]:
    n = int(np.clip(np.ceil(2.0 * np.pi * radius / spacing), 8, cap))
    ang = 2.0 * np.pi * np.arange(n) / n
    return center + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


class NavigationController:
    """Stateful cycle orchestrator: model caches, refresh schedule, incumbents.

    Static obstacle models are fit once per controller instance (the scenario
    geometry is immutable). Pedestrian footprint and reachable-set models are
    refit every refresh_divider-th cycle, emulating a slower prediction
    pipeline under a faster control loop; between refits the motion term of
    the barrier derivative covers the drift.
    """

    def __init__(self, config: ControllerConfig):
        self.config = config
        self.infeasible_steps = 0
        self.cycles = 0
        self._static_barriers: dict[int, ObstacleBarrier] = {}
        self._dynamic_barriers: list[ObstacleBarrier] = []
        self._countdown = 0
        self._dynamic_epoch = 0
        self._incumbent_phi: NDArray[np.float64] | None = None
        self._raster_token: tuple | None = None
        self._raster_grid: ScalarGrid | None = None

    def _margin(self, state: RobotState) -> float:
        """Keep the point of interest clear of both the footprint disc and the
        body behind it: the pose trails the poi by a, so the enforced level
        must cover safety_radius + a."""
        return self.config.safety_radius + state.a_eff

    def _refresh_dynamic(self, snapshot: WorldSnapshot, margin: float) -> None:
        cfg = self.config
        barriers: list[ObstacleBarrier] = []
        for track in snapshot.tracks:
            pts = _circle_points(
                track.latest, track.radius, cfg.boundary_spacing, cfg.boundary_max_points
            )
            barriers.append(
                ObstacleBarrier(
                    obstacle_id=f"ped:{track.obstacle_id}",
                    model=_fit_boundary(pts),
                    margin=margin,
                    velocity_hint=cvm_velocity(track),
                    kind="pedestrian",
                    last_refit_time=snapshot.t,
                )
            )
        if cfg.proactive:
            for track in snapshot.tracks:
                efrs = cvm_efrs(
                    track,
                    cfg.tau_max,
                    cfg.efrs_margin,
                    max_points=cfg.boundary_max_points,
                    spacing=cfg.boundary_spacing,
                )
                barriers.append(
                    ObstacleBarrier(
                        obstacle_id=f"efrs:{efrs.obstacle_id}",
                        model=_fit_boundary(efrs.boundary.points),
                        margin=margin,
                        velocity_hint=efrs.velocity,
                        kind="efrs",
                        last_refit_time=snapshot.t,
                    )
                )
            for j, stack in enumerate(snapshot.probmaps):
                for efrs in probmap_efrs(
                    stack,
                    cfg.delta_kappa,
                    obstacle_id=f"probmap{j}",
                    max_points=cfg.boundary_max_points,
                    spacing=cfg.boundary_spacing,
                ):
                    barriers.append(
                        ObstacleBarrier(
                            obstacle_id=f"efrs:{efrs.obstacle_id}",
                            model=_fit_boundary(efrs.boundary.points),
                            margin=margin,
                            velocity_hint=None,
                            kind="efrs",
                            last_refit_time=snapshot.t,
                        )
                    )
        self._dynamic_barriers = barriers
        if snapshot.tracks or snapshot.probmaps:
            self._dynamic_epoch += 1

    def _all_barriers(self, snapshot: WorldSnapshot, margin: float) -> list[ObstacleBarrier]:
        cfg = self.config
        for i, poly in enumerate(snapshot.statics):
            if i not in self._static_barriers:
                boundary = resample_closed(
                    poly, cfg.boundary_max_points, spacing=cfg.boundary_spacing
                )
                self._static_barriers[i] = ObstacleBarrier(
                    obstacle_id=f"static:{i}",
                    model=_fit_boundary(boundary.points),
                    margin=margin,
                    kind="static",
                    last_refit_time=snapshot.t,
                )
        if self._countdown == 0:
            self._refresh_dynamic(snapshot, margin)
            self._countdown = cfg.refresh_divider
        self._countdown -= 1
        return list(self._static_barriers.values()) + self._dynamic_barriers

    def _raster(self, active: list[ObstacleBarrier], poi: NDArray, target: NDArray) -> ScalarGrid:
        from .barrier import BarrierField

        spec = self.config.map_spec()
        pts = [b.model.points for b in active]
        pts.append(np.stack([poi, target]))
        origin, height, width = snapped_extent(np.vstack(pts), spec)
        token = (
            self._dynamic_epoch,
            tuple(b.obstacle_id for b in active),
            origin.tobytes(),
            (height, width),
        )
        if token != self._raster_token or self._raster_grid is None:
            fld = BarrierField(active, rho=self.config.rho, b_range=self.config.b_range)
            self._raster_grid = fld.raster(origin, spec.resolution, (height, width))
            self._raster_token = token
        return self._raster_grid

    def step(self, snapshot: WorldSnapshot) -> tuple[ControlInput, CycleDiagnostics]:
        t_start = time.perf_counter()
        cfg = self.config
        state = snapshot.robot
        margin = self._margin(state)
        barriers = self._all_barriers(snapshot, margin)
        if not cfg.proactive:
            barriers = [b for b in barriers if b.kind != "efrs"]

        poi = state.poi
        plain = [barrier_query(b, poi) for b in barriers]
        values = np.array([q.value for q in plain])
        idx = active_set(values, cfg.b_range) if barriers else np.empty(0, dtype=np.intp)
        active = [barriers[i] for i in idx]
        ids = [b.obstacle_id for b in active]

        physical = [
            q.value for b, q in zip(barriers, plain) if b.kind in ("static", "pedestrian")
        ]
        min_h = float(min(physical)) if physical else float("nan")

        if state.model == "standard":
            queries = [augmented_barrier(b, state.pose, 0.0, cfg.w) for b in active]
        else:
            queries = [plain[i] for i in idx]

        u_nom = nominal_control(
            state,
            snapshot.target,
            cfg.dt,
            cruise_speed=cfg.cruise_speed,
            goal_tolerance=cfg.goal_tolerance,
            omega_max=cfg.omega_max,
        )

        phi: NDArray[np.float64] | None = None
        combined: CombinedQuery | None = None
        beta: float | None = None
        beta_fell_back = False
        goal_dist = float(np.linalg.norm(snapshot.target - poi))
        if cfg.modulated and active and goal_dist > cfg.modulation_goal_radius:
            combined = combine_queries(queries, cfg.rho)
            grid = self._raster(active, poi, snapshot.target)
            xi = poi if state.model == "shifted" else state.position
            auto = auto_param_select(
                grid,
                cfg.N,
                xi,
                snapshot.target,
                beta_min=cfg.beta_min,
                beta_max=cfg.beta_max,
                beta_fallback=cfg.beta_fallback,
            )
            beta, beta_fell_back = auto.beta, auto.fallback

            if state.model == "shifted":
                field_fn = combined_field(active, cfg.rho)
                start = poi
            else:

                def field_fn(x: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
                    q = combine_queries(
                        [augmented_barrier(b, x, 0.0, cfg.w) for b in active], cfg.rho
                    )
                    return q.value, q.gradient

                start = state.pose
            try:
                sel = select_phi(
                    field_fn,
                    start,
                    cfg.modulation(beta),
                    snapshot.target,
                    incumbent_phi=self._incumbent_phi,
                )
                phi = sel.phi
                self._incumbent_phi = phi
            except ValueError:
                phi = None  # degenerate gradient: skip modulation this cycle
        elif cfg.modulated and active:
            combined = combine_queries(queries, cfg.rho)

        qp = assemble_qp(state, u_nom, ids, queries, phi, cfg, combined)
        t_solve = time.perf_counter()
        sol = solve_qp(qp)
        solve_time = time.perf_counter() - t_solve

        if sol.feasible:
            assert sol.u is not None
            u = ControlInput(float(sol.u[0]), float(sol.u[1]))
        else:
            u = BRAKE
            self.infeasible_steps += 1
        self.cycles += 1

        diag = CycleDiagnostics(
            feasible=sol.feasible,
            active_constraints=sol.active_labels,
            h_values={b.obstacle_id: q.value for b, q in zip(barriers, plain)},
            h_combined=combined.value if combined is not None else None,
            min_h=min_h,
            phi=phi,
            beta=beta,
            beta_fallback=beta_fell_back,
            saturated=any(q.saturated for q in plain),
            solve_time=solve_time,
            cycle_time=time.perf_counter() - t_start,
        )
        return u, diag


def control_step(
    snapshot: WorldSnapshot, config: ControllerConfig
) -> tuple[ControlInput, CycleDiagnostics]:
    """One-shot convenience wrapper; persistent loops should hold a
    NavigationController to keep its model caches warm."""
    return NavigationController(config).step(snapshot)


def config_for_mode(config: ControllerConfig, mode: str) -> ControllerConfig:
    """Copy of a config with only the mode switched (ablation helper)."""
    return replace(config, mode=mode)
