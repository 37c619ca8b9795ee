"""Proactive safe navigation: learned distance fields, reachable-set
prediction, and modulated barrier-constrained control with a deterministic
scenario harness."""

from .barrier import (
    BarrierField,
    BarrierQuery,
    CombinedQuery,
    ObstacleBarrier,
    active_set,
    augmented_barrier,
    barrier_query,
    combine,
    combine_gradient,
    combine_queries,
)
from .controller import (
    MODES,
    ControlInput,
    ControllerConfig,
    CycleDiagnostics,
    NavigationController,
    QpProblem,
    QpSolution,
    RobotState,
    WorldSnapshot,
    assemble_qp,
    control_step,
    input_matrix,
    nominal_control,
    solve_qp,
)
from .geometry import Polyline, ScalarGrid, extract_level_contours, wrap_angle
from .gpdf import GpdfFitError, GpdfModel, KernelParams, fit, fit_with_jitter, query_many
from .planner import (
    AutoParamResult,
    GeodesicWalk,
    MapSpec,
    ModulationConfig,
    PhiSelection,
    auto_param_select,
    geodesic_walk,
    sample_candidates,
    select_phi,
    tangent_hyperplane,
)
from .prediction import (
    Efrs,
    ObstacleTrack,
    ProbMapFormatError,
    ProbMapStack,
    cvm_efrs,
    cvm_velocity,
    load_probmap_stack,
    probmap_efrs,
    save_probmap_stack,
)
from .scenarios import BUILTIN_SCENARIOS, crowd, load_scenario, open_field, u_trap
from .sim_harness import (
    MetricsTable,
    PedestrianSpec,
    RunRecord,
    ScenarioConfig,
    run_batch,
    run_scenario,
    step_unicycle,
    write_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AutoParamResult",
    "BUILTIN_SCENARIOS",
    "BarrierField",
    "BarrierQuery",
    "CombinedQuery",
    "ControlInput",
    "ControllerConfig",
    "CycleDiagnostics",
    "Efrs",
    "GeodesicWalk",
    "GpdfFitError",
    "GpdfModel",
    "KernelParams",
    "MODES",
    "MapSpec",
    "MetricsTable",
    "ModulationConfig",
    "NavigationController",
    "ObstacleBarrier",
    "ObstacleTrack",
    "PedestrianSpec",
    "PhiSelection",
    "Polyline",
    "ProbMapFormatError",
    "ProbMapStack",
    "QpProblem",
    "QpSolution",
    "RobotState",
    "RunRecord",
    "ScalarGrid",
    "ScenarioConfig",
    "WorldSnapshot",
    "active_set",
    "assemble_qp",
    "augmented_barrier",
    "auto_param_select",
    "barrier_query",
    "combine",
    "combine_gradient",
    "combine_queries",
    "control_step",
    "crowd",
    "cvm_efrs",
    "cvm_velocity",
    "extract_level_contours",
    "fit",
    "fit_with_jitter",
    "geodesic_walk",
    "input_matrix",
    "load_probmap_stack",
    "load_scenario",
    "nominal_control",
    "open_field",
    "probmap_efrs",
    "query_many",
    "run_batch",
    "run_scenario",
    "sample_candidates",
    "save_probmap_stack",
    "select_phi",
    "solve_qp",
    "step_unicycle",
    "tangent_hyperplane",
    "u_trap",
    "wrap_angle",
    "write_trajectory",
]
