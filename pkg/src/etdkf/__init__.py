"""Event-triggered distributed Kalman filtering on sensor networks.

The package splits a centralized steady-state Kalman filter across a sensor
network without losing optimality: each node runs a scalar-output local
filter plus a synchronized consensus stage, and only broadcasts to its
neighbors when its reconstruction error crosses a trigger threshold.  A
companion designer trades estimation quality against broadcast size through
a rank budget on the filter gain.
"""

from .errors import (
    ConfigError,
    ConfigParse,
    ControllabilityLost,
    DecompositionError,
    DegenerateSpectrum,
    DimensionMismatch,
    DisconnectedSensorGraph,
    Divergence,
    EstimationError,
    EtdkfError,
    InfeasibleRank,
    InvalidTrigger,
    LowRankError,
    MahlerBoundViolated,
    MareDiverged,
    ModelError,
    NegativeWeight,
    NoConvergence,
    NoSolution,
    NotObservable,
    NotPositiveDefinite,
    NotSymmetric,
    PlacementFailed,
    SyncDesignError,
    SyncSpectrumUnstable,
    UnstableClosedLoop,
    VirtualNotDetectable,
    ZeroGain,
    ZetaInfeasible,
)
from .model import (
    LaplacianSpectrum,
    LtiSystem,
    SensorNetwork,
    build_laplacian,
    default_heat_sensors,
    heat_grid_system,
    observability_margin,
    spectral_split,
)
from .kalman import (
    KalmanSolution,
    luenberger_error_cov,
    run_centralized,
    solve_steady_gain,
)
from .decomp import (
    Decomposition,
    assemble_operator,
    build_decomposition,
    build_lambda,
    design_beta_s,
    eigenratio_bound,
    local_filter_step,
    mahler_measure,
    matrix_from_json,
    matrix_to_json,
    rank_factorize,
    recover_estimate,
    solve_constrained_sylvester,
    solve_filter_weights,
    solve_mare_gamma,
    unstable_eigenvalues,
)
from .triggers import (
    VARIANTS,
    TriggerSpec,
    TriggerState,
    compute_qhat,
    decide,
    threshold,
)
from .engine import (
    HAS_NUMBA,
    RunOperators,
    build_run_operators,
    default_backend,
    draw_noise,
    run_deviation,
)
from .simnet import (
    AggregateMetrics,
    NodeRuntime,
    Scenario,
    SimTrace,
    monte_carlo,
    node_step,
    simulate_run,
)
from .lowrank import (
    LowRankDesign,
    RelaxationResult,
    design_gain,
    performance_table,
    project_capped_simplex,
    relaxation_objective_grad,
    round_and_recover,
    solve_relaxation,
)
from .scenarios import (
    example1,
    heat_benchmark,
    load_scenario,
    scenario_from_dict,
    trigger_from_dict,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateMetrics",
    "ConfigError",
    "ConfigParse",
    "ControllabilityLost",
    "Decomposition",
    "DecompositionError",
    "DegenerateSpectrum",
    "DimensionMismatch",
    "DisconnectedSensorGraph",
    "Divergence",
    "EstimationError",
    "EtdkfError",
    "HAS_NUMBA",
    "InfeasibleRank",
    "InvalidTrigger",
    "KalmanSolution",
    "LaplacianSpectrum",
    "LowRankDesign",
    "LowRankError",
    "LtiSystem",
    "MahlerBoundViolated",
    "MareDiverged",
    "ModelError",
    "NegativeWeight",
    "NoConvergence",
    "NodeRuntime",
    "NoSolution",
    "NotObservable",
    "NotPositiveDefinite",
    "NotSymmetric",
    "PlacementFailed",
    "RelaxationResult",
    "RunOperators",
    "Scenario",
    "SensorNetwork",
    "SimTrace",
    "SyncDesignError",
    "SyncSpectrumUnstable",
    "TriggerSpec",
    "TriggerState",
    "UnstableClosedLoop",
    "VARIANTS",
    "VirtualNotDetectable",
    "ZeroGain",
    "ZetaInfeasible",
    "assemble_operator",
    "build_decomposition",
    "build_lambda",
    "build_laplacian",
    "build_run_operators",
    "compute_qhat",
    "decide",
    "default_backend",
    "default_heat_sensors",
    "design_beta_s",
    "design_gain",
    "draw_noise",
    "eigenratio_bound",
    "example1",
    "heat_benchmark",
    "heat_grid_system",
    "load_scenario",
    "local_filter_step",
    "luenberger_error_cov",
    "mahler_measure",
    "matrix_from_json",
    "matrix_to_json",
    "monte_carlo",
    "node_step",
    "observability_margin",
    "performance_table",
    "project_capped_simplex",
    "rank_factorize",
    "recover_estimate",
    "relaxation_objective_grad",
    "round_and_recover",
    "run_centralized",
    "run_deviation",
    "scenario_from_dict",
    "simulate_run",
    "solve_constrained_sylvester",
    "solve_filter_weights",
    "solve_mare_gamma",
    "solve_relaxation",
    "solve_steady_gain",
    "spectral_split",
    "threshold",
    "trigger_from_dict",
    "unstable_eigenvalues",
    "__version__",
]
