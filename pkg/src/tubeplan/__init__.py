"""Two-stage planning for multi-UAV cable-suspended payload transport:
tube-aware sampling-based search plus a convex spline/tension program."""

from .env import (
    EnvironmentMap,
    Obstacle,
    Workspace,
    estimate_density,
    load_environment,
    save_environment,
    superquadric_value,
)
from .extend import ExtendContext, PotentialConfig, StepConfig, extend
from .planner import (
    InfeasibleInputError,
    PathResult,
    Planner,
    PlannerConfig,
    edge_cost,
    neighborhood_radius,
    plan,
)
from .sampler import (
    SampleDraw,
    SamplerConfig,
    SubRegion,
    build_partition,
    draw_sample,
    posterior_update,
    thompson_select,
)
from .trajopt import (
    ConicProblem,
    ConicSolution,
    OptConfig,
    PolySpline,
    TensionProfile,
    allocate_times,
    assemble,
    init_tensions,
    optimize,
    solve,
)
from .dynmodel import (
    SystemParams,
    VerificationReport,
    VerifyBounds,
    payload_moment,
    reference_moment,
    required_force,
    uav_position,
    verify,
)
from .bench import (
    BenchConfig,
    RunSettings,
    TrialRecord,
    aggregate,
    generate_env,
    penalize,
    run_bench,
    run_trial,
)

__version__ = "0.1.0"
