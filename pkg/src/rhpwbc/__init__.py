"""Hierarchical task-priority control with smooth priority transitions."""

from .task_model import (
    Constraint,
    DimensionError,
    LevelStack,
    PriorityMatrix,
    PriorityViolation,
    Task,
    TaskLibrary,
    select_level_tasks,
    sort_descending,
    validate_priority_matrix,
)
from .projection import (
    LevelProjection,
    OccupationMatrix,
    ProjectionRankError,
    ProjectionState,
    RowBasis,
    compute_rhp,
    null_space_projector,
    occupation_matrix,
    orthonormal_basis,
    rhp_update,
    row_full_rank,
)
from .qp import QPError, QPProblem, QPResult, SolverConfig, kkt_residuals, solve_qp
from .hqp import (
    HierarchyError,
    HierarchySolution,
    LevelProblem,
    LevelSolution,
    accumulate,
    build_level_qp,
    shifted_target,
    solve_hierarchy,
)
from .baseline import solve_strict_hierarchy
from .transition import (
    BlendPolicy,
    CandidateSet,
    ScheduleState,
    UnknownEventError,
    blend,
    initial_state,
    proportion_from_distance,
    step_schedule,
)
from .robot import (
    Joint,
    JointLimits,
    KinematicChain,
    Obstacle,
    RobotState,
    Targets,
    TaskBinding,
    default_chain,
    extension_ratio,
    forward_kinematics,
    make_tasks,
    min_distance,
    orientation_jacobian,
    point_jacobian,
    rotation_about_axis,
    rotation_log,
    step,
)

__version__ = "0.1.0"
