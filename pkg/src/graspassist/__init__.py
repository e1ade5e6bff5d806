"""2D shared-control grasping workbench.

A numpy library for one-shot contact-model learning on cluttered 2D
landscapes, grasp-candidate synthesis, reach-to-grasp planning, and
finite-horizon LQR operator assistance, plus a deterministic simulator,
an experiment harness, and a browser session bridge.
"""

from .controller import AssistController, AssistParams, arbitrate, solve_gains
from .density import (
    CandidateGrasp,
    ContactModel,
    DensityParams,
    GripperModel,
    QueryDensity,
    build_query_density,
    learn_contact_model,
    sample_grasps,
)
from .harness import (
    ExperimentConfig,
    OperatorPolicy,
    SyntheticOperator,
    pinch_demonstration,
    prepare_trial,
    run_experiment,
)
from .planner import (
    PlanningError,
    PlanParams,
    TrajectoryPlan,
    check_gripper_collision,
    plan_trajectory,
)
from .scene import (
    FeatureCloud,
    Landscape,
    Obstacle,
    SceneParams,
    extract_features,
    generate_scene,
)
from .se2 import Pose2, angle_diff, wrap_angle
from .sim import Session, SessionParams, TrialRecord, replay_trial

__version__ = "0.1.0"

__all__ = [
    "AssistController",
    "AssistParams",
    "CandidateGrasp",
    "ContactModel",
    "DensityParams",
    "ExperimentConfig",
    "FeatureCloud",
    "GripperModel",
    "Landscape",
    "Obstacle",
    "OperatorPolicy",
    "PlanParams",
    "PlanningError",
    "Pose2",
    "QueryDensity",
    "SceneParams",
    "Session",
    "SessionParams",
    "SyntheticOperator",
    "TrajectoryPlan",
    "TrialRecord",
    "angle_diff",
    "arbitrate",
    "build_query_density",
    "check_gripper_collision",
    "extract_features",
    "generate_scene",
    "learn_contact_model",
    "pinch_demonstration",
    "plan_trajectory",
    "prepare_trial",
    "replay_trial",
    "run_experiment",
    "sample_grasps",
    "solve_gains",
    "wrap_angle",
    "__version__",
]
