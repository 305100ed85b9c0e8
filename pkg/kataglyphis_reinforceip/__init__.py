from .analysis import AnalysisConfig, CiBand, Ensemble, bootstrap_ci, kmeans, r_squared
from .baselines import (
    closed_form_JT,
    example2_theta_star,
    invariant_dist_example1,
    invariant_dist_example2,
    landweber_iterate,
    tikhonov_solution,
)
from .config import RunConfig, build_run, load_run_config
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    InputShapeError,
    NumericError,
    RankDeficiencyError,
    ReinforceIPError,
    SchemaError,
)
from .experiments import RECIPES, ExperimentRecipe, run_recipe
from .forward_models import (
    AutoConvModel,
    ForwardModel,
    LinearModel,
    NoiseSpec,
    ObservationSet,
    exact_solution,
    generate_observations,
)
from .mdp import InitStateDist, RewardSpec, generate_trajectory, policy_performance, reward
from .policy import AffinePolicyI, AffinePolicyII, GaussianPolicy, MlpPolicy
from .reinforce import (
    InverseProblem,
    SolveReport,
    StepSchedule,
    TrainConfig,
    TrainLog,
    estimate_gradient,
    reinforce_step,
    solve,
    train,
)


__all__: list[str] = [
    "RECIPES",
    "AffinePolicyI",
    "AffinePolicyII",
    "AnalysisConfig",
    "AutoConvModel",
    "CiBand",
    "ConfigurationError",
    "DivergenceError",
    "Ensemble",
    "ExperimentRecipe",
    "ForwardModel",
    "GaussianPolicy",
    "InitStateDist",
    "InputShapeError",
    "InverseProblem",
    "LinearModel",
    "MlpPolicy",
    "NoiseSpec",
    "NumericError",
    "ObservationSet",
    "RankDeficiencyError",
    "ReinforceIPError",
    "RewardSpec",
    "RunConfig",
    "SchemaError",
    "SolveReport",
    "StepSchedule",
    "TrainConfig",
    "TrainLog",
    "bootstrap_ci",
    "build_run",
    "closed_form_JT",
    "estimate_gradient",
    "exact_solution",
    "example2_theta_star",
    "generate_observations",
    "generate_trajectory",
    "invariant_dist_example1",
    "invariant_dist_example2",
    "kmeans",
    "landweber_iterate",
    "load_run_config",
    "policy_performance",
    "r_squared",
    "reinforce_step",
    "reward",
    "run_recipe",
    "solve",
    "tikhonov_solution",
    "train",
]
