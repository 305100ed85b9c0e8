"""Scripted studies at configurable scale.

``escape``            gradient descent versus REINFORCE on the toy loss.
``autoconv-sim1..3``  auto-convolution runs with different initial laws.
``linear-example1/2`` affine policies on a linear problem, with closed-form
                      optima reported next to the trained parameters.

Every run is described by a fully resolved :class:`RunConfig`; its mapping
goes into the manifest, so a manifest is enough to repeat the run.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger

from .analysis import AnalysisConfig
from .baselines import example2_theta_star, tikhonov_solution
from .config import (
    PolicyConfig,
    ProblemConfig,
    RunConfig,
    build_run,
    from_mapping,
    to_mapping,
)
from .exceptions import ConfigurationError
from .forward_models import (
    ForwardModel,
    NoiseSpec,
    ObservationSet,
    exact_solution,
    toy_scalar_loss,
    toy_scalar_loss_derivative,
)
from .mdp import InitStateDist, RewardSpec
from .policy import DEFAULT_MIN_STD, AffinePolicyII, GaussianPolicy, softplus_inverse
from .reinforce import InverseProblem, SolveReport, StepSchedule, TrainConfig, solve, train
from .reporting import (
    make_manifest,
    write_csv,
    write_json,
    write_loss_trajectories,
    write_solve_outputs,
)


RecipeName = Literal[
    "escape",
    "autoconv-sim1",
    "autoconv-sim2",
    "autoconv-sim3",
    "linear-example1",
    "linear-example2",
]
Scale = Literal["paper", "desk"]
SCALES = ("paper", "desk")

ESCAPE_START = -1.5
LINEAR_DIM = 4


@dataclass(frozen=True)
class ExperimentRecipe:
    """Which study to run, at which scale, with which seed.

    ``overrides`` replaces fields of the recipe's :class:`TrainConfig`.
    """

    name: RecipeName
    scale: Scale = "desk"
    seed: int = 0
    overrides: dict[str, object] = field(default_factory=dict)
    output_dir: Path | None = None

    def __post_init__(self) -> None:
        """Reject unknown recipes and scales."""
        if self.name not in RECIPES:
            error_message = f"Unknown recipe {self.name!r}; available: {sorted(RECIPES)}"
            logger.error(error_message)
            raise ConfigurationError(error_message)
        if self.scale not in SCALES:
            error_message = f"Unknown scale {self.scale!r}; expected one of {SCALES}"
            raise ConfigurationError(error_message)


@dataclass(frozen=True, eq=False)
class EscapeRecord:
    """Loss trajectories of the escape comparison.

    ``gd_loss[n]`` is f(x_n) after n gradient steps; ``rl_loss[n]`` is f at
    the mean next state x_0 + mu(x_0) after n REINFORCE updates.
    """

    gd_path: np.ndarray
    gd_loss: np.ndarray
    rl_mean_path: np.ndarray
    rl_loss: np.ndarray
    local_minimizer: float

    @property
    def gd_final_loss(self) -> float:
        """Loss where gradient descent ended."""
        return float(self.gd_loss[-1])

    @property
    def rl_final_loss(self) -> float:
        """Loss at the final mean action of the trained policy."""
        return float(self.rl_loss[-1])


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Outcome of a recipe run; exactly one of ``report``/``escape`` is set."""

    recipe: ExperimentRecipe
    run_config: RunConfig
    manifest: dict[str, object]
    report: SolveReport | None = None
    escape: EscapeRecord | None = None


def apply_overrides(config: TrainConfig, overrides: dict[str, object]) -> TrainConfig:
    """Merge ``overrides`` into ``config`` through the strict schema loader."""
    if not overrides:
        return config
    return from_mapping(TrainConfig, {**to_mapping(config), **overrides}, "overrides")


def _escape_config(recipe: ExperimentRecipe) -> RunConfig:
    start_std = softplus_inverse(1.0 - DEFAULT_MIN_STD)
    return RunConfig(
        problem=ProblemConfig(kind="toy"),
        reward=RewardSpec(form="negative", alpha=0.0, regularizer="none"),
        init=InitStateDist.fixed([ESCAPE_START]),
        policy=PolicyConfig(
            family="mlp", hidden=(), ma_window=1, theta=(0.0, 0.0, 0.0, start_std)
        ),
        train=TrainConfig(
            horizon=1,
            trajectories=128,
            max_updates=3000,
            schedule=StepSchedule(c1=0.3, c2=100.0),
            log_every=100,
            eval_trajectories=1000,
        ),
        analysis=AnalysisConfig(bootstrap_resamples=1000),
        seed=recipe.seed,
    )


def gradient_descent(
    start: float, step: float, steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Plain gradient descent on the toy loss; returns (iterates, losses)."""
    path = np.empty(steps + 1)
    path[0] = start
    for index in range(steps):
        path[index + 1] = path[index] - step * toy_scalar_loss_derivative(path[index])
    losses = np.array([toy_scalar_loss(x) for x in path])
    return path, losses


def local_minimizer(lower: float = -0.9, upper: float = -0.8, tolerance: float = 1e-12) -> float:
    """Bisection root of the toy loss derivative inside (lower, upper)."""
    f_lower = toy_scalar_loss_derivative(lower)
    while upper - lower > tolerance:
        middle = 0.5 * (lower + upper)
        f_middle = toy_scalar_loss_derivative(middle)
        if (f_middle < 0.0) == (f_lower < 0.0):
            lower, f_lower = middle, f_middle
        else:
            upper = middle
    return 0.5 * (lower + upper)


def run_escape(
    recipe: ExperimentRecipe, gd_step: float = 0.01, gd_steps: int = 200
) -> ExperimentResult:
    """Compare gradient descent and REINFORCE on (x^2 - 1)^2 + 0.3 (x - 1)^2 from x0 = -1.5."""
    run_config = recipe_config(recipe)
    gd_path, gd_loss = gradient_descent(ESCAPE_START, gd_step, gd_steps)

    problem, train_config = build_run(run_config)
    start = np.array([[ESCAPE_START]])
    means: list[float] = []

    def track(_update: int, policy: GaussianPolicy) -> None:
        means.append(float(start[0, 0] + policy.mean(start)[0, 0]))

    track(-1, problem.policy)
    train(
        problem.policy,
        problem.model,
        problem.observations,
        problem.reward_spec,
        problem.init_dist,
        train_config,
        on_update=track,
    )
    rl_path = np.array(means)
    record = EscapeRecord(
        gd_path=gd_path,
        gd_loss=gd_loss,
        rl_mean_path=rl_path,
        rl_loss=np.array([toy_scalar_loss(x) for x in rl_path]),
        local_minimizer=local_minimizer(),
    )
    manifest = make_manifest(
        {
            "recipe": recipe.name,
            "scale": recipe.scale,
            "run": to_mapping(run_config),
            "gradient_descent": {"start": ESCAPE_START, "step": gd_step, "steps": gd_steps},
        },
        recipe.seed,
    )
    logger.success(
        "Escape demo: gradient descent ends at loss {:.4f}, REINFORCE at {:.4f}",
        record.gd_final_loss,
        record.rl_final_loss,
    )
    return ExperimentResult(recipe, run_config, manifest, escape=record)


def _autoconv_config(recipe: ExperimentRecipe) -> RunConfig:
    paper = recipe.scale == "paper"
    grid = 64 if paper else 16
    x_exact = exact_solution(grid)
    if recipe.name == "autoconv-sim1":
        init = InitStateDist.fixed(np.full(grid, 0.01))
    elif recipe.name == "autoconv-sim2":
        init = InitStateDist.fixed(np.zeros(grid))
    else:
        init = InitStateDist.mixture([0.75 * x_exact, -0.75 * x_exact], [0.5, 0.5])
    sim3 = recipe.name == "autoconv-sim3"
    if paper:
        schedule = StepSchedule(c1=0.001, c2=50000.0)
        policy = PolicyConfig(family="mlp", hidden=(64, 64, 64))
        threshold = 20.0 if sim3 else 4.0
    else:
        # The sum-form performance grows with D; 40 at D = 16 asks for about the
        # same relative misfit of the mean path as 4 does at D = 64 with a margin.
        schedule = StepSchedule(c1=1.0, c2=500.0)
        policy = PolicyConfig(
            family="mlp",
            hidden=(32, 32),
            min_std=0.02,
            output_gain=0.01,
            mean_bias=0.0 if sim3 else 0.1,
            initial_std=0.1,
        )
        threshold = 20.0 if sim3 else 40.0
    train_config = TrainConfig(
        horizon=10,
        trajectories=1000 if paper else 200,
        max_updates=8000 if paper else 4000,
        threshold=threshold,
        beta=0.125,
        schedule=schedule,
        max_grad_norm=None if paper else 20.0,
        log_every=100,
        performance_mode="group-means" if sim3 else "mean-path",
        eval_trajectories=10000 if paper else 2000,
    )
    return RunConfig(
        problem=ProblemConfig(kind="autoconv", grid_points=grid, nonnegative=not sim3),
        noise=NoiseSpec(kind="gaussian-relative", level=0.05, sample_count=100),
        reward=RewardSpec(
            form="reciprocal",
            alpha=0.1 if recipe.name == "autoconv-sim2" else 0.2,
            regularizer="boundary-abs",
        ),
        init=init,
        policy=policy,
        train=train_config,
        analysis=AnalysisConfig(
            bootstrap_resamples=10000 if paper else 2000,
            level=0.99,
            kmeans_k=2 if sim3 else 0,
        ),
        seed=recipe.seed,
    )


def _solve_recipe(
    recipe: ExperimentRecipe,
    extras: Callable[[InverseProblem, SolveReport, TrainConfig], dict[str, object]] | None = None,
) -> ExperimentResult:
    run_config = recipe_config(recipe)
    problem, train_config = build_run(run_config)
    report = solve(problem, train_config)
    if extras is not None:
        report = dataclasses.replace(report, extras=extras(problem, report, train_config))
    manifest = make_manifest(
        {"recipe": recipe.name, "scale": recipe.scale, "run": to_mapping(run_config)},
        recipe.seed,
    )
    return ExperimentResult(recipe, run_config, manifest, report=report)


def run_autoconv(recipe: ExperimentRecipe) -> ExperimentResult:
    """Auto-convolution simulation one, two or three."""
    if not recipe.name.startswith("autoconv-"):
        error_message = f"{recipe.name!r} is not an auto-convolution recipe"
        raise ConfigurationError(error_message)
    logger.info("Running {} at {} scale, seed {}", recipe.name, recipe.scale, recipe.seed)
    return _solve_recipe(recipe)


def well_conditioned_matrix(
    dim: int, rng: np.random.Generator, low: float = 3.0, high: float = 4.0
) -> np.ndarray:
    """Random square matrix with singular values drawn from [low, high]."""
    left, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    right, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return left @ np.diag(rng.uniform(low, high, size=dim)) @ right.T


def _linear_problem(recipe: ExperimentRecipe) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(recipe.seed)
    matrix = well_conditioned_matrix(LINEAR_DIM, rng)
    return matrix, rng.standard_normal(LINEAR_DIM)


def _linear_config(recipe: ExperimentRecipe) -> RunConfig:
    matrix, x_true = _linear_problem(recipe)
    example1 = recipe.name == "linear-example1"
    policy = (
        PolicyConfig(family="affine-1", covariance=0.01)
        if example1
        else PolicyConfig(family="affine-2", sigma=0.05)
    )
    return RunConfig(
        problem=ProblemConfig(
            kind="linear",
            matrix=tuple(tuple(row) for row in matrix.tolist()),
            x_true=tuple(x_true.tolist()),
        ),
        noise=NoiseSpec(kind="gaussian-absolute", level=0.01, sample_count=1),
        reward=RewardSpec(form="negative", alpha=0.1, regularizer="squared-norm"),
        init=InitStateDist.fixed(np.zeros(LINEAR_DIM)),
        policy=policy,
        train=TrainConfig(
            horizon=5 if example1 else 30,
            trajectories=64,
            max_updates=20000 if example1 or recipe.scale == "paper" else 5000,
            schedule=StepSchedule(c1=0.05, c2=50.0) if example1 else StepSchedule(c1=0.005, c2=50.0),
            log_every=500,
            eval_trajectories=1000,
        ),
        analysis=AnalysisConfig(bootstrap_resamples=1000),
        seed=recipe.seed,
    )


def _linear_extras(
    problem: InverseProblem, report: SolveReport, train_config: TrainConfig
) -> dict[str, object]:
    matrix = np.asarray(problem.model.describe()["matrix"], dtype=float)
    y = problem.observations.samples.mean(axis=0)
    alpha = problem.reward_spec.alpha if train_config.alpha is None else train_config.alpha
    tikhonov = tikhonov_solution(matrix, y, alpha)
    theta = np.asarray(report.policy.theta)
    extras: dict[str, object] = {
        "tikhonov_theta": tikhonov.tolist(),
        "trained_theta": theta.tolist(),
    }
    policy = report.policy
    if isinstance(policy, AffinePolicyII):
        b_matrix = np.asarray(policy.b_matrix)
        invariant_mean = np.linalg.solve(b_matrix, theta)
        extras["theta_star"] = example2_theta_star(matrix, y, alpha, b_matrix).tolist()
        extras["invariant_mean"] = invariant_mean.tolist()
        achieved = invariant_mean
    else:
        achieved = theta
        extras["stationary_theta"] = stationary_theta_example1(
            matrix, y, alpha, train_config.horizon
        ).tolist()
    extras["relative_error"] = relative_distance(achieved, tikhonov)
    return extras


def run_linear(recipe: ExperimentRecipe) -> ExperimentResult:
    """Affine-policy run on a random well-conditioned 4x4 problem."""
    logger.info("Running {} at {} scale, seed {}", recipe.name, recipe.scale, recipe.seed)
    return _solve_recipe(recipe, _linear_extras)


@dataclass(frozen=True)
class SurrogateTemplate:
    """Settings for a user-supplied surrogate of an expensive forward model.

    The reward divides the misfit by (K * M) and has no regularizer; training
    stops when the logged performance has not improved for 10 logs.
    """

    noise: NoiseSpec = field(
        default_factory=lambda: NoiseSpec(kind="shift-then-gaussian", level=0.01, shift_magnitude=1)
    )
    reward: RewardSpec = field(
        default_factory=lambda: RewardSpec(
            form="reciprocal",
            alpha=0.0,
            regularizer="none",
            residual_normalizer="mean-per-entry",
        )
    )
    policy: PolicyConfig = field(default_factory=lambda: PolicyConfig(hidden=(128, 64, 16)))
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            horizon=10,
            trajectories=1000,
            max_updates=12500,
            threshold=0.45,
            alpha=0.1,
            beta=0.01,
            schedule=StepSchedule(c1=0.001, c2=100000.0),
            patience=10,
        )
    )

    def problem(
        self,
        model: ForwardModel,
        observations: ObservationSet,
        init: InitStateDist,
        policy: GaussianPolicy,
    ) -> tuple[InverseProblem, TrainConfig]:
        """Wire a surrogate model and its data into a solvable problem."""
        return (
            InverseProblem(
                model=model,
                observations=observations,
                reward_spec=self.reward,
                init_dist=init,
                policy=policy,
            ),
            self.train,
        )


def chromatography_template() -> SurrogateTemplate:
    """Hyper-parameters for plugging in a chromatography surrogate model."""
    return SurrogateTemplate()


@dataclass(frozen=True)
class RecipeInfo:
    """Registry entry."""

    description: str
    runner: Callable[[ExperimentRecipe], ExperimentResult]


RECIPES: dict[str, RecipeInfo] = {
    "escape": RecipeInfo("gradient descent vs REINFORCE on the toy loss", run_escape),
    "autoconv-sim1": RecipeInfo("auto-convolution, x0 = 0.01", run_autoconv),
    "autoconv-sim2": RecipeInfo("auto-convolution, x0 = 0, alpha = 0.1", run_autoconv),
    "autoconv-sim3": RecipeInfo("auto-convolution, x0 = +-3/4 x_e, two groups", run_autoconv),
    "linear-example1": RecipeInfo("affine policy N(theta - x, Sigma), Tikhonov oracle", run_linear),
    "linear-example2": RecipeInfo("affine policy N(theta - Bx, sigma^2 I), optimum oracle", run_linear),
}


def run_recipe(recipe: ExperimentRecipe) -> ExperimentResult:
    """Dispatch a recipe to its runner."""
    return RECIPES[recipe.name].runner(recipe)


def recipe_config(recipe: ExperimentRecipe) -> RunConfig:
    """Resolved configuration a recipe would run with (without running it)."""
    if recipe.name == "escape":
        config = _escape_config(recipe)
    elif recipe.name.startswith("autoconv-"):
        config = _autoconv_config(recipe)
    else:
        config = _linear_config(recipe)
    return dataclasses.replace(config, train=apply_overrides(config.train, recipe.overrides))


def output_directory(recipe: ExperimentRecipe, now: datetime | None = None) -> Path:
    """Timestamped ``<base>/<name>-<scale>-seed<seed>-<UTC time>`` directory of a run."""
    stamp = (now or datetime.now(timezone.utc)).strftime("%Y%m%dT%H%M%SZ")
    base = recipe.output_dir or Path("runs")
    return base / f"{recipe.name}-{recipe.scale}-seed{recipe.seed}-{stamp}"


def write_result(
    result: ExperimentResult, directory: Path, *, include_ensemble: bool = False
) -> dict[str, Path]:
    """Write every file of a recipe run into ``directory``."""
    if result.escape is not None:
        record = result.escape
        paths = {
            "manifest": write_json(directory / "manifest.json", result.manifest),
            "loss": write_loss_trajectories(
                directory / "loss_trajectories.csv",
                record.gd_loss,
                record.rl_loss,
                result.manifest,
            ),
            "paths": write_csv(
                directory / "escape_paths.csv",
                result.manifest,
                ("step", "gd_x", "rl_mean_x"),
                [
                    (
                        step,
                        float(record.gd_path[step]) if step < record.gd_path.shape[0] else None,
                        float(record.rl_mean_path[step])
                        if step < record.rl_mean_path.shape[0]
                        else None,
                    )
                    for step in range(max(record.gd_path.shape[0], record.rl_mean_path.shape[0]))
                ],
            ),
        }
        logger.info("Results written to {}", directory)
        return paths
    if result.report is None:
        error_message = f"Recipe {result.recipe.name!r} produced no result"
        raise ConfigurationError(error_message)
    return write_solve_outputs(
        directory, result.report, result.manifest, include_ensemble=include_ensemble
    )


def stationary_theta_example1(
    matrix: np.ndarray, y: np.ndarray, alpha: float, horizon: int
) -> np.ndarray:
    """Maximizer of J_T for the first linear example: Tikhonov with alpha (T - 1) / T."""
    return tikhonov_solution(matrix, y, alpha * (horizon - 1) / horizon)


def relative_distance(estimate: np.ndarray, target: np.ndarray) -> float:
    """||estimate - target|| / ||target||."""
    norm = float(np.linalg.norm(target))
    if norm == 0.0 or math.isnan(norm):
        error_message = "Relative distance to a zero target is undefined"
        raise ConfigurationError(error_message)
    return float(np.linalg.norm(np.asarray(estimate) - target)) / norm
