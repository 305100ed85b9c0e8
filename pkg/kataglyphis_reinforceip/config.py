"""Run configuration: typed dataclasses plus a strict JSON loader.

A run file is a JSON object with the sections ``problem``, ``noise``,
``reward``, ``init``, ``policy``, ``train``, ``analysis``, ``output`` and a
top-level ``seed``. Every section is optional and falls back to the
dataclass defaults; unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, TypeVar

import numpy as np
from loguru import logger

from .analysis import AnalysisConfig
from .baselines import omega_upper_bound
from .exceptions import ConfigurationError, SchemaError
from .forward_models import (
    AutoConvModel,
    ForwardModel,
    LinearModel,
    NoiseSpec,
    ObservationSet,
    ToyLossModel,
    exact_solution,
    generate_observations,
)
from .mdp import InitStateDist, RewardSpec
from .policy import (
    DEFAULT_MA_WINDOW,
    DEFAULT_MIN_STD,
    AffinePolicyI,
    AffinePolicyII,
    GaussianPolicy,
    MlpPolicy,
)
from .reinforce import InverseProblem, TrainConfig


ProblemKind = Literal["autoconv", "linear", "toy"]
PolicyFamily = Literal["mlp", "affine-1", "affine-2"]
ConfigT = TypeVar("ConfigT")

DEFAULT_INIT_VALUE = 0.01


@dataclass(frozen=True)
class ProblemConfig:
    """Forward model and data.

    ``x_true`` defaults to the exact auto-convolution solution; explicit
    ``observations`` replace generated ones.
    """

    kind: ProblemKind = "autoconv"
    grid_points: int = 16
    matrix: tuple[tuple[float, ...], ...] | None = None
    x_true: tuple[float, ...] | None = None
    observations: tuple[tuple[float, ...], ...] | None = None
    nonnegative: bool = False

    def __post_init__(self) -> None:
        """Check that a linear problem has its matrix."""
        if self.kind == "linear" and self.matrix is None:
            error_message = "A linear problem needs a matrix"
            raise ConfigurationError(error_message)
        if self.kind == "linear" and self.x_true is None and self.observations is None:
            error_message = "A linear problem needs x_true or observations"
            raise ConfigurationError(error_message)


@dataclass(frozen=True)
class PolicyConfig:
    """Policy family and its architecture.

    affine-1 uses Sigma = covariance * I; affine-2 uses std ``sigma`` and
    B = omega (A^T A + epsilon I) with omega defaulting to half its bound.
    ``output_gain``, ``mean_bias`` and ``initial_std`` shape the random
    initialization of an mlp policy.
    """

    family: PolicyFamily = "mlp"
    hidden: tuple[int, ...] = (64, 64, 64)
    min_std: float = DEFAULT_MIN_STD
    ma_window: int = DEFAULT_MA_WINDOW
    output_gain: float = 1.0
    mean_bias: float = 0.0
    initial_std: float | None = None
    covariance: float = 0.01
    sigma: float = 0.1
    omega: float | None = None
    epsilon: float = 0.0
    theta: tuple[float, ...] | None = None


@dataclass(frozen=True)
class OutputConfig:
    """Where results go."""

    directory: str = "runs"
    write_ensemble: bool = False


@dataclass(frozen=True)
class RunConfig:
    """A complete, reproducible run description.

    Without an ``init`` section every run starts from the point 0.01 in each
    coordinate of the model input.
    """

    problem: ProblemConfig = field(default_factory=ProblemConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    reward: RewardSpec = field(default_factory=RewardSpec)
    init: InitStateDist | None = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0


def _fail(message: str, path: str) -> SchemaError:
    logger.error("{} (at {})", message, path or "<root>")
    return SchemaError(message, path)


def _is_number(value: object) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


def _convert(value: object, annotation: Any, path: str) -> object:  # noqa: ANN401, PLR0911
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [arg for arg in args if arg is not type(None)]
        return _convert(value, inner[0], path)
    if origin is Literal:
        if value not in args:
            message = f"{path} must be one of {list(args)}, got {value!r}"
            raise _fail(message, path)
        return value
    if origin is tuple:
        if not isinstance(value, list):
            message = f"{path} must be a list, got {type(value).__name__}"
            raise _fail(message, path)
        return tuple(
            _convert(item, args[0], f"{path}[{index}]") for index, item in enumerate(value)
        )
    if dataclasses.is_dataclass(annotation):
        return from_mapping(annotation, value, path)
    if annotation is bool:
        if not isinstance(value, bool):
            message = f"{path} must be a boolean, got {value!r}"
            raise _fail(message, path)
        return value
    if annotation is int:
        if not isinstance(value, int) or isinstance(value, bool):
            message = f"{path} must be an integer, got {value!r}"
            raise _fail(message, path)
        return value
    if annotation is float:
        if not _is_number(value):
            message = f"{path} must be a number, got {value!r}"
            raise _fail(message, path)
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            message = f"{path} must be a string, got {value!r}"
            raise _fail(message, path)
        return value
    message = f"Unsupported field type {annotation!r} at {path}"
    raise _fail(message, path)


def from_mapping(cls: type[ConfigT], data: object, path: str = "") -> ConfigT:
    """Build dataclass ``cls`` from a JSON mapping, rejecting unknown keys.

    Raises:
        SchemaError: wrong type, unknown key, or a violated field invariant.
    """
    if not isinstance(data, dict):
        message = f"{path or 'config'} must be an object, got {type(data).__name__}"
        raise _fail(message, path)
    hints = typing.get_type_hints(cls)
    names = {item.name for item in dataclasses.fields(cls) if item.init}
    kwargs = {}
    for key, value in data.items():
        child = f"{path}.{key}" if path else key
        if key not in names:
            message = f"Unknown key {child!r}"
            raise _fail(message, child)
        kwargs[key] = _convert(value, hints[key], child)
    try:
        return cls(**kwargs)
    except ConfigurationError as error:
        if isinstance(error, SchemaError):
            raise
        raise _fail(f"{path or 'config'}: {error}", path) from error


def _plain(value: object) -> object:
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {item.name: _plain(getattr(value, item.name)) for item in dataclasses.fields(value) if item.init}
    if isinstance(value, tuple | list):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def to_mapping(config: object) -> dict[str, object]:
    """JSON-ready mapping of a config dataclass; inverse of :func:`from_mapping`."""
    plain = _plain(config)
    if not isinstance(plain, dict):
        error_message = "Only dataclass instances can be converted to a mapping"
        raise ConfigurationError(error_message)
    return plain


def load_run_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises:
        SchemaError: invalid JSON or schema violation.
        OSError: the file cannot be read.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        message = f"{path} is not valid JSON: {error}"
        raise _fail(message, "") from error
    config = from_mapping(RunConfig, data)
    logger.debug("Loaded run configuration from {}", path)
    return config


def derive_seeds(seed: int) -> tuple[int, int, int]:
    """Independent seeds for (observation noise, policy initialization, training)."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def build_model(problem: ProblemConfig) -> ForwardModel:
    """Instantiate the forward model of a problem section."""
    if problem.kind == "linear":
        return LinearModel(np.asarray(problem.matrix, dtype=float))
    if problem.kind == "toy":
        return ToyLossModel()
    return AutoConvModel(problem.grid_points)


def reference_solution(problem: ProblemConfig) -> np.ndarray | None:
    """The true solution if the problem knows one."""
    if problem.x_true is not None:
        return np.asarray(problem.x_true, dtype=float)
    if problem.kind == "autoconv":
        return exact_solution(problem.grid_points)
    if problem.kind == "toy":
        return np.ones(1)
    return None


def build_observations(
    problem: ProblemConfig, model: ForwardModel, noise: NoiseSpec, seed: int
) -> ObservationSet:
    """Explicit observations, the zero target of the toy loss, or generated data."""
    if problem.observations is not None:
        return ObservationSet(np.asarray(problem.observations, dtype=float))
    if problem.kind == "toy":
        return ObservationSet(np.zeros((1, model.output_dim)))
    reference = reference_solution(problem)
    if reference is None:
        error_message = "Cannot generate observations without x_true"
        raise ConfigurationError(error_message)
    return generate_observations(model, reference, noise, seed)


def build_policy(
    config: PolicyConfig, model: ForwardModel, seed: int
) -> GaussianPolicy:
    """Initial policy described by a policy section."""
    dim = model.input_dim
    theta = None if config.theta is None else np.asarray(config.theta, dtype=float)
    if config.family == "mlp":
        sizes = [dim, *config.hidden, 2 * dim]
        if theta is None:
            return MlpPolicy.initialize(
                sizes,
                seed,
                config.min_std,
                config.ma_window,
                output_gain=config.output_gain,
                mean_bias=config.mean_bias,
                initial_std=config.initial_std,
            )
        return MlpPolicy(sizes, theta, config.min_std, config.ma_window)
    start = np.zeros(dim) if theta is None else theta
    if config.family == "affine-1":
        return AffinePolicyI(start, config.covariance * np.eye(dim))
    if not isinstance(model, LinearModel):
        error_message = "The affine-2 policy needs a linear problem"
        raise ConfigurationError(error_message)
    omega = config.omega
    if omega is None:
        omega = 0.5 * omega_upper_bound(model.matrix, config.epsilon)
    return AffinePolicyII.from_problem(model.matrix, omega, config.epsilon, start, config.sigma)


def build_init(init: InitStateDist | None, model: ForwardModel) -> InitStateDist:
    """The configured initial law, or 0.01 everywhere; its dimension must match the model.

    Raises:
        ConfigurationError: the initial law lives in another dimension.
    """
    if init is None:
        return InitStateDist.fixed(np.full(model.input_dim, DEFAULT_INIT_VALUE))
    if init.dim != model.input_dim:
        error_message = (
            f"init has dimension {init.dim} but the model input has dimension {model.input_dim}"
        )
        logger.error(error_message)
        raise ConfigurationError(error_message)
    return init


def build_run(config: RunConfig) -> tuple[InverseProblem, TrainConfig]:
    """Resolve a run configuration into a problem and its training settings.

    The train seed is replaced by one derived from the run seed so a single
    integer controls the whole run.
    """
    noise_seed, policy_seed, train_seed = derive_seeds(config.seed)
    model = build_model(config.problem)
    observations = build_observations(config.problem, model, config.noise, noise_seed)
    problem = InverseProblem(
        model=model,
        observations=observations,
        reward_spec=config.reward,
        init_dist=build_init(config.init, model),
        policy=build_policy(config.policy, model, policy_seed),
        reference=reference_solution(config.problem),
        nonnegative=config.problem.nonnegative,
        analysis=config.analysis,
    )
    return problem, dataclasses.replace(config.train, seed=train_seed)
