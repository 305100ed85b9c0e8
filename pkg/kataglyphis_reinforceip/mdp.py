"""The Markov decision process behind the solver.

States are iterates x_t, actions are increments a_t and the transition is
x_{t+1} = x_t + a_t. Rewards measure the data misfit of the next iterate
plus a regularization term evaluated at the current one.
"""

from __future__ import annotations

from collections.abc import Sequence
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from loguru import logger

from .analysis import Ensemble, kmeans
from .exceptions import ConfigurationError, InputShapeError

if TYPE_CHECKING:
    from .forward_models import ForwardModel, ObservationSet
    from .policy import GaussianPolicy


RewardForm = Literal["reciprocal", "negative"]
RegularizerKind = Literal["none", "squared-norm", "boundary-abs"]
ResidualNormalizer = Literal["sum", "mean-per-entry"]
InitKind = Literal["fixed-point", "gaussian", "finite-mixture"]
PerformanceMode = Literal["mean-path", "group-means"]

REWARD_FORMS = ("reciprocal", "negative")
REGULARIZERS = ("none", "squared-norm", "boundary-abs")
RESIDUAL_NORMALIZERS = ("sum", "mean-per-entry")
INIT_KINDS = ("fixed-point", "gaussian", "finite-mixture")
PERFORMANCE_MODES = ("mean-path", "group-means")

# substream tags of SeedSequence spawn keys
TRAINING_STREAM = 0
PERFORMANCE_STREAM = 1
EVALUATION_STREAM = 2


@dataclass(frozen=True)
class RewardSpec:
    """Shape of the reward R(x, a).

    reciprocal: 1 / (residual + floor + alpha * Omega(x));
    negative:   -(residual + alpha * Omega(x)).
    The residual averages the squared misfit of f(x + a) over the K
    observations; ``mean-per-entry`` additionally divides by M.
    """

    form: RewardForm = "reciprocal"
    alpha: float = 0.0
    regularizer: RegularizerKind = "none"
    floor: float = 0.001
    residual_normalizer: ResidualNormalizer = "sum"

    def __post_init__(self) -> None:
        """Validate the reward options."""
        if self.form not in REWARD_FORMS:
            error_message = f"Unknown reward form {self.form!r}; expected one of {REWARD_FORMS}"
            raise ConfigurationError(error_message)
        if self.regularizer not in REGULARIZERS:
            error_message = f"Unknown regularizer {self.regularizer!r}; expected one of {REGULARIZERS}"
            raise ConfigurationError(error_message)
        if self.residual_normalizer not in RESIDUAL_NORMALIZERS:
            error_message = f"Unknown residual normalizer {self.residual_normalizer!r}"
            raise ConfigurationError(error_message)
        if not self.alpha >= 0.0:
            error_message = f"alpha must be >= 0, got {self.alpha}"
            raise ConfigurationError(error_message)
        if self.form == "reciprocal" and not self.floor > 0.0:
            error_message = f"The reciprocal reward needs floor > 0, got {self.floor}"
            raise ConfigurationError(error_message)


def regularizer_batch(kind: RegularizerKind, xs: np.ndarray) -> np.ndarray:
    """Omega for every row of ``xs``."""
    if kind == "boundary-abs":
        return np.abs(xs[:, 0]) + np.abs(xs[:, -1])
    if kind == "squared-norm":
        return (xs * xs).sum(axis=1)
    return np.zeros(xs.shape[0])


def regularizer_value(kind: RegularizerKind, x: np.ndarray) -> float:
    """Omega(x): |x_0| + |x_{D-1}|, ||x||^2 or 0."""
    vector = np.asarray(x, dtype=float)
    return float(regularizer_batch(kind, vector[np.newaxis, :])[0])


class RewardEnv:
    """Reward function bound to a forward model and an observation set.

    The mean over K of ||f - y_k||^2 is evaluated as
    ||f - y_bar||^2 + mean_k ||y_k - y_bar||^2, so the cost does not grow with K.
    """

    def __init__(
        self, spec: RewardSpec, model: ForwardModel, observations: ObservationSet
    ) -> None:
        """Bind the reward to its data."""
        if observations.dim != model.output_dim:
            error_message = (
                f"Observation dimension {observations.dim} does not match "
                f"model output dimension {model.output_dim}"
            )
            logger.error(error_message)
            raise InputShapeError(error_message)
        self.spec = spec
        self.model = model
        self.observations = observations
        self._center = observations.samples.mean(axis=0)
        spread = observations.samples - self._center
        self._spread = float((spread * spread).sum(axis=1).mean())
        self._scale = 1.0 / model.output_dim if spec.residual_normalizer == "mean-per-entry" else 1.0

    @property
    def dim(self) -> int:
        """State dimension D."""
        return self.model.input_dim

    def residuals(self, next_states: np.ndarray) -> np.ndarray:
        """Averaged squared misfit of f at each row of ``next_states``."""
        misfit = self.model.evaluate_batch(next_states) - self._center
        return self._scale * ((misfit * misfit).sum(axis=1) + self._spread)

    def rewards(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Rewards of a batch of (x, a) pairs."""
        penalty = self.spec.alpha * regularizer_batch(self.spec.regularizer, states)
        residual = self.residuals(states + actions)
        if self.spec.form == "reciprocal":
            return 1.0 / (residual + self.spec.floor + penalty)
        return -(residual + penalty)

    def reward(self, x: np.ndarray, a: np.ndarray) -> float:
        """Reward of a single pair."""
        states = np.asarray(x, dtype=float).reshape(1, -1)
        actions = np.asarray(a, dtype=float).reshape(1, -1)
        return float(self.rewards(states, actions)[0])


def reward(
    spec: RewardSpec,
    model: ForwardModel,
    observations: ObservationSet,
    x: np.ndarray,
    a: np.ndarray,
) -> float:
    """Evaluate R(x, a) for one state-action pair."""
    return RewardEnv(spec, model, observations).reward(x, a)


@dataclass(frozen=True)
class InitStateDist:
    """Law of the initial state x_0.

    ``fixed-point`` always returns ``point``; ``gaussian`` draws
    ``point + std * z``; ``finite-mixture`` picks one of ``atoms`` with the
    given ``probabilities``.
    """

    kind: InitKind = "fixed-point"
    point: tuple[float, ...] = ()
    std: float = 0.0
    atoms: tuple[tuple[float, ...], ...] = ()
    probabilities: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        """Validate the law and freeze vectors into tuples."""
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))
        object.__setattr__(self, "atoms", tuple(tuple(float(v) for v in atom) for atom in self.atoms))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if self.kind not in INIT_KINDS:
            error_message = f"Unknown initial-state kind {self.kind!r}; expected one of {INIT_KINDS}"
            raise ConfigurationError(error_message)
        if self.kind == "finite-mixture":
            self._validate_mixture()
        elif not self.point:
            error_message = f"Initial-state kind {self.kind!r} needs a point"
            raise ConfigurationError(error_message)
        if self.std < 0.0:
            error_message = f"std must be >= 0, got {self.std}"
            raise ConfigurationError(error_message)

    def _validate_mixture(self) -> None:
        if not self.atoms or len(self.atoms) != len(self.probabilities):
            error_message = "A mixture needs one probability per atom"
            raise ConfigurationError(error_message)
        if len({len(atom) for atom in self.atoms}) != 1:
            error_message = "All mixture atoms must share one dimension"
            raise ConfigurationError(error_message)
        if min(self.probabilities) < 0.0 or abs(sum(self.probabilities) - 1.0) > 1e-9:
            error_message = f"Mixture probabilities must be >= 0 and sum to 1, got {self.probabilities}"
            raise ConfigurationError(error_message)

    @classmethod
    def fixed(cls, point: Sequence[float] | np.ndarray) -> InitStateDist:
        """Deterministic start at ``point``."""
        return cls(kind="fixed-point", point=tuple(np.ravel(point)))

    @classmethod
    def mixture(
        cls,
        atoms: Sequence[Sequence[float] | np.ndarray],
        probabilities: Sequence[float],
    ) -> InitStateDist:
        """Finite mixture of point masses."""
        return cls(
            kind="finite-mixture",
            atoms=tuple(tuple(np.ravel(atom)) for atom in atoms),
            probabilities=tuple(probabilities),
        )

    @property
    def dim(self) -> int:
        """State dimension D."""
        return len(self.atoms[0]) if self.kind == "finite-mixture" else len(self.point)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` initial states, shape ``(count, D)``."""
        if self.kind == "finite-mixture":
            atoms = np.array(self.atoms)
            return atoms[rng.choice(len(self.atoms), size=count, p=self.probabilities)]
        point = np.array(self.point)
        if self.kind == "gaussian":
            return point + self.std * rng.standard_normal((count, point.shape[0]))
        return np.tile(point, (count, 1))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One rollout h_T = {(x_t, a_t)} with its per-step rewards."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    return_value: float

    @property
    def horizon(self) -> int:
        """Length T."""
        return int(self.states.shape[0])

    @property
    def last_state(self) -> np.ndarray:
        """x_{T-1}, the solution estimate of this rollout."""
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """L trajectories stored as ``(L, T, D)`` arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        """Cache the per-trajectory returns (1/T) sum_t R(x_t, a_t)."""
        object.__setattr__(self, "returns", self.rewards.mean(axis=1))

    @property
    def count(self) -> int:
        """Number of trajectories L."""
        return int(self.states.shape[0])

    @property
    def horizon(self) -> int:
        """Trajectory length T."""
        return int(self.states.shape[1])

    @property
    def last_states(self) -> np.ndarray:
        """x_{T-1} of every trajectory, shape ``(L, D)``."""
        return self.states[:, -1, :]

    def trajectory(self, index: int) -> Trajectory:
        """Single-trajectory view."""
        return Trajectory(
            states=self.states[index],
            actions=self.actions[index],
            rewards=self.rewards[index],
            return_value=float(self.returns[index]),
        )

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> TrajectoryBatch:
        """Stack trajectories of equal length."""
        if not trajectories:
            error_message = "At least one trajectory is required"
            raise InputShapeError(error_message)
        return cls(
            states=np.stack([t.states for t in trajectories]),
            actions=np.stack([t.actions for t in trajectories]),
            rewards=np.stack([t.rewards for t in trajectories]),
        )

    @classmethod
    def concatenate(cls, batches: Sequence[TrajectoryBatch]) -> TrajectoryBatch:
        """Join batches in the given order."""
        return cls(
            states=np.concatenate([b.states for b in batches]),
            actions=np.concatenate([b.actions for b in batches]),
            rewards=np.concatenate([b.rewards for b in batches]),
        )


def rollout_batch(
    policy: GaussianPolicy,
    init: InitStateDist,
    horizon: int,
    count: int,
    env: RewardEnv,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Generate ``count`` trajectories at once, vectorized over trajectories."""
    if horizon < 1 or count < 1:
        error_message = f"Need T >= 1 and L >= 1, got T={horizon}, L={count}"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    dim = policy.action_dim
    if init.dim != dim or env.dim != dim:
        error_message = f"Dimension mismatch: policy {dim}, initial law {init.dim}, model {env.dim}"
        logger.error(error_message)
        raise InputShapeError(error_message)
    states = np.empty((count, horizon, dim))
    actions = np.empty((count, horizon, dim))
    x = init.sample(count, rng)
    for t in range(horizon):
        a = policy.sample(x, rng.standard_normal((count, dim)))
        states[:, t] = x
        actions[:, t] = a
        x = x + a
    rewards = env.rewards(states.reshape(-1, dim), actions.reshape(-1, dim))
    return TrajectoryBatch(states=states, actions=actions, rewards=rewards.reshape(count, horizon))


def block_generator(seed: int, stream: int, update: int, block: int) -> np.random.Generator:
    """Generator of one block of trajectories, independent of how blocks are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, update, block)))


def rollout_blocks(
    policy: GaussianPolicy,
    init: InitStateDist,
    horizon: int,
    count: int,
    env: RewardEnv,
    *,
    seed: int,
    update: int,
    stream: int = TRAINING_STREAM,
    block_size: int = 64,
    executor: Executor | None = None,
) -> TrajectoryBatch:
    """Generate ``count`` trajectories in fixed-size blocks with their own substreams.

    Block b uses ``SeedSequence(seed, spawn_key=(stream, update, b))``; blocks
    are joined in index order, so the result does not depend on whether an
    executor is used or how many workers it has.
    """
    starts = range(0, count, block_size)

    def run(block: int) -> TrajectoryBatch:
        size = min(block_size, count - block * block_size)
        rng = block_generator(seed, stream, update, block)
        return rollout_batch(policy, init, horizon, size, env, rng)

    if executor is None:
        batches = [run(block) for block in range(len(starts))]
    else:
        batches = list(executor.map(run, range(len(starts))))
    return TrajectoryBatch.concatenate(batches)


def generate_trajectory(
    policy: GaussianPolicy,
    init: InitStateDist,
    horizon: int,
    env: RewardEnv,
    rng: np.random.Generator,
) -> Trajectory:
    """Sample x_0 and roll out T steps of the policy."""
    return rollout_batch(policy, init, horizon, 1, env, rng).trajectory(0)


def mean_path(batch: TrajectoryBatch) -> np.ndarray:
    """Per-step average state x_bar_t over the trajectories, shape ``(T, D)``."""
    return batch.states.mean(axis=0)


def performance_of_batch(
    batch: TrajectoryBatch,
    env: RewardEnv,
    mode: PerformanceMode = "mean-path",
    seed: int = 0,
) -> float:
    """Performance indicator r of a set of trajectories.

    ``mean-path`` returns sum_t R(x_bar_t, 0). ``group-means`` splits the last
    states into two K-means groups and averages R(x_bar_g, 0) over the groups.
    """
    if mode == "mean-path":
        path = mean_path(batch)
        return float(env.rewards(path, np.zeros_like(path)).sum())
    if mode == "group-means":
        if batch.count < 2:
            error_message = "group-means performance needs at least 2 trajectories"
            raise ConfigurationError(error_message)
        groups = kmeans(Ensemble(batch.last_states), k=2, restarts=1, seed=seed).means
        return float(env.rewards(groups, np.zeros_like(groups)).mean())
    error_message = f"Unknown performance mode {mode!r}; expected one of {PERFORMANCE_MODES}"
    raise ConfigurationError(error_message)


def policy_performance(
    policy: GaussianPolicy,
    init: InitStateDist,
    horizon: int,
    count: int,
    env: RewardEnv,
    rng: np.random.Generator,
    mode: PerformanceMode = "mean-path",
) -> float:
    """Roll out ``count`` fresh trajectories and return their performance indicator."""
    batch = rollout_batch(policy, init, horizon, count, env, rng)
    return performance_of_batch(batch, env, mode)
