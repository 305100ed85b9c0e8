"""REINFORCE training of the iteration policy and the end-to-end solve."""

from __future__ import annotations

import dataclasses
import math
import os
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np
from loguru import logger

from .analysis import (
    AnalysisConfig,
    CiBand,
    Ensemble,
    KMeansResult,
    bootstrap_ci,
    kmeans,
    r_squared,
)
from .exceptions import ConfigurationError, DivergenceError, InputShapeError
from .mdp import (
    EVALUATION_STREAM,
    PERFORMANCE_MODES,
    PERFORMANCE_STREAM,
    InitStateDist,
    PerformanceMode,
    RewardEnv,
    RewardSpec,
    Trajectory,
    TrajectoryBatch,
    performance_of_batch,
    rollout_blocks,
)

if TYPE_CHECKING:
    from .forward_models import ForwardModel, ObservationSet
    from .policy import GaussianPolicy


WORKERS_ENV = "REINFORCE_IP_WORKERS"

StopReason = Literal["threshold", "max-updates", "patience"]


@dataclass(frozen=True)
class StepSchedule:
    """Harmonic step sizes a_n = c1 / (c2 + n).

    Any positive c1, c2 give sum a_n = infinity and sum a_n^2 < infinity.
    """

    family: Literal["harmonic"] = "harmonic"
    c1: float = 0.001
    c2: float = 50000.0

    def __post_init__(self) -> None:
        """Validate the schedule constants."""
        if self.family != "harmonic":
            error_message = f"Unknown step-size family {self.family!r}"
            raise ConfigurationError(error_message)
        if not (self.c1 > 0.0 and self.c2 > 0.0):
            error_message = f"Step sizes need c1 > 0 and c2 > 0, got c1={self.c1}, c2={self.c2}"
            raise ConfigurationError(error_message)

    def __call__(self, update: int) -> float:
        """Step size a_n of update ``n``."""
        return self.c1 / (self.c2 + update)

    def partial_sums(self, horizon: int) -> tuple[float, float]:
        """Return (sum a_n, sum a_n^2) over n < horizon."""
        steps = self.c1 / (self.c2 + np.arange(horizon, dtype=float))
        return float(steps.sum()), float((steps * steps).sum())


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of the training loop.

    ``horizon`` is T, ``trajectories`` is L, ``max_updates`` is N and
    ``threshold`` is H0. ``alpha`` overrides the reward's regularization
    weight when set. ``weights`` defaults to all ones; ``patience`` counts
    performance logs without improvement and ``None`` disables it.
    ``max_grad_norm`` bounds the norm of the update direction before it is
    scaled by a_n; ``None`` leaves the direction unbounded.
    """

    horizon: int = 10
    trajectories: int = 1000
    max_updates: int = 8000
    threshold: float = math.inf
    alpha: float | None = None
    beta: float = 0.0
    weights: tuple[float, ...] | None = None
    schedule: StepSchedule = field(default_factory=StepSchedule)
    seed: int = 0
    log_every: int = 100
    patience: int | None = None
    workers: int | None = None
    block_size: int = 64
    theta_ceiling: float = 1e6
    max_grad_norm: float | None = None
    performance_mode: PerformanceMode = "mean-path"
    fresh_performance_rollouts: bool = False
    eval_trajectories: int = 10000

    def __post_init__(self) -> None:
        """Check the invariants of every field."""
        positive = {
            "horizon": self.horizon,
            "trajectories": self.trajectories,
            "max_updates": self.max_updates,
            "log_every": self.log_every,
            "block_size": self.block_size,
            "eval_trajectories": self.eval_trajectories,
        }
        for name, value in positive.items():
            if value < 1:
                error_message = f"{name} must be >= 1, got {value}"
                raise ConfigurationError(error_message)
        if not self.beta >= 0.0:
            error_message = f"beta must be >= 0, got {self.beta}"
            raise ConfigurationError(error_message)
        if self.alpha is not None and not self.alpha >= 0.0:
            error_message = f"alpha must be >= 0, got {self.alpha}"
            raise ConfigurationError(error_message)
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            if min(self.weights, default=1.0) <= 0.0:
                error_message = "All entries of the weight vector w must be > 0"
                raise ConfigurationError(error_message)
        if self.patience is not None and self.patience < 1:
            error_message = f"patience must be >= 1 or null, got {self.patience}"
            raise ConfigurationError(error_message)
        if self.workers is not None and self.workers < 1:
            error_message = f"workers must be >= 1, got {self.workers}"
            raise ConfigurationError(error_message)
        if self.max_grad_norm is not None and not self.max_grad_norm > 0.0:
            error_message = f"max_grad_norm must be > 0 or null, got {self.max_grad_norm}"
            raise ConfigurationError(error_message)
        if not self.theta_ceiling > 0.0:
            error_message = f"theta_ceiling must be > 0, got {self.theta_ceiling}"
            raise ConfigurationError(error_message)
        if self.performance_mode not in PERFORMANCE_MODES:
            error_message = f"Unknown performance mode {self.performance_mode!r}"
            raise ConfigurationError(error_message)

    def weight_vector(self, dim: int) -> np.ndarray:
        """The weights w of ||theta||_w^2 as an array of length ``dim``."""
        if self.weights is None:
            return np.ones(dim)
        if len(self.weights) != dim:
            error_message = f"weights has {len(self.weights)} entries, theta has {dim}"
            logger.error(error_message)
            raise InputShapeError(error_message)
        return np.asarray(self.weights)


def resolve_workers(requested: int | None) -> int:
    """Worker count from the config, else from ``REINFORCE_IP_WORKERS``, else 1."""
    if requested is not None:
        return requested
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError as error:
        error_message = f"{WORKERS_ENV} must be a positive integer, got {raw!r}"
        logger.error(error_message)
        raise ConfigurationError(error_message) from error
    if workers < 1:
        error_message = f"{WORKERS_ENV} must be a positive integer, got {raw!r}"
        raise ConfigurationError(error_message)
    return workers


@contextmanager
def rollout_executor(workers: int) -> Iterator[Executor | None]:
    """Thread pool for more than one worker, in-thread execution otherwise."""
    if workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="rollout") as pool:
        yield pool


@dataclass(frozen=True)
class LogRecord:
    """One performance log entry."""

    update: int
    performance: float
    grad_norm: float
    theta_norm: float


@dataclass
class TrainLog:
    """Performance history of a training run."""

    records: list[LogRecord] = field(default_factory=list)
    stop_reason: StopReason = "max-updates"
    updates: int = 0

    def record(self, entry: LogRecord) -> None:
        """Append an entry; update indices must increase strictly."""
        if self.records and entry.update <= self.records[-1].update:
            error_message = f"Log update index {entry.update} is not increasing"
            raise ConfigurationError(error_message)
        self.records.append(entry)

    @property
    def final_performance(self) -> float | None:
        """Performance of the last log entry, if any."""
        return self.records[-1].performance if self.records else None


def estimate_gradient(
    policy: GaussianPolicy, trajectories: TrajectoryBatch | Sequence[Trajectory]
) -> np.ndarray:
    """REINFORCE estimate (1/L) sum_l R(h_l) sum_t grad ln pi(a_t | x_t).

    Args:
        policy (GaussianPolicy): policy that generated the trajectories.
        trajectories (TrajectoryBatch | Sequence[Trajectory]): the L rollouts.

    Returns:
        type: np.ndarray
        gradient estimate of length d.
    """
    batch = (
        trajectories
        if isinstance(trajectories, TrajectoryBatch)
        else TrajectoryBatch.from_trajectories(trajectories)
    )
    dim = policy.action_dim
    weights = np.repeat(batch.returns / batch.count, batch.horizon)
    return policy.weighted_score(
        batch.states.reshape(-1, dim), batch.actions.reshape(-1, dim), weights
    )


def reinforce_step(
    theta: np.ndarray, grad_est: np.ndarray, update: int, config: TrainConfig
) -> np.ndarray:
    """Return theta + a_n (grad_est - 2 beta w * theta).

    With ``config.max_grad_norm`` set, the direction in parentheses is
    rescaled to at most that norm, so no single update moves theta by more
    than a_n * max_grad_norm.

    Raises:
        DivergenceError: the gradient estimate is not finite.
    """
    if update < 0:
        error_message = f"Update index must be >= 0, got {update}"
        raise ConfigurationError(error_message)
    if not np.all(np.isfinite(grad_est)):
        error_message = f"Non-finite gradient estimate at update {update}"
        logger.error(error_message)
        raise DivergenceError(error_message)
    theta = np.asarray(theta, dtype=float)
    penalty = 2.0 * config.beta * config.weight_vector(theta.shape[0]) * theta
    direction = grad_est - penalty
    if config.max_grad_norm is not None:
        norm = float(np.linalg.norm(direction))
        if norm > config.max_grad_norm:
            logger.debug("update {}: direction norm {:.3g} clipped", update, norm)
            direction = direction * (config.max_grad_norm / norm)
    return theta + config.schedule(update) * direction


def _effective_reward(reward_spec: RewardSpec, config: TrainConfig) -> RewardSpec:
    if config.alpha is None:
        return reward_spec
    return dataclasses.replace(reward_spec, alpha=config.alpha)


def train(
    policy_init: GaussianPolicy,
    model: ForwardModel,
    observations: ObservationSet,
    reward_spec: RewardSpec,
    init_dist: InitStateDist,
    config: TrainConfig,
    *,
    on_update: Callable[[int, GaussianPolicy], None] | None = None,
) -> tuple[GaussianPolicy, TrainLog]:
    """Run REINFORCE until r > H0, N updates, or patience runs out.

    Every ``log_every`` updates the performance r of the current policy is
    recorded; a threshold stop happens before that update is applied.
    ``on_update(n, policy)`` is called after update n has been applied.

    Raises:
        ConfigurationError: the policy cannot be trained (e.g. sigma = 0).
        DivergenceError: ||theta|| exceeds the ceiling or turns non-finite.
    """
    if not policy_init.trainable:
        error_message = f"Policy family {policy_init.family!r} with zero noise cannot be trained"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    env = RewardEnv(_effective_reward(reward_spec, config), model, observations)
    config.weight_vector(policy_init.param_dim)
    logger.info(
        "Training {} policy with d={} parameters: T={}, L={}, N={}, H0={}",
        policy_init.family,
        policy_init.param_dim,
        config.horizon,
        config.trajectories,
        config.max_updates,
        config.threshold,
    )
    if config.patience is None:
        logger.debug("Patience stop disabled")

    policy = policy_init
    log = TrainLog()
    best = -math.inf
    stale = 0
    rollout = {
        "horizon": config.horizon,
        "count": config.trajectories,
        "env": env,
        "seed": config.seed,
        "block_size": config.block_size,
    }
    with rollout_executor(resolve_workers(config.workers)) as executor:
        for update in range(config.max_updates):
            batch = rollout_blocks(
                policy, init_dist, update=update, executor=executor, **rollout
            )
            gradient = estimate_gradient(policy, batch)
            if update % config.log_every == 0:
                if config.fresh_performance_rollouts:
                    batch = rollout_blocks(
                        policy,
                        init_dist,
                        update=update,
                        stream=PERFORMANCE_STREAM,
                        executor=executor,
                        **rollout,
                    )
                performance = performance_of_batch(
                    batch, env, config.performance_mode, seed=config.seed + update
                )
                log.record(
                    LogRecord(
                        update=update,
                        performance=performance,
                        grad_norm=float(np.linalg.norm(gradient)),
                        theta_norm=float(np.linalg.norm(policy.theta)),
                    )
                )
                logger.info("update {}: performance r={:.6g}", update, performance)
                if performance > config.threshold:
                    log.stop_reason = "threshold"
                    break
                if performance > best:
                    best, stale = performance, 0
                else:
                    stale += 1
                if config.patience is not None and stale >= config.patience:
                    log.stop_reason = "patience"
                    break
            theta = reinforce_step(policy.theta, gradient, update, config)
            theta_norm = float(np.linalg.norm(theta))
            if not theta_norm <= config.theta_ceiling:
                error_message = (
                    f"||theta|| = {theta_norm:.3g} exceeds the ceiling "
                    f"{config.theta_ceiling:.3g} at update {update}; the iterates are not "
                    "bounded, reduce the step sizes"
                )
                logger.error(error_message)
                raise DivergenceError(error_message)
            policy = policy.with_theta(theta)
            log.updates += 1
            if on_update is not None:
                on_update(update, policy)
    logger.info("Training stopped after {} updates ({})", log.updates, log.stop_reason)
    return policy, log


@dataclass(frozen=True)
class InverseProblem:
    """Everything :func:`solve` needs besides the training hyper-parameters."""

    model: ForwardModel
    observations: ObservationSet
    reward_spec: RewardSpec
    init_dist: InitStateDist
    policy: GaussianPolicy
    reference: np.ndarray | None = None
    nonnegative: bool = False
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)


@dataclass(frozen=True, eq=False)
class GroupSummary:
    """One K-means group of the solution ensemble."""

    size: int
    mean: np.ndarray
    ci: CiBand
    r_squared: float | None


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of :func:`solve`."""

    policy: GaussianPolicy
    log: TrainLog
    ensemble: Ensemble
    mean: np.ndarray
    ci: CiBand
    groups: list[GroupSummary]
    r_squared: float | None
    reference: np.ndarray | None = None
    extras: dict[str, object] = field(default_factory=dict)

    @property
    def final_performance(self) -> float | None:
        """Last logged performance r."""
        return self.log.final_performance

    @property
    def stop_reason(self) -> StopReason:
        """Why training stopped."""
        return self.log.stop_reason


def _scorable(reference: np.ndarray | None) -> bool:
    """R^2 needs a non-constant reference with at least two entries."""
    return reference is not None and reference.shape[0] >= 2 and float(np.ptp(reference)) > 0.0


def _signed_r_squared(estimate: np.ndarray, reference: np.ndarray) -> float:
    sign = -1.0 if float(estimate @ reference) < 0.0 else 1.0
    return r_squared(estimate, sign * reference)


def _group_summaries(
    ensemble: Ensemble,
    clusters: KMeansResult,
    problem: InverseProblem,
    seed: int,
) -> list[GroupSummary]:
    summaries = []
    for index in range(clusters.means.shape[0]):
        members = Ensemble(clusters.group(ensemble.estimates, index))
        band = bootstrap_ci(
            members,
            problem.analysis.bootstrap_resamples,
            problem.analysis.level,
            seed + index + 1,
            clamp_nonnegative=problem.nonnegative,
        )
        score = None
        if _scorable(problem.reference):
            score = _signed_r_squared(members.mean, problem.reference)
        summaries.append(GroupSummary(members.size, members.mean, band, score))
    return summaries


def solve(problem: InverseProblem, config: TrainConfig) -> SolveReport:
    """Train the policy, roll out the solution ensemble and summarize it.

    The ensemble holds x_{T-1} of ``config.eval_trajectories`` fresh
    trajectories under the trained policy. R^2 is ``None`` when there is no
    reference or the reference is constant.
    """
    policy, log = train(
        problem.policy,
        problem.model,
        problem.observations,
        problem.reward_spec,
        problem.init_dist,
        config,
    )
    env = RewardEnv(
        _effective_reward(problem.reward_spec, config), problem.model, problem.observations
    )
    with rollout_executor(resolve_workers(config.workers)) as executor:
        batch = rollout_blocks(
            policy,
            problem.init_dist,
            config.horizon,
            config.eval_trajectories,
            env,
            seed=config.seed,
            update=0,
            stream=EVALUATION_STREAM,
            block_size=config.block_size,
            executor=executor,
        )
    ensemble = Ensemble(batch.last_states)
    analysis = problem.analysis
    band = bootstrap_ci(
        ensemble,
        analysis.bootstrap_resamples,
        analysis.level,
        config.seed,
        clamp_nonnegative=problem.nonnegative,
    )
    groups: list[GroupSummary] = []
    if analysis.kmeans_k:
        clusters = kmeans(ensemble, analysis.kmeans_k, analysis.kmeans_restarts, config.seed)
        groups = _group_summaries(ensemble, clusters, problem, config.seed)
    score = None
    if _scorable(problem.reference):
        score = r_squared(ensemble.mean, problem.reference)
    logger.success(
        "Solve finished: {} estimates, stop reason {}, R^2={}",
        ensemble.size,
        log.stop_reason,
        score,
    )
    return SolveReport(
        policy=policy,
        log=log,
        ensemble=ensemble,
        mean=ensemble.mean,
        ci=band,
        groups=groups,
        r_squared=score,
        reference=problem.reference,
    )
