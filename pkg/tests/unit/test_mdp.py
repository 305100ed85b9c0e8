"""Unit tests for rewards, initial laws and trajectory generation."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from kataglyphis_reinforceip.exceptions import ConfigurationError, InputShapeError
from kataglyphis_reinforceip.forward_models import AutoConvModel, LinearModel, ObservationSet
from kataglyphis_reinforceip.mdp import (
    InitStateDist,
    RewardEnv,
    RewardSpec,
    TrajectoryBatch,
    generate_trajectory,
    mean_path,
    performance_of_batch,
    policy_performance,
    regularizer_value,
    reward,
    rollout_batch,
    rollout_blocks,
)
from kataglyphis_reinforceip.policy import AffinePolicyI, AffinePolicyII, MlpPolicy


def _linear_env(spec: RewardSpec | None = None) -> RewardEnv:
    observations = ObservationSet(np.array([[1.0, 0.0], [3.0, 2.0]]))
    return RewardEnv(spec or RewardSpec(form="negative"), LinearModel(np.eye(2)), observations)


def test_regularizers() -> None:
    """Boundary and squared-norm regularizers."""
    x = np.array([-2.0, 5.0, 3.0])
    assert regularizer_value("boundary-abs", x) == 5.0
    assert regularizer_value("squared-norm", x) == 38.0
    assert regularizer_value("none", x) == 0.0


def test_negative_reward_averages_over_samples() -> None:
    """The misfit is the mean of ||f(x + a) - y_k||^2 over k."""
    spec = RewardSpec(form="negative", alpha=0.5, regularizer="squared-norm")
    env = _linear_env(spec)
    x, a = np.array([1.0, 1.0]), np.array([1.0, 0.0])
    # f(x + a) = (2, 1): misfits 1 + 1 = 2 and 1 + 1 = 2
    assert env.reward(x, a) == pytest.approx(-(2.0 + 0.5 * 2.0))


def test_reciprocal_reward_has_a_floor() -> None:
    """A perfect fit returns 1 / floor."""
    model = LinearModel(np.eye(2))
    observations = ObservationSet(np.array([[1.0, 2.0]]))
    spec = RewardSpec(form="reciprocal", floor=0.001)
    assert reward(spec, model, observations, np.zeros(2), np.array([1.0, 2.0])) == pytest.approx(1000.0)


def test_mean_per_entry_normalizer_divides_by_m() -> None:
    """mean-per-entry divides the misfit by the observation length."""
    total = _linear_env(RewardSpec(form="negative"))
    per_entry = _linear_env(RewardSpec(form="negative", residual_normalizer="mean-per-entry"))
    x, a = np.zeros(2), np.array([0.5, -0.5])
    assert per_entry.reward(x, a) == pytest.approx(total.reward(x, a) / 2.0)


def test_reward_spec_validation() -> None:
    """Unknown forms and negative alpha are rejected."""
    with pytest.raises(ConfigurationError):
        RewardSpec(form="exponential")  # type: ignore[arg-type]
    with pytest.raises(ConfigurationError):
        RewardSpec(alpha=-0.1)
    with pytest.raises(ConfigurationError):
        RewardSpec(form="reciprocal", floor=0.0)


def test_reward_env_checks_dimensions() -> None:
    """Observations must match the model output."""
    with pytest.raises(InputShapeError):
        RewardEnv(RewardSpec(), AutoConvModel(4), ObservationSet(np.ones((2, 3))))


def test_init_laws() -> None:
    """Fixed, Gaussian and mixture initial laws."""
    rng = np.random.default_rng(0)
    fixed = InitStateDist.fixed([1.0, 2.0])
    assert np.array_equal(fixed.sample(3, rng), np.tile([1.0, 2.0], (3, 1)))

    mixture = InitStateDist.mixture([[1.0], [-1.0]], [0.25, 0.75])
    draws = mixture.sample(20000, rng)[:, 0]
    assert set(np.unique(draws).tolist()) == {-1.0, 1.0}
    assert np.mean(draws == 1.0) == pytest.approx(0.25, abs=0.02)

    gaussian = InitStateDist(kind="gaussian", point=(0.0,), std=2.0)
    assert gaussian.sample(20000, rng).std() == pytest.approx(2.0, rel=0.03)


def test_init_law_validation() -> None:
    """Mixture weights must sum to one and atoms share a dimension."""
    with pytest.raises(ConfigurationError):
        InitStateDist.mixture([[1.0], [2.0]], [0.5, 0.6])
    with pytest.raises(ConfigurationError):
        InitStateDist.mixture([[1.0], [2.0, 3.0]], [0.5, 0.5])
    with pytest.raises(ConfigurationError):
        InitStateDist(kind="fixed-point")


def test_rollout_follows_the_transition() -> None:
    """x_{t+1} = x_t + a_t and the return is the average reward."""
    policy = AffinePolicyI(np.array([1.0, -1.0]), 0.01 * np.eye(2))
    env = _linear_env()
    batch = rollout_batch(policy, InitStateDist.fixed([0.0, 0.0]), 4, 5, env, np.random.default_rng(1))
    assert batch.states.shape == (5, 4, 2)
    assert np.allclose(batch.states[:, 1:], batch.states[:, :-1] + batch.actions[:, :-1])
    assert np.array_equal(batch.states[:, 0], np.zeros((5, 2)))
    assert np.allclose(batch.returns, batch.rewards.mean(axis=1))
    single = batch.trajectory(2)
    assert single.horizon == 4
    assert single.return_value == pytest.approx(batch.returns[2])


def test_deterministic_policy_reaches_theta() -> None:
    """With sigma = 0 the chain under N(theta - B x, 0) with B = I jumps to theta."""
    policy = AffinePolicyII(np.array([0.3, 0.7]), np.eye(2), 0.0)
    env = _linear_env()
    trajectory = generate_trajectory(policy, InitStateDist.fixed([5.0, 5.0]), 3, env, np.random.default_rng(0))
    assert np.allclose(trajectory.last_state, [0.3, 0.7])


def test_rollout_dimension_mismatch() -> None:
    """The initial law must match the policy dimension."""
    policy = AffinePolicyI(np.zeros(2), np.eye(2))
    with pytest.raises(InputShapeError):
        rollout_batch(policy, InitStateDist.fixed([0.0]), 2, 2, _linear_env(), np.random.default_rng(0))


def test_blocks_do_not_depend_on_workers() -> None:
    """Block substreams give identical batches with and without a thread pool."""
    policy = MlpPolicy.initialize([4, 8, 8], 3)
    env = RewardEnv(RewardSpec(), AutoConvModel(4), ObservationSet(np.ones((3, 4))))
    init = InitStateDist.fixed(np.full(4, 0.01))
    serial = rollout_blocks(policy, init, 3, 50, env, seed=11, update=2, block_size=8)
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = rollout_blocks(
            policy, init, 3, 50, env, seed=11, update=2, block_size=8, executor=pool
        )
    assert serial.count == 50
    assert np.array_equal(serial.states, parallel.states)
    assert np.array_equal(serial.rewards, parallel.rewards)


def test_streams_and_updates_are_independent() -> None:
    """Different updates and streams draw different noise."""
    policy = AffinePolicyI(np.zeros(2), np.eye(2))
    env = _linear_env()
    init = InitStateDist.fixed([0.0, 0.0])
    first = rollout_blocks(policy, init, 2, 4, env, seed=0, update=0)
    second = rollout_blocks(policy, init, 2, 4, env, seed=0, update=1)
    third = rollout_blocks(policy, init, 2, 4, env, seed=0, update=0, stream=1)
    assert not np.array_equal(first.actions, second.actions)
    assert not np.array_equal(first.actions, third.actions)


def test_mean_path_performance() -> None:
    """mean-path performance sums R(x_bar_t, 0) over the steps."""
    states = np.array([[[0.0, 0.0], [2.0, 1.0]], [[2.0, 2.0], [2.0, 1.0]]])
    batch = TrajectoryBatch(states=states, actions=np.zeros_like(states), rewards=np.zeros((2, 2)))
    env = _linear_env()
    path = mean_path(batch)
    assert np.allclose(path, [[1.0, 1.0], [2.0, 1.0]])
    expected = env.reward(path[0], np.zeros(2)) + env.reward(path[1], np.zeros(2))
    assert performance_of_batch(batch, env) == pytest.approx(expected)


def test_group_means_performance() -> None:
    """group-means averages R over the two K-means group means."""
    last = np.array([[1.0, 0.0]] * 3 + [[3.0, 2.0]] * 3)
    states = last[:, np.newaxis, :]
    batch = TrajectoryBatch(states=states, actions=np.zeros_like(states), rewards=np.zeros((6, 1)))
    env = _linear_env()
    expected = 0.5 * (env.reward(last[0], np.zeros(2)) + env.reward(last[-1], np.zeros(2)))
    assert performance_of_batch(batch, env, "group-means") == pytest.approx(expected)


def test_policy_performance_is_seeded() -> None:
    """Fresh-rollout performance is reproducible for a fixed generator seed."""
    policy = AffinePolicyI(np.array([2.0, 1.0]), 0.01 * np.eye(2))
    env = _linear_env()
    init = InitStateDist.fixed([0.0, 0.0])
    first = policy_performance(policy, init, 3, 10, env, np.random.default_rng(4))
    second = policy_performance(policy, init, 3, 10, env, np.random.default_rng(4))
    assert first == second
