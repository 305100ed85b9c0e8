"""Unit tests for the Gaussian policy families."""

import math
from functools import partial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kataglyphis_reinforceip.exceptions import ConfigurationError, InputShapeError, NumericError
from kataglyphis_reinforceip.gradcheck import central_difference, random_policy, relative_error
from kataglyphis_reinforceip.policy import (
    AffinePolicyI,
    AffinePolicyII,
    GaussianPolicy,
    MlpPolicy,
    grad_log_density,
    log_density,
    mlp_forward,
    moving_average,
    moving_average_matrix,
    policy_from_checkpoint,
    sample_action,
    softplus,
    softplus_inverse,
)


def _log_density_of(
    theta: np.ndarray, *, policy: GaussianPolicy, x: np.ndarray, a: np.ndarray
) -> float:
    return log_density(policy.with_theta(theta), x, a)


def _mlp(dim: int = 3, hidden: int = 5, seed: int = 0, window: int = 3) -> MlpPolicy:
    return MlpPolicy.initialize([dim, hidden, 2 * dim], seed, ma_window=window)


def test_softplus_is_positive_and_stable() -> None:
    """Softplus stays positive and finite for extreme inputs."""
    values = softplus(np.array([-30.0, -5.0, 0.0, 5.0, 800.0]))
    assert np.all(values > 0.0)
    assert np.all(np.isfinite(values))
    assert values[2] == pytest.approx(math.log(2.0))
    assert values[-1] == pytest.approx(800.0)


@given(st.floats(min_value=1e-6, max_value=50.0))
def test_softplus_inverse_round_trip(value: float) -> None:
    """softplus(softplus_inverse(v)) recovers v."""
    assert softplus(softplus_inverse(value)) == pytest.approx(value, rel=1e-9)


def test_moving_average_window_three() -> None:
    """Interior entries average three neighbours, edges average what exists."""
    z = np.array([1.0, 2.0, 6.0, 3.0])
    assert np.allclose(moving_average(z, 3), [1.5, 3.0, 11.0 / 3.0, 4.5])
    assert np.array_equal(moving_average(z, 1), z)


def test_moving_average_rows_sum_to_one() -> None:
    """Every row of the averaging matrix is a probability vector."""
    matrix = moving_average_matrix(7, 5)
    assert np.allclose(matrix.sum(axis=1), 1.0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=1, max_value=12),
    st.sampled_from([1, 3, 5, 7]),
    st.floats(min_value=-5.0, max_value=5.0),
    st.floats(min_value=-5.0, max_value=5.0),
    st.integers(min_value=0, max_value=10_000),
)
def test_moving_average_is_linear(size: int, window: int, a: float, b: float, seed: int) -> None:
    """MA(a z + b w) = a MA(z) + b MA(w)."""
    rng = np.random.default_rng(seed)
    z, w = rng.standard_normal((2, size))
    combined = moving_average(a * z + b * w, window)
    assert np.allclose(combined, a * moving_average(z, window) + b * moving_average(w, window))


def test_moving_average_window_shrinks_at_the_edges() -> None:
    """With window 5 the first rows average 3 and 4 entries, interior rows 5."""
    matrix = moving_average_matrix(7, 5)
    support = (matrix > 0.0).sum(axis=1)
    assert support.tolist() == [3, 4, 5, 5, 5, 4, 3]
    assert np.allclose(matrix[0, :3], 1.0 / 3.0)
    assert np.allclose(matrix[1, :4], 0.25)
    assert np.allclose(matrix[3, 1:6], 0.2)
    assert np.array_equal(matrix, matrix[::-1, ::-1])


@pytest.mark.parametrize("window", [0, 2, -1])
def test_moving_average_rejects_even_windows(window: int) -> None:
    """Windows must be positive and odd."""
    with pytest.raises(ConfigurationError):
        moving_average_matrix(4, window)


def test_affine_one_mean_and_log_density() -> None:
    """N(theta - x, Sigma) has mean theta - x and the textbook density."""
    theta = np.array([1.0, -2.0])
    sigma = np.array([[2.0, 0.0], [0.0, 0.5]])
    policy = AffinePolicyI(theta, sigma)
    x = np.array([0.5, 0.5])
    assert np.allclose(policy.mean(x[np.newaxis, :])[0], theta - x)
    a = np.array([1.0, -2.0])
    residual = a - (theta - x)
    expected = -0.5 * (
        2 * math.log(2 * math.pi) + math.log(1.0) + residual @ np.linalg.solve(sigma, residual)
    )
    assert log_density(policy, x, a) == pytest.approx(expected)


def test_affine_one_rejects_singular_sigma() -> None:
    """A singular covariance is reported as a numeric error."""
    with pytest.raises(NumericError):
        AffinePolicyI(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_affine_two_zero_noise() -> None:
    """With sigma = 0 sampling is deterministic and the log-density undefined."""
    policy = AffinePolicyII(np.ones(2), 0.5 * np.eye(2), 0.0)
    x = np.array([[2.0, 4.0]])
    assert np.allclose(policy.sample(x, np.ones((1, 2))), [[0.0, -1.0]])
    assert not policy.trainable
    with pytest.raises(NumericError):
        policy.log_density(x, np.zeros((1, 2)))


def test_affine_two_from_problem_checks_omega() -> None:
    """omega at or above its bound is rejected."""
    matrix = np.eye(2)
    with pytest.raises(ConfigurationError):
        AffinePolicyII.from_problem(matrix, 0.5, 0.0, np.zeros(2), 0.1)
    policy = AffinePolicyII.from_problem(matrix, 0.2, 0.0, np.zeros(2), 0.1)
    assert np.allclose(policy.b_matrix, 0.2 * np.eye(2))


def test_mlp_parameter_count_and_layout() -> None:
    """The flat vector stores W then b for every layer."""
    sizes = [2, 3, 4]
    assert MlpPolicy.count_parameters(sizes) == 2 * 3 + 3 + 3 * 4 + 4
    theta = np.zeros(MlpPolicy.count_parameters(sizes))
    # last bias: z1 = (1, 2), z2 = (0, 0)
    theta[-4:] = [1.0, 2.0, 0.0, 0.0]
    policy = MlpPolicy(sizes, theta, ma_window=1)
    z1, z2 = mlp_forward(policy, np.array([0.3, -0.3]))
    assert np.allclose(z1, [1.0, 2.0])
    assert np.allclose(z2, [0.0, 0.0])
    assert np.allclose(policy.std(np.zeros((1, 2))), math.log(2.0) + policy.min_std)


def test_mlp_rejects_bad_architecture() -> None:
    """Output width must be 2D and theta must fit the architecture."""
    with pytest.raises(ConfigurationError):
        MlpPolicy([2, 3, 3], np.zeros(MlpPolicy.count_parameters([2, 3, 3])))
    with pytest.raises(InputShapeError):
        MlpPolicy([2, 3, 4], np.zeros(5))


def test_mlp_std_has_a_floor() -> None:
    """A very negative z2 still gives std >= min_std."""
    sizes = [1, 2]
    policy = MlpPolicy(sizes, np.array([0.0, 0.0, 0.0, -1000.0]), min_std=1e-6, ma_window=1)
    assert policy.std(np.zeros((1, 1)))[0, 0] >= 1e-6


def test_mlp_states_must_match_dimension() -> None:
    """States of the wrong width raise InputShapeError."""
    with pytest.raises(InputShapeError):
        _mlp().mean(np.zeros((2, 4)))


@pytest.mark.parametrize("family", ["affine-1", "affine-2", "mlp"])
def test_score_matches_finite_differences(family: str) -> None:
    """The analytic score agrees with a central difference of the log-density."""
    rng = np.random.default_rng(5)
    for _ in range(10):
        policy = random_policy(family, rng)
        x = rng.standard_normal(policy.action_dim)
        a = sample_action(policy, x, rng)

        numeric = central_difference(
            partial(_log_density_of, policy=policy, x=x, a=a), np.array(policy.theta)
        )
        assert relative_error(grad_log_density(policy, x, a), numeric) < 1e-5


@pytest.mark.parametrize("family", ["affine-1", "affine-2", "mlp"])
def test_score_has_mean_zero(family: str) -> None:
    """E[score] = 0 under the policy: every coordinate's Monte Carlo z-score is small."""
    rng = np.random.default_rng(13)
    policy = random_policy(family, rng)
    count = 100_000
    xs = np.repeat(rng.standard_normal((1, policy.action_dim)), count, axis=0)
    actions = policy.sample(xs, rng.standard_normal((count, policy.action_dim)))
    scores = policy.score(xs, actions)
    spread = scores.std(axis=0)
    # dead ReLU units give an identically zero score
    live = spread > 1e-12
    assert live.any()
    z_scores = scores.mean(axis=0)[live] / (spread[live] / math.sqrt(count))
    assert np.all(np.abs(z_scores) < 5.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_weighted_score_equals_weighted_sum(seed: int) -> None:
    """The single reverse pass equals the weighted per-sample scores."""
    rng = np.random.default_rng(seed)
    policy = _mlp(seed=seed)
    xs = rng.standard_normal((6, 3))
    actions = policy.sample(xs, rng.standard_normal((6, 3)))
    weights = rng.standard_normal(6)
    expected = weights @ policy.score(xs, actions)
    assert np.allclose(policy.weighted_score(xs, actions, weights), expected, atol=1e-10)


def test_sampling_reproduces_mean_and_std() -> None:
    """Empirical moments of MLP actions match mean and std."""
    policy = _mlp(dim=2, seed=4)
    rng = np.random.default_rng(0)
    x = np.array([[0.2, -0.1]])
    draws = policy.sample(np.repeat(x, 20000, axis=0), rng.standard_normal((20000, 2)))
    std = policy.std(x)[0]
    assert np.allclose(draws.mean(axis=0), policy.mean(x)[0], atol=5 * std / math.sqrt(20000))
    assert np.allclose(draws.std(axis=0), std, rtol=0.03)


def test_mlp_initialization_options() -> None:
    """A small output gain puts the initial mean near mean_bias and the std near initial_std."""
    policy = MlpPolicy.initialize(
        [4, 8, 8], 3, min_std=0.02, output_gain=1e-3, mean_bias=0.1, initial_std=0.1
    )
    xs = np.random.default_rng(0).uniform(-1.0, 1.0, size=(5, 4))
    assert np.allclose(policy.mean(xs), 0.1, atol=0.02)
    assert np.allclose(policy.std(xs), 0.1, atol=0.02)
    plain = MlpPolicy.initialize([4, 8, 8], 3, min_std=0.02)
    assert plain.param_dim == policy.param_dim


@pytest.mark.parametrize(
    "options", [{"output_gain": 0.0}, {"initial_std": 0.01}, {"initial_std": 0.02}]
)
def test_mlp_initialization_rejects_bad_options(options: dict[str, float]) -> None:
    """The gain must be positive and the initial std must exceed the floor."""
    with pytest.raises(ConfigurationError):
        MlpPolicy.initialize([2, 4, 4], 0, min_std=0.02, **options)


@pytest.mark.parametrize("family", ["affine-1", "affine-2", "mlp"])
def test_checkpoint_round_trip(family: str) -> None:
    """A checkpoint rebuilds a policy with identical behaviour."""
    rng = np.random.default_rng(8)
    policy = random_policy(family, rng)
    restored = policy_from_checkpoint(policy.to_checkpoint())
    x = rng.standard_normal((3, policy.action_dim))
    assert type(restored) is type(policy)
    assert np.array_equal(restored.theta, policy.theta)
    assert np.allclose(restored.mean(x), policy.mean(x))


def test_unknown_checkpoint_family() -> None:
    """Unknown families are rejected."""
    with pytest.raises(ConfigurationError):
        policy_from_checkpoint({"family": "transformer", "architecture": {}, "theta": []})


def test_theta_is_immutable() -> None:
    """Policies never change in place."""
    policy = _mlp()
    with pytest.raises(ValueError, match="read-only"):
        policy.theta[0] = 1.0
    updated = policy.with_theta(np.zeros(policy.param_dim))
    assert not np.array_equal(updated.theta, policy.theta)
