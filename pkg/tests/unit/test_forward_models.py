"""Unit tests for the forward operators and observation generation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kataglyphis_reinforceip.exceptions import ConfigurationError, InputShapeError
from kataglyphis_reinforceip.forward_models import (
    AutoConvModel,
    LinearModel,
    NoiseSpec,
    ObservationSet,
    ToyLossModel,
    autoconv_forward,
    exact_solution,
    generate_observations,
    linear_apply,
    shift_signal,
    toy_scalar_loss,
    toy_scalar_loss_derivative,
)


finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
signals = st.integers(min_value=2, max_value=12).flatmap(
    lambda size: arrays(np.float64, size, elements=finite)
)


def test_linear_apply_matches_matrix_product() -> None:
    """A linear model returns A x."""
    matrix = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    model = LinearModel(matrix)
    x = np.array([0.5, -1.0])
    assert np.allclose(linear_apply(model, x), matrix @ x)
    assert (model.input_dim, model.output_dim) == (2, 3)


def test_evaluate_rejects_wrong_dimension() -> None:
    """Inputs of the wrong length raise InputShapeError."""
    with pytest.raises(InputShapeError):
        AutoConvModel(4).evaluate(np.ones(3))


def test_autoconv_of_constant_one() -> None:
    """Auto-convolution of x = 1 is y(t) = t on the grid."""
    grid = 9
    y = autoconv_forward(AutoConvModel(grid), np.ones(grid))
    assert np.allclose(y, np.linspace(0.0, 1.0, grid), atol=1e-14)


def test_autoconv_rejects_small_grid() -> None:
    """At least two grid points are required."""
    with pytest.raises(ConfigurationError):
        AutoConvModel(1)


@settings(max_examples=50, deadline=None)
@given(signals, st.floats(min_value=-3.0, max_value=3.0, allow_nan=False))
def test_autoconv_is_quadratic_and_starts_at_zero(x: np.ndarray, scale: float) -> None:
    """f(c x) = c^2 f(x), f(-x) = f(x) and y_0 = 0."""
    model = AutoConvModel(x.shape[0])
    base = model.evaluate(x)
    scaled = model.evaluate(scale * x)
    tolerance = 1e-12 * max(1.0, scale * scale * float(x @ x))
    assert np.allclose(scaled, scale * scale * base, rtol=1e-12, atol=tolerance)
    assert np.array_equal(model.evaluate(-x), base)
    assert base[0] == 0.0


def test_exact_solution_vanishes_at_both_ends() -> None:
    """x_e(t) = 10 t (1 - t)^2 is zero at t = 0 and t = 1."""
    x = exact_solution(64)
    assert x[0] == 0.0
    assert x[-1] == 0.0
    assert np.isclose(x.max(), 10.0 * (1 / 3) * (2 / 3) ** 2, rtol=1e-2)


def test_batch_evaluation_matches_rows() -> None:
    """Batch evaluation equals evaluating every row."""
    rng = np.random.default_rng(3)
    model = AutoConvModel(6)
    xs = rng.standard_normal((5, 6))
    batch = model.evaluate_batch(xs)
    for row in range(5):
        assert np.allclose(batch[row], model.evaluate(xs[row]))


def test_toy_loss_and_derivative() -> None:
    """The toy loss is zero at 1 and its derivative agrees with finite differences."""
    assert toy_scalar_loss(1.0) == 0.0
    x, h = -0.7, 1e-6
    numeric = (toy_scalar_loss(x + h) - toy_scalar_loss(x - h)) / (2 * h)
    assert numeric == pytest.approx(toy_scalar_loss_derivative(x), rel=1e-6)


def test_toy_model_squared_norm_is_the_loss() -> None:
    """||F(x)||^2 of the toy residual map equals the scalar loss."""
    model = ToyLossModel()
    for x in (-1.5, -0.8, 0.0, 2.0):
        residual = model.evaluate(np.array([x]))
        assert float(residual @ residual) == pytest.approx(toy_scalar_loss(x))


def test_noise_spec_validation() -> None:
    """Negative levels and empty sample sets are rejected."""
    with pytest.raises(ConfigurationError):
        NoiseSpec(level=-0.1)
    with pytest.raises(ConfigurationError):
        NoiseSpec(sample_count=0)
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="poisson")  # type: ignore[arg-type]


def test_relative_noise_statistics() -> None:
    """Relative noise has mean y_e and std level * |y_e| per entry."""
    model = AutoConvModel(8)
    x = exact_solution(8)
    observations = generate_observations(model, x, NoiseSpec(level=0.05, sample_count=4000), 11)
    clean = model.evaluate(x)
    assert observations.samples.shape == (4000, 8)
    assert np.array_equal(observations.clean, clean)
    assert np.allclose(observations.samples.mean(axis=0), clean, atol=5e-3 * clean.max())
    assert np.allclose(observations.samples.std(axis=0), 0.05 * np.abs(clean), atol=4e-3 * clean.max())


def test_observations_are_seeded() -> None:
    """Equal seeds give equal observations."""
    model = AutoConvModel(5)
    spec = NoiseSpec(sample_count=3)
    first = generate_observations(model, np.ones(5), spec, 4)
    second = generate_observations(model, np.ones(5), spec, 4)
    assert np.array_equal(first.samples, second.samples)


def test_zero_noise_copies_the_clean_signal() -> None:
    """With level 0 every observation equals f(x_true)."""
    model = LinearModel(np.eye(3))
    observations = generate_observations(
        model, np.arange(3.0), NoiseSpec(kind="gaussian-absolute", level=0.0, sample_count=2), 0
    )
    assert np.array_equal(observations.samples, np.tile(np.arange(3.0), (2, 1)))


def test_shift_signal_fills_with_zeros() -> None:
    """Shifted entries are filled with zeros on the vacated side."""
    signal = np.array([1.0, 2.0, 3.0, 4.0])
    assert shift_signal(signal, 1, to_left=True).tolist() == [2.0, 3.0, 4.0, 0.0]
    assert shift_signal(signal, 1, to_left=False).tolist() == [0.0, 1.0, 2.0, 3.0]
    assert shift_signal(signal, 9, to_left=True).tolist() == [0.0] * 4


def test_shift_then_gaussian_without_noise_yields_shifted_copies() -> None:
    """Every noiseless shifted observation is one of the two shifted signals."""
    model = LinearModel(np.eye(4))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    spec = NoiseSpec(kind="shift-then-gaussian", level=0.0, sample_count=20)
    observations = generate_observations(model, x, spec, 2)
    left = shift_signal(x, 1, to_left=True)
    right = shift_signal(x, 1, to_left=False)
    for row in observations.samples:
        assert np.array_equal(row, left) or np.array_equal(row, right)


def test_observation_set_shape_checks() -> None:
    """A clean signal must match the observation length."""
    with pytest.raises(InputShapeError):
        ObservationSet(np.ones((2, 3)), clean=np.ones(2))
    assert ObservationSet(np.ones(3)).count == 1
