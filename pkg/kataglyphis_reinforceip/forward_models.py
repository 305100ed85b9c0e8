"""Forward operators f: R^D -> R^M and noisy observation generation.

The forward model is the only problem-specific plug-in point of the solver.
Every model evaluates batches of inputs (shape ``(n, D)``) so rollouts can be
vectorized over trajectories; single vectors go through :meth:`evaluate`.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from loguru import logger

from .exceptions import ConfigurationError, InputShapeError


NoiseKind = Literal["gaussian-relative", "gaussian-absolute", "shift-then-gaussian"]
NOISE_KINDS: tuple[str, ...] = (
    "gaussian-relative",
    "gaussian-absolute",
    "shift-then-gaussian",
)

TOY_SLOPE_WEIGHT = 0.3


def _check_batch(xs: np.ndarray, dim: int) -> np.ndarray:
    batch = np.asarray(xs, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != dim:
        error_message = f"Expected input batch of shape (n, {dim}), got {batch.shape}"
        logger.error(error_message)
        raise InputShapeError(error_message)
    return batch


class ForwardModel(ABC):
    """Deterministic map from R^D to R^M.

    Subclasses implement :meth:`evaluate_batch`; the result must be total on
    finite input and bit-identical on repeated calls.
    """

    input_dim: int
    output_dim: int

    @abstractmethod
    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate the model row by row on an ``(n, D)`` array."""

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the model on a single vector of length D."""
        vector = np.asarray(x, dtype=float)
        if vector.shape != (self.input_dim,):
            error_message = (
                f"Expected input of shape ({self.input_dim},), got {vector.shape}"
            )
            logger.error(error_message)
            raise InputShapeError(error_message)
        return self.evaluate_batch(vector[np.newaxis, :])[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Alias for :meth:`evaluate`."""
        return self.evaluate(x)

    def describe(self) -> dict[str, object]:
        """Return a JSON-friendly description used in run manifests."""
        return {
            "kind": type(self).__name__,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
        }


class LinearModel(ForwardModel):
    """Linear forward model f(x) = A x."""

    def __init__(self, matrix: np.ndarray) -> None:
        """Wrap an ``(M, D)`` matrix."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2:
            error_message = f"Linear model needs a 2-D matrix, got {matrix.ndim}-D"
            raise ConfigurationError(error_message)
        self.matrix = matrix
        self.output_dim, self.input_dim = matrix.shape

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Return ``xs @ A.T``."""
        return _check_batch(xs, self.input_dim) @ self.matrix.T

    def describe(self) -> dict[str, object]:
        """Include the matrix entries in the description."""
        return {**super().describe(), "matrix": self.matrix.tolist()}


class AutoConvModel(ForwardModel):
    """Trapezoid discretization of the auto-convolution y(t) = int_0^t x(t-s)x(s) ds.

    The grid is t_j = j / (D - 1) on [0, 1]. The shifted argument
    t_j - t_i is resolved as the integer grid index j - i.
    """

    def __init__(self, grid_points: int) -> None:
        """Create the model on ``grid_points`` equidistant points."""
        if grid_points < 2:
            error_message = f"Auto-convolution needs at least 2 grid points, got {grid_points}"
            logger.error(error_message)
            raise ConfigurationError(error_message)
        self.input_dim = grid_points
        self.output_dim = grid_points

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Apply the trapezoid rule to every row; column 0 stays exactly 0."""
        batch = _check_batch(xs, self.input_dim)
        ys = np.zeros_like(batch)
        scale = 1.0 / (self.input_dim - 1)
        for j in range(1, self.input_dim):
            i = np.arange(1, j + 1)
            upper = batch[:, j - i] * batch[:, i]
            lower = batch[:, j - i + 1] * batch[:, i - 1]
            ys[:, j] = scale * (0.5 * (upper + lower)).sum(axis=1)
        return ys


class ToyLossModel(ForwardModel):
    """Scalar toy problem written as a residual map R -> R^2.

    With observation y = 0 the squared residual norm equals
    :func:`toy_scalar_loss`, so the ordinary reward machinery applies.
    """

    input_dim = 1
    output_dim = 2

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Return the rows ``(x^2 - 1, sqrt(0.3) (x - 1))``."""
        x = _check_batch(xs, 1)[:, 0]
        return np.stack(
            [x * x - 1.0, math.sqrt(TOY_SLOPE_WEIGHT) * (x - 1.0)], axis=1
        )


def linear_apply(model: LinearModel, x: np.ndarray) -> np.ndarray:
    """Apply a linear model to one vector."""
    return model.evaluate(x)


def autoconv_forward(model: AutoConvModel, x: np.ndarray) -> np.ndarray:
    """Apply the discretized auto-convolution to one vector."""
    return model.evaluate(x)


def exact_solution(grid_points: int) -> np.ndarray:
    """Sample x(t) = 10 t (1 - t)^2 on the grid t_j = j / (D - 1).

    Args:
        grid_points (int): number of grid points D, at least 2.

    Returns:
        type: np.ndarray
        vector of length D whose first and last entries are exactly 0.

    Raises:
        ConfigurationError
    """
    if grid_points < 2:
        error_message = f"Exact solution needs at least 2 grid points, got {grid_points}"
        raise ConfigurationError(error_message)
    t = np.arange(grid_points, dtype=float) / (grid_points - 1)
    return 10.0 * t * (1.0 - t) ** 2


def toy_scalar_loss(x: float) -> float:
    """Return (x^2 - 1)^2 + 0.3 (x - 1)^2."""
    return (x * x - 1.0) ** 2 + TOY_SLOPE_WEIGHT * (x - 1.0) ** 2


def toy_scalar_loss_derivative(x: float) -> float:
    """Return the derivative 4x^3 - 3.4x - 0.6 of :func:`toy_scalar_loss`."""
    return 4.0 * x**3 - (4.0 - 2.0 * TOY_SLOPE_WEIGHT) * x - 2.0 * TOY_SLOPE_WEIGHT


@dataclass(frozen=True)
class NoiseSpec:
    """How noisy observations are produced from the clean signal."""

    kind: NoiseKind = "gaussian-relative"
    level: float = 0.05
    shift_magnitude: int = 1
    sample_count: int = 100

    def __post_init__(self) -> None:
        """Validate the noise parameters."""
        if self.kind not in NOISE_KINDS:
            error_message = f"Unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}"
            raise ConfigurationError(error_message)
        if not self.level >= 0.0:
            error_message = f"Noise level must be >= 0, got {self.level}"
            raise ConfigurationError(error_message)
        if self.sample_count < 1:
            error_message = f"Sample count K must be >= 1, got {self.sample_count}"
            raise ConfigurationError(error_message)
        if self.shift_magnitude < 0:
            error_message = f"Shift magnitude must be >= 0, got {self.shift_magnitude}"
            raise ConfigurationError(error_message)


@dataclass(frozen=True)
class ObservationSet:
    """K noisy observation vectors of common length M."""

    samples: np.ndarray
    clean: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        """Force a float ``(K, M)`` layout."""
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.ndim != 2 or samples.shape[0] == 0:
            error_message = f"Observations must be a non-empty (K, M) array, got {samples.shape}"
            raise InputShapeError(error_message)
        object.__setattr__(self, "samples", samples)
        if self.clean is not None:
            clean = np.asarray(self.clean, dtype=float)
            if clean.shape != (samples.shape[1],):
                error_message = f"Clean signal shape {clean.shape} does not match M={samples.shape[1]}"
                raise InputShapeError(error_message)
            object.__setattr__(self, "clean", clean)

    @property
    def count(self) -> int:
        """Number of samples K."""
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        """Observation dimension M."""
        return int(self.samples.shape[1])


def shift_signal(signal: np.ndarray, magnitude: int, *, to_left: bool) -> np.ndarray:
    """Shift a signal by ``magnitude`` entries, filling vacated entries with 0."""
    shifted = np.zeros_like(signal)
    if magnitude == 0:
        shifted[:] = signal
    elif magnitude < signal.shape[0]:
        if to_left:
            shifted[:-magnitude] = signal[magnitude:]
        else:
            shifted[magnitude:] = signal[:-magnitude]
    return shifted


def generate_observations(
    model: ForwardModel, x_true: np.ndarray, spec: NoiseSpec, seed: int
) -> ObservationSet:
    """Generate K noisy observations of f(x_true).

    gaussian-relative adds noise with entrywise std ``level * |y_e|``,
    gaussian-absolute uses std ``level``, shift-then-gaussian first shifts
    each copy one way or the other with probability 1/2 and then adds
    relative noise to the shifted copy.

    Args:
        model (ForwardModel): forward operator.
        x_true (np.ndarray): the exact solution x_e.
        spec (NoiseSpec): noise description.
        seed (int): seed of the private generator.

    Returns:
        type: ObservationSet
        samples together with the clean signal y_e.
    """
    rng = np.random.default_rng(seed)
    clean = model.evaluate(x_true)
    count = spec.sample_count

    if spec.kind == "shift-then-gaussian":
        directions = rng.integers(0, 2, size=count)
        base = np.stack(
            [
                shift_signal(clean, spec.shift_magnitude, to_left=bool(direction))
                for direction in directions
            ]
        )
    else:
        base = np.tile(clean, (count, 1))

    if spec.kind == "gaussian-absolute":
        std = np.full_like(base, spec.level)
    else:
        std = spec.level * np.abs(base)

    samples = base + std * rng.standard_normal(base.shape)
    logger.debug(
        "Generated {} observations of dimension {} with {} noise at level {}",
        count,
        clean.shape[0],
        spec.kind,
        spec.level,
    )
    return ObservationSet(samples=samples, clean=clean)
