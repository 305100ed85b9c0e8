"""Gaussian action-selection rules pi_theta(. | x).

Three families share one interface:

* :class:`AffinePolicyI`  - N(theta - x, Sigma) with a fixed SPD Sigma.
* :class:`AffinePolicyII` - N(theta - B x, sigma^2 I) with B = omega (A^T A + eps I).
* :class:`MlpPolicy`      - mean and std read off a ReLU network.

All methods take batches of states ``xs`` of shape ``(n, D)`` and return
batched results. Policies are immutable; :meth:`GaussianPolicy.with_theta`
returns an updated copy.

MLP parameter layout (the flat theta vector): for every dense layer in
order, the weight matrix of shape ``(n_out, n_in)`` in row-major order,
followed by its bias vector of length ``n_out``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy import linalg
from scipy.special import expit

from .baselines import build_B
from .exceptions import ConfigurationError, InputShapeError, NumericError


LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_MIN_STD = 1e-6
DEFAULT_MA_WINDOW = 3


def softplus(z: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable log(1 + exp(z)); strictly positive for finite z."""
    return np.logaddexp(0.0, z)


def softplus_inverse(value: float) -> float:
    """Return z with softplus(z) = value (value > 0)."""
    if value <= 0.0:
        error_message = f"softplus only takes positive values, got {value}"
        raise ConfigurationError(error_message)
    return float(value + math.log(-math.expm1(-value)))


def moving_average_matrix(size: int, window: int) -> np.ndarray:
    """Return the ``(size, size)`` matrix of the centered moving average.

    Near the boundaries the window shrinks to the entries that exist.
    """
    if window < 1 or window % 2 == 0:
        error_message = f"Moving-average window must be a positive odd integer, got {window}"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    half = window // 2
    matrix = np.zeros((size, size))
    for row in range(size):
        lo, hi = max(0, row - half), min(size, row + half + 1)
        matrix[row, lo:hi] = 1.0 / (hi - lo)
    return matrix


def moving_average(z: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average of a vector (or of each row of a batch)."""
    values = np.asarray(z, dtype=float)
    matrix = moving_average_matrix(values.shape[-1], window)
    return values @ matrix.T


def _as_states(xs: np.ndarray, dim: int) -> np.ndarray:
    batch = np.asarray(xs, dtype=float)
    if batch.ndim == 1:
        batch = batch[np.newaxis, :]
    if batch.ndim != 2 or batch.shape[1] != dim:
        error_message = f"Expected states of shape (n, {dim}), got {np.shape(xs)}"
        logger.error(error_message)
        raise InputShapeError(error_message)
    return batch


def _frozen(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


class GaussianPolicy(ABC):
    """Common interface of the Gaussian policy families."""

    family: str = ""

    def __init__(self, theta: np.ndarray, action_dim: int) -> None:
        """Store the flat parameter vector as an immutable array."""
        theta = _frozen(np.ravel(theta))
        if not np.all(np.isfinite(theta)):
            error_message = "Policy parameters must be finite"
            raise NumericError(error_message)
        self.theta = theta
        self.action_dim = action_dim

    @property
    def param_dim(self) -> int:
        """Number d of trainable parameters."""
        return int(self.theta.shape[0])

    @property
    def trainable(self) -> bool:
        """Whether the log-density (and hence REINFORCE) is defined."""
        return True

    @abstractmethod
    def with_theta(self, theta: np.ndarray) -> GaussianPolicy:
        """Return a copy of this policy with new parameters."""

    @abstractmethod
    def mean(self, xs: np.ndarray) -> np.ndarray:
        """Mean action for every state of the batch, shape ``(n, D)``."""

    @abstractmethod
    def sample(self, xs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Return ``mean(x) + L u`` for standard normal rows ``u`` of ``noise``."""

    @abstractmethod
    def log_density(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Exact Gaussian log-density of each action, shape ``(n,)``."""

    @abstractmethod
    def score(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-sample gradient of the log-density w.r.t. theta, shape ``(n, d)``."""

    def weighted_score(
        self, xs: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """Return sum_i weights_i * score(x_i, a_i)."""
        return np.asarray(weights, dtype=float) @ self.score(xs, actions)

    @abstractmethod
    def architecture(self) -> dict[str, object]:
        """Everything besides theta needed to rebuild the policy."""

    def to_checkpoint(self) -> dict[str, object]:
        """Self-describing dictionary with architecture header and flat theta."""
        return {
            "family": self.family,
            "architecture": self.architecture(),
            "theta": self.theta.tolist(),
        }


class AffinePolicyI(GaussianPolicy):
    """pi_theta(. | x) = N(theta - x, Sigma); the next state is N(theta, Sigma)."""

    family = "affine-1"

    def __init__(self, theta: np.ndarray, sigma: np.ndarray) -> None:
        """Build the policy; Sigma must be symmetric positive definite."""
        theta = np.ravel(np.asarray(theta, dtype=float))
        super().__init__(theta, theta.shape[0])
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape != (self.action_dim, self.action_dim):
            error_message = f"Sigma must be {self.action_dim}x{self.action_dim}, got {sigma.shape}"
            raise InputShapeError(error_message)
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * np.abs(sigma).max()):
            error_message = "Sigma must be symmetric"
            raise ConfigurationError(error_message)
        try:
            self._chol = _frozen(linalg.cholesky(sigma, lower=True))
        except linalg.LinAlgError as error:
            error_message = f"Sigma is not positive definite: {error}"
            logger.error(error_message)
            raise NumericError(error_message) from error
        self.sigma = _frozen(sigma)
        self._log_det = 2.0 * float(np.log(np.diag(self._chol)).sum())

    def with_theta(self, theta: np.ndarray) -> AffinePolicyI:
        """Return a copy with new theta and the same Sigma."""
        return AffinePolicyI(theta, self.sigma)

    def mean(self, xs: np.ndarray) -> np.ndarray:
        """Return theta - x for each row."""
        return self.theta - _as_states(xs, self.action_dim)

    def sample(self, xs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Draw actions from N(theta - x, Sigma) given standard normal noise."""
        return self.mean(xs) + np.asarray(noise, dtype=float) @ self._chol.T

    def _residual(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return _as_states(actions, self.action_dim) - self.mean(xs)

    def log_density(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Multivariate normal log-density using the Cholesky factor of Sigma."""
        residual = self._residual(xs, actions)
        whitened = linalg.solve_triangular(self._chol, residual.T, lower=True)
        quad = (whitened**2).sum(axis=0)
        return -0.5 * (self.action_dim * LOG_2PI + self._log_det + quad)

    def score(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Sigma^{-1} (a - (theta - x)) for each sample."""
        residual = self._residual(xs, actions)
        return linalg.cho_solve((self._chol, True), residual.T).T

    def weighted_score(
        self, xs: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """Sigma^{-1} applied once to the weighted residual sum."""
        residual = np.asarray(weights, dtype=float) @ self._residual(xs, actions)
        return linalg.cho_solve((self._chol, True), residual)

    def architecture(self) -> dict[str, object]:
        """Return Sigma."""
        return {"sigma": self.sigma.tolist()}


class AffinePolicyII(GaussianPolicy):
    """pi_theta(. | x) = N(theta - B x, sigma^2 I)."""

    family = "affine-2"

    def __init__(self, theta: np.ndarray, b_matrix: np.ndarray, sigma: float) -> None:
        """Build the policy from a square B and a scalar std sigma >= 0."""
        theta = np.ravel(np.asarray(theta, dtype=float))
        super().__init__(theta, theta.shape[0])
        b_matrix = np.atleast_2d(np.asarray(b_matrix, dtype=float))
        if b_matrix.shape != (self.action_dim, self.action_dim):
            error_message = f"B must be {self.action_dim}x{self.action_dim}, got {b_matrix.shape}"
            raise InputShapeError(error_message)
        if sigma < 0.0:
            error_message = f"sigma must be >= 0, got {sigma}"
            raise ConfigurationError(error_message)
        self.b_matrix = _frozen(b_matrix)
        self.sigma = float(sigma)

    @classmethod
    def from_problem(
        cls,
        matrix: np.ndarray,
        omega: float,
        epsilon: float,
        theta: np.ndarray,
        sigma: float,
    ) -> AffinePolicyII:
        """Build B = omega (A^T A + eps I) with the admissibility check on omega."""
        return cls(theta, build_B(matrix, omega, epsilon), sigma)

    @property
    def trainable(self) -> bool:
        """The log-density needs sigma > 0."""
        return self.sigma > 0.0

    def with_theta(self, theta: np.ndarray) -> AffinePolicyII:
        """Return a copy with new theta and the same B, sigma."""
        return AffinePolicyII(theta, self.b_matrix, self.sigma)

    def mean(self, xs: np.ndarray) -> np.ndarray:
        """Return theta - B x for each row."""
        return self.theta - _as_states(xs, self.action_dim) @ self.b_matrix.T

    def sample(self, xs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Draw actions; with sigma = 0 the action is the mean."""
        return self.mean(xs) + self.sigma * np.asarray(noise, dtype=float)

    def _variance(self) -> float:
        if self.sigma <= 0.0:
            error_message = "Log-density undefined for sigma = 0"
            logger.error(error_message)
            raise NumericError(error_message)
        return self.sigma**2

    def log_density(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Isotropic normal log-density."""
        variance = self._variance()
        residual = _as_states(actions, self.action_dim) - self.mean(xs)
        return -0.5 * (
            self.action_dim * (LOG_2PI + math.log(variance))
            + (residual**2).sum(axis=1) / variance
        )

    def score(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """(a - (theta - B x)) / sigma^2 for each sample."""
        variance = self._variance()
        return (_as_states(actions, self.action_dim) - self.mean(xs)) / variance

    def architecture(self) -> dict[str, object]:
        """Return B and sigma."""
        return {"b_matrix": self.b_matrix.tolist(), "sigma": self.sigma}


@dataclass(frozen=True)
class _Layer:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class _ForwardCache:
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    output: np.ndarray


class MlpPolicy(GaussianPolicy):
    """Gaussian policy whose mean and std come from a ReLU network.

    The network maps x in R^D to [z1, z2] in R^{2D}; the mean is the moving
    average of z1 and the std is softplus(z2) + min_std.
    """

    family = "mlp"

    def __init__(
        self,
        layer_sizes: Sequence[int],
        theta: np.ndarray,
        min_std: float = DEFAULT_MIN_STD,
        ma_window: int = DEFAULT_MA_WINDOW,
    ) -> None:
        """Build the policy from its architecture and a flat parameter vector."""
        sizes = [int(size) for size in layer_sizes]
        if len(sizes) < 2 or any(size < 1 for size in sizes):
            error_message = f"layer_sizes needs >= 2 positive entries, got {sizes}"
            raise ConfigurationError(error_message)
        if sizes[-1] != 2 * sizes[0]:
            error_message = f"Output layer must have 2*D = {2 * sizes[0]} units, got {sizes[-1]}"
            raise ConfigurationError(error_message)
        if min_std <= 0.0:
            error_message = f"min_std must be positive, got {min_std}"
            raise ConfigurationError(error_message)
        expected = self.count_parameters(sizes)
        if np.size(theta) != expected:
            error_message = f"theta has {np.size(theta)} entries, architecture needs {expected}"
            raise InputShapeError(error_message)
        super().__init__(theta, sizes[0])
        self.layer_sizes = tuple(sizes)
        self.min_std = float(min_std)
        self.ma_window = int(ma_window)
        self._ma = _frozen(moving_average_matrix(sizes[0], self.ma_window))
        self._layers = self._unpack(self.theta)

    @staticmethod
    def count_parameters(layer_sizes: Sequence[int]) -> int:
        """Number of weights and biases of a dense network."""
        return sum(
            n_out * n_in + n_out
            for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:], strict=True)
        )

    @classmethod
    def initialize(
        cls,
        layer_sizes: Sequence[int],
        seed: int,
        min_std: float = DEFAULT_MIN_STD,
        ma_window: int = DEFAULT_MA_WINDOW,
        *,
        output_gain: float = 1.0,
        mean_bias: float = 0.0,
        initial_std: float | None = None,
    ) -> MlpPolicy:
        """Fan-based uniform initialization, seeded.

        Args:
            layer_sizes (Sequence[int]): D, hidden sizes, 2D.
            seed (int): seed of the weight generator.
            min_std (float): floor added to the softplus std.
            ma_window (int): moving-average window of the mean head.
            output_gain (float): factor on the output-layer weights; a small
                gain starts the policy close to state independent.
            mean_bias (float): initial bias of the mean head, so the initial
                mean action is roughly ``mean_bias`` in every entry.
            initial_std (float | None): initial std of every action entry;
                None leaves the std bias at zero.

        Returns:
            type: MlpPolicy

        Raises:
            ConfigurationError
        """
        sizes = [int(size) for size in layer_sizes]
        if not output_gain > 0.0:
            error_message = f"output_gain must be > 0, got {output_gain}"
            raise ConfigurationError(error_message)
        std_bias = 0.0
        if initial_std is not None:
            if not initial_std > min_std:
                error_message = f"initial_std must exceed min_std {min_std}, got {initial_std}"
                logger.error(error_message)
                raise ConfigurationError(error_message)
            std_bias = softplus_inverse(initial_std - min_std)
        rng = np.random.default_rng(seed)
        chunks: list[np.ndarray] = []
        last = len(sizes) - 2
        for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:], strict=True)):
            limit = math.sqrt(6.0 / (n_in + n_out))
            weights = rng.uniform(-limit, limit, size=n_out * n_in)
            bias = np.zeros(n_out)
            if index == last:
                weights *= output_gain
                half = n_out // 2
                bias[:half] = mean_bias
                bias[half:] = std_bias
            chunks.extend([weights, bias])
        return cls(sizes, np.concatenate(chunks), min_std, ma_window)

    def _unpack(self, theta: np.ndarray) -> list[_Layer]:
        layers = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:], strict=True):
            weight = theta[offset : offset + n_out * n_in].reshape(n_out, n_in)
            offset += n_out * n_in
            bias = theta[offset : offset + n_out]
            offset += n_out
            layers.append(_Layer(weight, bias))
        return layers

    def with_theta(self, theta: np.ndarray) -> MlpPolicy:
        """Return a copy with new weights."""
        return MlpPolicy(self.layer_sizes, theta, self.min_std, self.ma_window)

    def _forward(self, xs: np.ndarray) -> _ForwardCache:
        hidden = _as_states(xs, self.action_dim)
        inputs, pre_activations = [], []
        last = len(self._layers) - 1
        for index, layer in enumerate(self._layers):
            inputs.append(hidden)
            pre = hidden @ layer.weight.T + layer.bias
            pre_activations.append(pre)
            hidden = pre if index == last else np.maximum(pre, 0.0)
        return _ForwardCache(inputs, pre_activations, hidden)

    def network_output(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return the raw heads (z1, z2) for a batch of states."""
        output = self._forward(xs).output
        return output[:, : self.action_dim], output[:, self.action_dim :]

    def _heads(self, output: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z1, z2 = output[:, : self.action_dim], output[:, self.action_dim :]
        return z1 @ self._ma.T, softplus(z2) + self.min_std

    def mean(self, xs: np.ndarray) -> np.ndarray:
        """Moving average of the first output head."""
        return self._heads(self._forward(xs).output)[0]

    def std(self, xs: np.ndarray) -> np.ndarray:
        """Entrywise std softplus(z2) + min_std."""
        return self._heads(self._forward(xs).output)[1]

    def sample(self, xs: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Draw actions from the diagonal Gaussian."""
        mean, std = self._heads(self._forward(xs).output)
        return mean + std * np.asarray(noise, dtype=float)

    def log_density(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Diagonal Gaussian log-density."""
        mean, std = self._heads(self._forward(xs).output)
        residual = _as_states(actions, self.action_dim) - mean
        return -0.5 * (
            self.action_dim * LOG_2PI
            + 2.0 * np.log(std).sum(axis=1)
            + ((residual / std) ** 2).sum(axis=1)
        )

    def _output_gradient(
        self, cache: _ForwardCache, actions: np.ndarray
    ) -> np.ndarray:
        output = cache.output
        mean, std = self._heads(output)
        residual = _as_states(actions, self.action_dim) - mean
        grad_mean = residual / std**2
        grad_std = -1.0 / std + residual**2 / std**3
        grad_z1 = grad_mean @ self._ma
        grad_z2 = grad_std * expit(output[:, self.action_dim :])
        return np.concatenate([grad_z1, grad_z2], axis=1)

    def _backward(
        self, cache: _ForwardCache, grad_output: np.ndarray, *, per_sample: bool
    ) -> np.ndarray:
        chunks: list[np.ndarray] = []
        grad = grad_output
        for index in reversed(range(len(self._layers))):
            layer = self._layers[index]
            if index != len(self._layers) - 1:
                grad = grad * (cache.pre_activations[index] > 0.0)
            inputs = cache.inputs[index]
            if per_sample:
                grad_weight = np.einsum("no,ni->noi", grad, inputs).reshape(
                    grad.shape[0], -1
                )
                chunks.append(np.concatenate([grad_weight, grad], axis=1))
            else:
                chunks.append(np.concatenate([(grad.T @ inputs).ravel(), grad.sum(axis=0)]))
            grad = grad @ layer.weight
        return np.concatenate(chunks[::-1], axis=-1)

    def score(self, xs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Per-sample reverse-mode gradient, shape ``(n, d)``."""
        cache = self._forward(xs)
        return self._backward(cache, self._output_gradient(cache, actions), per_sample=True)

    def weighted_score(
        self, xs: np.ndarray, actions: np.ndarray, weights: np.ndarray
    ) -> np.ndarray:
        """One reverse pass with the sample weights folded into the output gradient."""
        cache = self._forward(xs)
        grad_output = self._output_gradient(cache, actions)
        grad_output = grad_output * np.asarray(weights, dtype=float)[:, np.newaxis]
        return self._backward(cache, grad_output, per_sample=False)

    def architecture(self) -> dict[str, object]:
        """Return layer sizes, std floor and moving-average window."""
        return {
            "layer_sizes": list(self.layer_sizes),
            "min_std": self.min_std,
            "ma_window": self.ma_window,
        }


def policy_from_checkpoint(checkpoint: dict[str, object]) -> GaussianPolicy:
    """Rebuild a policy from :meth:`GaussianPolicy.to_checkpoint` output."""
    family = checkpoint.get("family")
    architecture = checkpoint.get("architecture", {})
    theta = np.asarray(checkpoint.get("theta"), dtype=float)
    if not isinstance(architecture, dict):
        error_message = "Checkpoint architecture must be a mapping"
        raise ConfigurationError(error_message)
    if family == AffinePolicyI.family:
        return AffinePolicyI(theta, np.asarray(architecture["sigma"]))
    if family == AffinePolicyII.family:
        return AffinePolicyII(
            theta, np.asarray(architecture["b_matrix"]), float(architecture["sigma"])
        )
    if family == MlpPolicy.family:
        return MlpPolicy(
            architecture["layer_sizes"],
            theta,
            float(architecture["min_std"]),
            int(architecture["ma_window"]),
        )
    error_message = f"Unknown policy family {family!r}"
    raise ConfigurationError(error_message)


def mlp_forward(policy: MlpPolicy, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw network heads (z1, z2) for a single state."""
    z1, z2 = policy.network_output(x)
    return z1[0], z2[0]


def sample_action(
    policy: GaussianPolicy, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one action a ~ pi_theta(. | x)."""
    noise = rng.standard_normal((1, policy.action_dim))
    return policy.sample(x, noise)[0]


def log_density(policy: GaussianPolicy, x: np.ndarray, a: np.ndarray) -> float:
    """Log-density of one action."""
    return float(policy.log_density(x, a)[0])


def grad_log_density(policy: GaussianPolicy, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Gradient of :func:`log_density` with respect to the flat theta."""
    return policy.score(x, a)[0]
