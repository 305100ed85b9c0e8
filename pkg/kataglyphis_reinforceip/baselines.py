"""Closed-form oracles for the linear examples.

Tikhonov and pseudo-inverse solutions, the B matrix of the affine policy
family, invariant laws of the induced Markov chains, the optimum of the
second linear example, the Landweber family and the exact objective of the
first linear example. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
from loguru import logger
from scipy import linalg

from .exceptions import ConfigurationError, InputShapeError, NumericError, RankDeficiencyError

if TYPE_CHECKING:
    from .policy import GaussianPolicy


POWER_ITERATIONS = 100
POWER_TOLERANCE = 1e-10
SVD_CUTOFF = 1e-12
SPD_PIVOT_CUTOFF = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianDist:
    """Multivariate normal law N(mean, cov) with cov symmetric PSD."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        """Check symmetry and semi-definiteness of the covariance."""
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            error_message = f"Covariance shape {cov.shape} does not match mean length {mean.shape[0]}"
            raise InputShapeError(error_message)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            error_message = "Covariance must be symmetric"
            raise NumericError(error_message)
        if mean.shape[0] and np.linalg.eigvalsh(cov).min() < -1e-10:
            error_message = "Covariance must be positive semi-definite"
            raise NumericError(error_message)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _as_matrix(matrix: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(matrix, dtype=float))


def spectral_norm(
    matrix: np.ndarray,
    iterations: int = POWER_ITERATIONS,
    tolerance: float = POWER_TOLERANCE,
) -> float:
    """Estimate the largest singular value of ``matrix`` by power iteration on A^T A."""
    a = _as_matrix(matrix)
    gram = a.T @ a
    vector = np.random.default_rng(0).standard_normal(gram.shape[0])
    vector /= np.linalg.norm(vector)
    eigenvalue = 0.0
    for _ in range(iterations):
        image = gram @ vector
        norm = float(np.linalg.norm(image))
        if norm == 0.0:
            return 0.0
        vector = image / norm
        if abs(norm - eigenvalue) <= tolerance * max(norm, 1.0):
            eigenvalue = norm
            break
        eigenvalue = norm
    return float(np.sqrt(eigenvalue))


def omega_upper_bound(matrix: np.ndarray, epsilon: float) -> float:
    """Return 1 / (3 (||A||^2 + eps)), the open upper end of the admissible step."""
    return 1.0 / (3.0 * (spectral_norm(matrix) ** 2 + epsilon))


def build_B(matrix: np.ndarray, omega: float, epsilon: float) -> np.ndarray:  # noqa: N802
    """Return B = omega (A^T A + eps I).

    Args:
        matrix (np.ndarray): forward matrix A of shape (M, D).
        omega (float): step, must lie in (0, 1 / (3 (||A||^2 + eps))).
        epsilon (float): nonnegative shift.

    Returns:
        type: np.ndarray
        the (D, D) matrix B; ||I - B|| < 1 holds for admissible omega.

    Raises:
        ConfigurationError
    """
    a = _as_matrix(matrix)
    if epsilon < 0.0:
        error_message = f"epsilon must be >= 0, got {epsilon}"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    bound = omega_upper_bound(a, epsilon)
    if not 0.0 < omega < bound:
        error_message = f"omega={omega} outside the admissible interval (0, {bound:.6g})"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    return omega * (a.T @ a + epsilon * np.eye(a.shape[1]))


def tikhonov_solution(matrix: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Solve (A^T A + alpha I) theta = A^T y with a Cholesky factorization.

    Raises:
        ConfigurationError: alpha is negative.
        RankDeficiencyError: the normal equations are not positive definite.
    """
    a = _as_matrix(matrix)
    if alpha < 0.0:
        error_message = f"alpha must be >= 0, got {alpha}"
        raise ConfigurationError(error_message)
    normal = a.T @ a + alpha * np.eye(a.shape[1])
    try:
        factor, lower = linalg.cho_factor(normal, lower=True)
    except linalg.LinAlgError as error:
        error_message = f"Normal equations are singular at alpha={alpha}: {error}"
        logger.error(error_message)
        raise RankDeficiencyError(error_message) from error
    pivots = np.abs(np.diag(factor))
    if pivots.min() <= SPD_PIVOT_CUTOFF * pivots.max():
        error_message = f"Normal equations are numerically singular at alpha={alpha}"
        logger.error(error_message)
        raise RankDeficiencyError(error_message)
    return linalg.cho_solve((factor, lower), a.T @ np.asarray(y, dtype=float))


def pseudo_inverse_solution(matrix: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution A^- y via a truncated SVD."""
    a = _as_matrix(matrix)
    u, singular, vt = linalg.svd(a, full_matrices=False)
    if singular.size == 0 or singular[0] == 0.0:
        return np.zeros(a.shape[1])
    keep = singular > SVD_CUTOFF * singular[0]
    coefficients = (u[:, keep].T @ np.asarray(y, dtype=float)) / singular[keep]
    return vt[keep].T @ coefficients


def invariant_dist_example1(theta: np.ndarray, sigma: np.ndarray) -> GaussianDist:
    """The chain x_{t+1} = x_t + a_t under N(theta - x, Sigma) is N(theta, Sigma) after one step."""
    sigma = _as_matrix(sigma)
    try:
        linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as error:
        error_message = f"Sigma is not positive definite: {error}"
        raise NumericError(error_message) from error
    return GaussianDist(np.ravel(theta), sigma)


def invariant_dist_example2(
    theta: np.ndarray, b_matrix: np.ndarray, sigma: float
) -> GaussianDist:
    """Return N(B^{-1} theta, sigma^2 (2B - B^2)^{-1}).

    Raises:
        ConfigurationError: ||I - B|| >= 1, the chain has no invariant law.
        NumericError: B or 2B - B^2 is singular.
    """
    b = _as_matrix(b_matrix)
    identity = np.eye(b.shape[0])
    if spectral_norm(identity - b) >= 1.0:
        error_message = "The chain needs ||I - B|| < 1 to have an invariant law"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    try:
        mean = linalg.solve(b, np.ravel(theta))
        cov = sigma**2 * linalg.inv(2.0 * b - b @ b)
    except linalg.LinAlgError as error:
        error_message = f"B is singular: {error}"
        logger.error(error_message)
        raise NumericError(error_message) from error
    return GaussianDist(mean, 0.5 * (cov + cov.T))


def example2_theta_star(
    matrix: np.ndarray,
    y: np.ndarray,
    alpha: float,
    b_matrix: np.ndarray,
    form: Literal["normal-equations", "factored"] = "normal-equations",
) -> np.ndarray:
    """Optimal theta for the affine policy N(theta - B x, sigma^2 I).

    ``normal-equations`` solves (B^{-1} A^T A B^{-1} + alpha B^{-2}) theta = B^{-1} A^T y;
    ``factored`` returns B (A^T A + alpha I)^{-1} A^T y. Both agree for invertible B.
    """
    a = _as_matrix(matrix)
    b = _as_matrix(b_matrix)
    if form == "factored":
        return b @ tikhonov_solution(a, y, alpha)
    try:
        b_inv = linalg.inv(b)
        system = b_inv @ a.T @ a @ b_inv + alpha * b_inv @ b_inv
        return linalg.solve(system, b_inv @ a.T @ np.asarray(y, dtype=float))
    except linalg.LinAlgError as error:
        error_message = f"Singular system for the optimal theta: {error}"
        logger.error(error_message)
        raise NumericError(error_message) from error


def landweber_iterate(
    matrix: np.ndarray,
    y: np.ndarray,
    x: np.ndarray,
    omega: float,
    epsilon: float,
    alpha: float,
    sigma: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One step x + omega (A^T A + eps I) [(A^T A + alpha I)^{-1} A^T y - x] + sigma z.

    With eps = alpha = sigma = 0 this is the conventional Landweber step
    x + omega A^T (y - A x); with sigma != 0 the stochastic variant.

    Raises:
        ConfigurationError: omega is inadmissible for eps > 0, or sigma > 0 without rng.
    """
    a = _as_matrix(matrix)
    x = np.asarray(x, dtype=float)
    if epsilon > 0.0:
        b = build_B(a, omega, epsilon)
    else:
        b = omega * (a.T @ a)
    step = x + b @ (tikhonov_solution(a, y, alpha) - x)
    if sigma == 0.0:
        return step
    if rng is None:
        error_message = "A generator is required when sigma > 0"
        raise ConfigurationError(error_message)
    return step + sigma * rng.standard_normal(x.shape[0])


def closed_form_JT(  # noqa: N802
    matrix: np.ndarray,
    y: np.ndarray,
    theta: np.ndarray,
    sigma: np.ndarray,
    alpha: float,
    horizon: int,
    x0: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Exact performance J_T and its theta-gradient for the first linear example.

    Uses the negative reward -(||A(x + a) - y||^2 + alpha ||x||^2), a fixed start
    x0 and the fact that every later state is distributed N(theta, Sigma).

    Returns:
        type: tuple[float, np.ndarray]
        (value, gradient) with
        value = -[||A theta - y||^2 + tr(A Sigma A^T) + (alpha / T)((T - 1)(||theta||^2 + tr Sigma) + ||x0||^2)].
    """
    a = _as_matrix(matrix)
    sigma = _as_matrix(sigma)
    theta = np.asarray(theta, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    residual = a @ theta - np.asarray(y, dtype=float)
    spread = float(np.trace(a @ sigma @ a.T))
    later = (horizon - 1) * (float(theta @ theta) + float(np.trace(sigma)))
    value = -(float(residual @ residual) + spread + alpha / horizon * (later + float(x0 @ x0)))
    gradient = -2.0 * a.T @ residual - 2.0 * alpha * (horizon - 1) / horizon * theta
    return value, gradient


def objective_limit_example1(
    matrix: np.ndarray,
    y: np.ndarray,
    theta: np.ndarray,
    sigma: np.ndarray,
    alpha: float,
) -> float:
    """Return -E_{x ~ N(theta, Sigma)}[||A x - y||^2 + alpha ||x||^2], the T -> infinity value of J_T."""
    a = _as_matrix(matrix)
    sigma = _as_matrix(sigma)
    theta = np.asarray(theta, dtype=float)
    residual = a @ theta - np.asarray(y, dtype=float)
    return -(
        float(residual @ residual)
        + float(np.trace(a @ sigma @ a.T))
        + alpha * (float(theta @ theta) + float(np.trace(sigma)))
    )


def simulate_chain(
    policy: GaussianPolicy,
    x0: np.ndarray,
    steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Run x_{t+1} = x_t + a_t, a_t ~ pi(. | x_t), and return the ``(steps, D)`` visited states after x0."""
    state = np.asarray(x0, dtype=float).reshape(1, -1)
    noise = rng.standard_normal((steps, policy.action_dim))
    states = np.empty((steps, policy.action_dim))
    for step in range(steps):
        state = state + policy.sample(state, noise[step : step + 1])
        states[step] = state[0]
    return states
