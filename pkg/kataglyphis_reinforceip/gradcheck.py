"""Self-checks of the analytic gradients.

* score functions of every policy family against central finite differences
  of the log-density,
* the exact objective of the first linear example against finite differences,
* the REINFORCE estimator mean against that exact gradient.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from functools import partial

import numpy as np
from loguru import logger

from .baselines import closed_form_JT
from .forward_models import LinearModel, ObservationSet
from .mdp import InitStateDist, RewardEnv, RewardSpec, rollout_batch
from .policy import AffinePolicyI, AffinePolicyII, GaussianPolicy, MlpPolicy


FD_STEP = 1e-6
RELATIVE_TOLERANCE = 1e-5
# |g - fd| / max(|g|, |fd|, floor): below the floor the check is absolute
ABSOLUTE_FLOOR = 1e-3
POLICY_FAMILIES = ("affine-1", "affine-2", "mlp")


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one check."""

    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        """Whether the error stayed within tolerance."""
        return bool(self.max_error < self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest coordinate-wise relative error with an absolute floor."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABSOLUTE_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def central_difference(
    function: Callable[[np.ndarray], float], point: np.ndarray, step: float = FD_STEP
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    gradient = np.empty_like(point)
    for index in range(point.shape[0]):
        shift = np.zeros_like(point)
        shift[index] = step
        gradient[index] = (function(point + shift) - function(point - shift)) / (2.0 * step)
    return gradient


def _log_density_at(
    theta: np.ndarray, *, policy: GaussianPolicy, x: np.ndarray, a: np.ndarray
) -> float:
    return float(policy.with_theta(theta).log_density(x, a)[0])


def _objective_at(
    theta: np.ndarray,
    *,
    matrix: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray,
    alpha: float,
    horizon: int,
    x0: np.ndarray,
) -> float:
    return closed_form_JT(matrix, y, theta, sigma, alpha, horizon, x0)[0]


def random_policy(family: str, rng: np.random.Generator) -> GaussianPolicy:
    """A small random policy of the given family."""
    dim = int(rng.integers(1, 4))
    theta = rng.standard_normal(dim)
    if family == "affine-1":
        factor = rng.standard_normal((dim, dim))
        return AffinePolicyI(theta, factor @ factor.T + 0.5 * np.eye(dim))
    if family == "affine-2":
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        b_matrix = q @ np.diag(rng.uniform(0.1, 0.9, size=dim)) @ q.T
        return AffinePolicyII(theta, b_matrix, float(rng.uniform(0.5, 2.0)))
    hidden = int(rng.integers(2, 6))
    sizes = [dim, hidden, 2 * dim]
    window = int(rng.choice([1, 3]))
    weights = 0.5 * rng.standard_normal(MlpPolicy.count_parameters(sizes))
    return MlpPolicy(sizes, weights, ma_window=window)


def check_policy_family(
    family: str, instances: int = 50, seed: int = 0, *, inject_bug: bool = False
) -> CheckResult:
    """Score function versus finite differences over random (policy, x, a) triples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        policy = random_policy(family, rng)
        x = rng.standard_normal((1, policy.action_dim))
        a = policy.sample(x, rng.standard_normal((1, policy.action_dim)))
        analytic = policy.score(x, a)[0].copy()
        if inject_bug:
            analytic[0] = analytic[0] * 1.01 + 1e-2

        numeric = central_difference(
            partial(_log_density_at, policy=policy, x=x, a=a), np.array(policy.theta)
        )
        worst = max(worst, relative_error(analytic, numeric))
    return CheckResult(f"score[{family}]", worst, RELATIVE_TOLERANCE)


def check_objective_gradient(seed: int = 0, instances: int = 20) -> CheckResult:
    """Exact J_T gradient of the first linear example versus finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        rows, dim = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        matrix = rng.standard_normal((rows, dim))
        y = rng.standard_normal(rows)
        factor = rng.standard_normal((dim, dim))
        sigma = factor @ factor.T + np.eye(dim)
        alpha = float(rng.uniform(0.0, 1.0))
        horizon = int(rng.integers(1, 10))
        x0 = rng.standard_normal(dim)

        theta = rng.standard_normal(dim)
        analytic = closed_form_JT(matrix, y, theta, sigma, alpha, horizon, x0)[1]
        value = partial(
            _objective_at, matrix=matrix, y=y, sigma=sigma, alpha=alpha, horizon=horizon, x0=x0
        )
        numeric = central_difference(value, theta, 1e-4)
        error = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1.0)
        worst = max(worst, float(error))
    return CheckResult("closed-form J_T gradient", worst, 1e-8)


def estimator_z_scores(
    policy: GaussianPolicy,
    env: RewardEnv,
    init: InitStateDist,
    horizon: int,
    draws: int,
    target: np.ndarray,
    seed: int,
) -> np.ndarray:
    """Standardized deviation of the mean single-trajectory estimate from ``target``."""
    batch = rollout_batch(policy, init, horizon, draws, env, np.random.default_rng(seed))
    dim = policy.action_dim
    scores = policy.score(batch.states.reshape(-1, dim), batch.actions.reshape(-1, dim))
    per_trajectory = batch.returns[:, np.newaxis] * scores.reshape(draws, horizon, -1).sum(axis=1)
    mean = per_trajectory.mean(axis=0)
    stderr = per_trajectory.std(axis=0, ddof=1) / np.sqrt(draws)
    return (mean - target) / stderr


def check_estimator_unbiased(seed: int = 0, draws: int = 20000) -> CheckResult:
    """One-dimensional first linear example with T = 2: estimator mean within 4 standard errors."""
    matrix = np.array([[1.5]])
    y = np.array([0.5])
    theta = np.array([0.3])
    sigma = np.array([[0.25]])
    alpha, horizon, x0 = 0.2, 2, np.zeros(1)
    env = RewardEnv(
        RewardSpec(form="negative", alpha=alpha, regularizer="squared-norm"),
        LinearModel(matrix),
        ObservationSet(y[np.newaxis, :]),
    )
    policy = AffinePolicyI(theta, sigma)
    target = closed_form_JT(matrix, y, theta, sigma, alpha, horizon, x0)[1]
    z = estimator_z_scores(policy, env, InitStateDist.fixed(x0), horizon, draws, target, seed)
    return CheckResult("REINFORCE estimator bias (z-score)", float(np.max(np.abs(z))), 4.0)


def run_all(seed: int = 0, *, inject_bug: bool = False) -> list[CheckResult]:
    """Run every check and log a one-line summary for each."""
    results = [
        check_policy_family(family, seed=seed, inject_bug=inject_bug)
        for family in POLICY_FAMILIES
    ]
    results.append(check_objective_gradient(seed))
    results.append(check_estimator_unbiased(seed))
    for result in results:
        log = logger.info if result.passed else logger.error
        log(
            "{:<40} max error {:.3e} (tolerance {:.0e}) {}",
            result.name,
            result.max_error,
            result.tolerance,
            "ok" if result.passed else "FAILED",
        )
    return results
