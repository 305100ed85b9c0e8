"""Statistics of a solution ensemble: bootstrap bands, K-means groups, R^2, chain moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from .exceptions import ConfigurationError, InputShapeError, NumericError


MAX_KMEANS_ITERATIONS = 500
BOOTSTRAP_CHUNK = 100


@dataclass(frozen=True)
class AnalysisConfig:
    """Post-processing settings of a solve.

    ``kmeans_k = 0`` disables grouping.
    """

    bootstrap_resamples: int = 10000
    level: float = 0.99
    kmeans_k: int = 0
    kmeans_restarts: int = 10

    def __post_init__(self) -> None:
        """Validate ranges."""
        if self.bootstrap_resamples < 100:
            error_message = f"bootstrap_resamples must be >= 100, got {self.bootstrap_resamples}"
            raise ConfigurationError(error_message)
        if not 0.0 < self.level < 1.0:
            error_message = f"level must lie in (0, 1), got {self.level}"
            raise ConfigurationError(error_message)
        if self.kmeans_k < 0 or self.kmeans_restarts < 1:
            error_message = "kmeans_k must be >= 0 and kmeans_restarts >= 1"
            raise ConfigurationError(error_message)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Solution estimates, one row per trajectory."""

    estimates: np.ndarray

    def __post_init__(self) -> None:
        """Require a non-empty ``(n, D)`` array."""
        estimates = np.asarray(self.estimates, dtype=float)
        if estimates.ndim != 2 or estimates.shape[0] == 0 or estimates.shape[1] == 0:
            error_message = f"Ensemble needs a non-empty (n, D) array, got shape {estimates.shape}"
            logger.error(error_message)
            raise InputShapeError(error_message)
        object.__setattr__(self, "estimates", estimates)

    @property
    def size(self) -> int:
        """Number of estimates."""
        return int(self.estimates.shape[0])

    @property
    def dim(self) -> int:
        """Dimension D of each estimate."""
        return int(self.estimates.shape[1])

    @property
    def mean(self) -> np.ndarray:
        """Ensemble mean vector."""
        return self.estimates.mean(axis=0)


@dataclass(frozen=True, eq=False)
class CiBand:
    """Entrywise confidence band."""

    lower: np.ndarray
    upper: np.ndarray
    level: float

    def __post_init__(self) -> None:
        """Check ordering of the band."""
        if np.any(self.lower > self.upper):
            error_message = "CI band has lower > upper"
            raise NumericError(error_message)

    def contains(self, point: np.ndarray) -> bool:
        """Whether ``point`` lies inside the band in every coordinate."""
        return bool(np.all((self.lower <= point) & (point <= self.upper)))


@dataclass(frozen=True, eq=False)
class KMeansResult:
    """Labels, group means and within-cluster sum of squares of the best restart."""

    labels: np.ndarray
    means: np.ndarray
    wcss: float
    history: list[float] = field(default_factory=list)

    def group(self, estimates: np.ndarray, index: int) -> np.ndarray:
        """Rows of ``estimates`` assigned to group ``index``."""
        return estimates[self.labels == index]


def nearest_rank(sorted_values: np.ndarray, probability: float) -> np.ndarray:
    """Nearest-rank percentile along axis 0 of already sorted values."""
    count = sorted_values.shape[0]
    rank = min(max(math.ceil(probability * count), 1), count)
    return sorted_values[rank - 1]


def bootstrap_ci(
    ensemble: Ensemble,
    resamples: int,
    level: float,
    seed: int,
    *,
    clamp_nonnegative: bool = False,
) -> CiBand:
    """Percentile bootstrap band for the ensemble mean.

    Every resample draws ``ensemble.size`` estimates with replacement; the
    band is read off the sorted resample means by nearest rank.

    Args:
        ensemble (Ensemble): solution estimates.
        resamples (int): number of bootstrap resamples, at least 100.
        level (float): coverage level in (0, 1), e.g. 0.99.
        seed (int): seed of the resampling generator.
        clamp_nonnegative (bool): replace negative lower bounds with 0.

    Returns:
        type: CiBand

    Raises:
        ConfigurationError
    """
    if resamples < 100:
        error_message = f"At least 100 bootstrap resamples are required, got {resamples}"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    if not 0.0 < level < 1.0:
        error_message = f"level must lie in (0, 1), got {level}"
        raise ConfigurationError(error_message)
    rng = np.random.default_rng(seed)
    size = ensemble.size
    uniform = np.full(size, 1.0 / size)
    means = np.empty((resamples, ensemble.dim))
    for start in range(0, resamples, BOOTSTRAP_CHUNK):
        stop = min(start + BOOTSTRAP_CHUNK, resamples)
        counts = rng.multinomial(size, uniform, size=stop - start)
        means[start:stop] = counts @ ensemble.estimates / size
    means.sort(axis=0)
    tail = (1.0 - level) / 2.0
    lower = nearest_rank(means, tail)
    upper = nearest_rank(means, 1.0 - tail)
    if clamp_nonnegative:
        lower = np.maximum(lower, 0.0)
        upper = np.maximum(upper, 0.0)
    return CiBand(lower=lower, upper=upper, level=level)


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, np.newaxis, :] - centers[np.newaxis, :, :]) ** 2).sum(axis=2)


def _farthest_point_seeds(points: np.ndarray, k: int, first: int) -> np.ndarray:
    centers = [points[first]]
    nearest = ((points - points[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        chosen = int(np.argmax(nearest))
        centers.append(points[chosen])
        nearest = np.minimum(nearest, ((points - points[chosen]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(points: np.ndarray, centers: np.ndarray) -> KMeansResult:
    k = centers.shape[0]
    labels = np.full(points.shape[0], -1)
    history: list[float] = []
    for _ in range(MAX_KMEANS_ITERATIONS):
        distances = _squared_distances(points, centers)
        new_labels = np.argmin(distances, axis=1)
        history.append(float(distances[np.arange(points.shape[0]), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for index in range(k):
            members = points[labels == index]
            if members.shape[0] == 0:
                logger.warning("K-means group {} is empty, re-seeding it", index)
                farthest = int(np.argmax(distances.min(axis=1)))
                centers[index] = points[farthest]
            else:
                centers[index] = members.mean(axis=0)
    wcss = float(((points - centers[labels]) ** 2).sum())
    return KMeansResult(labels=labels, means=centers, wcss=wcss, history=history)


def kmeans(ensemble: Ensemble, k: int, restarts: int = 10, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm with farthest-point seeding, best of ``restarts`` by WCSS.

    Raises:
        ConfigurationError: k is not in [1, ensemble size].
    """
    if not 1 <= k <= ensemble.size:
        error_message = f"k must lie in [1, {ensemble.size}], got {k}"
        logger.error(error_message)
        raise ConfigurationError(error_message)
    rng = np.random.default_rng(seed)
    points = ensemble.estimates
    firsts = rng.choice(ensemble.size, size=restarts, replace=restarts > ensemble.size)
    runs = [_lloyd(points, _farthest_point_seeds(points, k, int(first))) for first in firsts]
    best = min(runs, key=lambda result: result.wcss)
    logger.debug("K-means with k={} finished, WCSS={}", k, best.wcss)
    return best


def r_squared(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot of ``estimate`` against ``reference``.

    Raises:
        InputShapeError: lengths differ or D < 2.
        NumericError: the reference is constant.
    """
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.shape != reference.shape or reference.ndim != 1 or reference.shape[0] < 2:
        error_message = f"R^2 needs two vectors of equal length >= 2, got {estimate.shape} and {reference.shape}"
        raise InputShapeError(error_message)
    total = float(((reference - reference.mean()) ** 2).sum())
    if total == 0.0:
        error_message = "R^2 is undefined for a constant reference"
        logger.error(error_message)
        raise NumericError(error_message)
    return 1.0 - float(((estimate - reference) ** 2).sum()) / total


def empirical_moments(
    states: np.ndarray, burn_in: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased sample covariance of ``states[burn_in:]``."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, np.newaxis]
    kept = states[burn_in:]
    if kept.shape[0] < 2:
        error_message = f"Need more than burn_in + 1 = {burn_in + 1} states, got {states.shape[0]}"
        logger.error(error_message)
        raise InputShapeError(error_message)
    mean = kept.mean(axis=0)
    centered = kept - mean
    return mean, centered.T @ centered / (kept.shape[0] - 1)
