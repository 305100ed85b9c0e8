"""Unit tests for the gradient self-checks."""

import numpy as np
import pytest

from kataglyphis_reinforceip.gradcheck import (
    RELATIVE_TOLERANCE,
    CheckResult,
    central_difference,
    check_estimator_unbiased,
    check_objective_gradient,
    check_policy_family,
    relative_error,
    run_all,
)


def test_central_difference_of_a_quadratic() -> None:
    """Central differences are exact for quadratics up to rounding."""
    point = np.array([1.0, -2.0, 0.5])
    gradient = central_difference(lambda x: float(x @ x), point)
    assert np.allclose(gradient, 2.0 * point, atol=1e-6)


def test_relative_error_has_a_floor() -> None:
    """Tiny gradients are compared absolutely."""
    assert relative_error(np.array([1e-9]), np.array([0.0])) < RELATIVE_TOLERANCE
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_check_result_passes_below_the_tolerance() -> None:
    """A check passes when the error stays below the tolerance."""
    assert CheckResult("a", 1e-6, 1e-5).passed
    assert not CheckResult("b", 1e-4, 1e-5).passed


@pytest.mark.parametrize("family", ["affine-1", "affine-2", "mlp"])
def test_policy_families_pass(family: str) -> None:
    """All analytic scores agree with finite differences."""
    assert check_policy_family(family, instances=20, seed=1).passed


def test_injected_bug_is_detected() -> None:
    """A perturbed score entry fails the check."""
    assert not check_policy_family("mlp", instances=5, seed=1, inject_bug=True).passed


def test_objective_gradient_and_estimator() -> None:
    """The closed-form gradient and the estimator mean pass their checks."""
    assert check_objective_gradient(seed=2).passed
    assert check_estimator_unbiased(seed=3).passed


def test_run_all() -> None:
    """run_all returns five passing checks and fails under an injected bug."""
    results = run_all(seed=0)
    assert len(results) == 5
    assert all(result.passed for result in results)
    assert not all(result.passed for result in run_all(seed=0, inject_bug=True))
