"""Quantum membership functions, their Gaussian surrogates and gradient kernels.

A quantum membership function (QMF) is a staircase-shaped curve obtained by
averaging ``grades`` logistic sigmoids.  Each sigmoid is centred at an offset
("jump position") from the function mean: below the mean the staircase rises,
at and above the mean it falls, so the curve is symmetric about the mean and
peaks there.  The interval type-2 variant evaluates the same staircase with
two jump-position sets and returns a membership interval ``[lower, upper]``.

The gradient kernels :func:`psi_kernel` (sensitivity to the mean) and
:func:`phi_kernel` (sensitivity to a jump position) are the exact derivatives
of one grade's sigmoid term; the Kalman-filter trainer assembles them into
rule-level Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


def _check_finite_scalar(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def _sigmoid_slope(z: np.ndarray) -> np.ndarray:
    """Logistic derivative sigma'(z) = sigma(z) * (1 - sigma(z)), overflow safe."""
    s = expit(z)
    return s * (1.0 - s)


@dataclass
class JumpPositionSet:
    """Upper and lower jump-position matrices of one rule, shape (I, grades).

    Row ``i`` holds the per-grade offsets for input feature ``i``.  The strict
    ordering ``upper > lower`` is checked only at construction; Kalman updates
    may later violate it (evaluation uses magnitudes, so nothing breaks), and
    callers rebuilding a set from an updated parameter vector pass
    ``validate=False``.
    """

    upper: np.ndarray
    lower: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        self.upper = np.asarray(self.upper, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        if self.upper.ndim != 2 or self.upper.shape != self.lower.shape:
            raise ValueError(
                f"jump matrices must share shape (I, grades), got "
                f"{self.upper.shape} and {self.lower.shape}"
            )
        if not (np.all(np.isfinite(self.upper)) and np.all(np.isfinite(self.lower))):
            raise ValueError("jump positions must be finite")
        if self.validate and not np.all(self.upper > self.lower):
            raise ValueError("upper jump positions must exceed lower ones at construction")

    @property
    def input_dim(self) -> int:
        return self.upper.shape[0]

    @property
    def grades(self) -> int:
        return self.upper.shape[1]

    def copy(self) -> "JumpPositionSet":
        return JumpPositionSet(self.upper.copy(), self.lower.copy(), validate=False)


@dataclass
class QmfParams:
    """Shared staircase parameters: slope ``beta``, per-feature means, grade count."""

    beta: float
    mean: np.ndarray
    grades: int

    def __post_init__(self) -> None:
        self.beta = _check_finite_scalar("beta", self.beta)
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        self.mean = np.asarray(self.mean, dtype=float)
        if self.mean.ndim != 1 or not np.all(np.isfinite(self.mean)):
            raise ValueError("mean must be a finite 1-D vector")
        self.grades = int(self.grades)
        if self.grades < 1:
            raise ValueError(f"grades must be >= 1, got {self.grades}")


def qmf_eval(x: float, beta: float, mean: float, jumps) -> float:
    """Evaluate the type-1 staircase membership of ``x`` for one feature.

    Averages, over the given jump positions ``theta``, a rising sigmoid
    ``sigma(beta * (x - mean + |theta|))`` when ``x < mean`` and a falling
    sigmoid ``sigma(-beta * (x - mean - |theta|))`` when ``x >= mean``.
    The result always lies in ``[0, 1]``.
    """
    x = _check_finite_scalar("x", x)
    beta = _check_finite_scalar("beta", beta)
    mean = _check_finite_scalar("mean", mean)
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    jumps = np.asarray(jumps, dtype=float)
    if jumps.ndim != 1 or jumps.size < 1:
        raise ValueError("jumps must be a non-empty 1-D array")
    if not np.all(np.isfinite(jumps)):
        raise ValueError("jumps must be finite")
    # Both branches collapse to sigma(beta * (|theta| + side * (x - mean)))
    # with side = +1 strictly below the mean and -1 at or above it.
    side = 1.0 if x < mean else -1.0
    return float(np.mean(expit(beta * (np.abs(jumps) + side * (x - mean)))))


def it2qmf_eval(x: float, beta: float, mean: float, lower_jumps, upper_jumps) -> tuple[float, float]:
    """Interval membership of ``x``: the staircase under each jump set.

    Returns ``(lower, upper)``.  Whenever ``|upper_jumps| >= |lower_jumps|``
    grade-wise, the interval is properly ordered (``lower <= upper``).
    """
    return (
        qmf_eval(x, beta, mean, lower_jumps),
        qmf_eval(x, beta, mean, upper_jumps),
    )


def gaussian_approx_widths(lower_jumps, upper_jumps) -> tuple:
    """Widths of the Gaussian surrogates for one feature: min jump per bound.

    Accepts per-feature grade vectors (returns two floats) or full
    ``(I, grades)`` matrices (returns two length-``I`` vectors).  No floor is
    applied here; callers clamp before using the widths in determinants.
    """
    lower_jumps = np.asarray(lower_jumps, dtype=float)
    upper_jumps = np.asarray(upper_jumps, dtype=float)
    if lower_jumps.size == 0 or upper_jumps.size == 0:
        raise ValueError("at least one grade is required")
    if not (np.all(np.isfinite(lower_jumps)) and np.all(np.isfinite(upper_jumps))):
        raise ValueError("jump positions must be finite")
    sigma_lower = lower_jumps.min(axis=-1)
    sigma_upper = upper_jumps.min(axis=-1)
    if sigma_lower.ndim == 0:
        return float(sigma_lower), float(sigma_upper)
    return sigma_lower, sigma_upper


def it2gmf_eval(x: float, mean: float, sigma: float) -> float:
    """Gaussian surrogate ``exp(-(x - mean)^2 / sigma)``.

    Note the width enters the denominator unsquared; that is the convention
    used throughout the rule-significance estimate.
    """
    x = _check_finite_scalar("x", x)
    mean = _check_finite_scalar("mean", mean)
    sigma = _check_finite_scalar("sigma", sigma)
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(np.exp(-((x - mean) ** 2) / sigma))


def psi_kernel(x: float, beta: float, mean: float, theta: float) -> float:
    """Derivative of one grade's sigmoid term with respect to the mean.

    Negative on the rising branch (``x < mean``), positive on the falling
    branch; the jump position enters through its magnitude.
    """
    x = _check_finite_scalar("x", x)
    beta = _check_finite_scalar("beta", beta)
    mean = _check_finite_scalar("mean", mean)
    theta = _check_finite_scalar("theta", theta)
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    side = 1.0 if x < mean else -1.0
    arg = beta * (abs(theta) + side * (x - mean))
    return float(-side * beta * _sigmoid_slope(arg))


def phi_kernel(x: float, beta: float, mean: float, theta: float) -> float:
    """Derivative of one grade's sigmoid term with respect to its jump position.

    Odd in ``theta`` (the staircase depends on ``|theta|``); ``theta = 0`` is
    treated as the non-negative case.
    """
    x = _check_finite_scalar("x", x)
    beta = _check_finite_scalar("beta", beta)
    mean = _check_finite_scalar("mean", mean)
    theta = _check_finite_scalar("theta", theta)
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    side = 1.0 if x < mean else -1.0
    arg = beta * (abs(theta) + side * (x - mean))
    sign = 1.0 if theta >= 0.0 else -1.0
    return float(sign * beta * _sigmoid_slope(arg))


# ---------------------------------------------------------------------------
# Vectorised forms used by the network forward pass and the Jacobian assembly.
# ---------------------------------------------------------------------------


def membership_matrix(x: np.ndarray, means: np.ndarray, jumps: np.ndarray, beta: float) -> np.ndarray:
    """Staircase memberships for stacked rules.

    ``x``: input vector, shape (I,); ``means``: rule means, shape (K, I);
    ``jumps``: jump positions, shape (K, I, grades).  Returns a (K, I) matrix
    of per-feature memberships.
    """
    d = x[None, :] - means
    side = np.where(d < 0.0, 1.0, -1.0)
    args = beta * (np.abs(jumps) + (side * d)[:, :, None])
    return expit(args).mean(axis=2)


def grade_slopes(x: np.ndarray, mean: np.ndarray, jumps: np.ndarray, beta: float):
    """Per-grade sigmoid slopes for one rule plus the branch sign of each feature.

    ``x`` and ``mean`` have shape (I,), ``jumps`` shape (I, grades).  Returns
    ``(slopes, side)`` where ``slopes[i, r]`` is the logistic derivative of
    grade ``r``'s term at feature ``i`` and ``side[i]`` is +1 below the rule
    mean, -1 at or above it.  The mean kernel is ``-side * beta * slopes``,
    the jump kernel ``sign(theta) * beta * slopes``.
    """
    d = x - mean
    side = np.where(d < 0.0, 1.0, -1.0)
    args = beta * (np.abs(jumps) + (side * d)[:, None])
    return _sigmoid_slope(args), side
