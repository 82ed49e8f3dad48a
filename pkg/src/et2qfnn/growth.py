"""Rule admission: hypothetical-rule construction and significance screening.

A candidate rule built from the current sample is admitted only when its
estimated statistical contribution, computed in closed form against the
Gaussian-mixture input density, reaches a vigilance fraction of the summed
contribution of the existing rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import GmmDensity, mixed_mean, mixed_variance
from .membership import JumpPositionSet
from .network import Rule

# Staircase widths are clamped here before building jump grids and before
# entering determinants; a sample landing exactly on the blended mean would
# otherwise produce zero-width rules.
WIDTH_FLOOR = 1e-3


@dataclass(frozen=True)
class GrowthConfig:
    """Vigilance threshold and the lower/upper width contraction factor."""

    rho: float = 0.65
    delta1: float = 0.7

    def __post_init__(self) -> None:
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not (0.0 < self.delta1 < 1.0):
            raise ValueError(f"delta1 must lie in (0, 1), got {self.delta1}")


@dataclass(frozen=True)
class SignificanceEstimate:
    """Left/right contribution estimates; ``total`` is the sum of magnitudes."""

    e_left: float
    e_right: float
    total: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "total", abs(self.e_left) + abs(self.e_right))


def jump_grid(widths: np.ndarray, grades: int) -> np.ndarray:
    """Evenly spaced jump positions ``r * width / ((grades + 1) / 2)``, r = 1..grades."""
    widths = np.asarray(widths, dtype=float)
    r = np.arange(1, grades + 1, dtype=float)
    return widths[:, None] * r[None, :] / ((grades + 1) / 2.0)


def _build_rule(x, upper_widths, delta1, grades, omega_lower, omega_upper) -> Rule:
    upper_widths = np.maximum(upper_widths, WIDTH_FLOOR)
    lower_widths = delta1 * upper_widths
    return Rule(
        mean=np.asarray(x, dtype=float).copy(),
        jumps=JumpPositionSet(jump_grid(upper_widths, grades), jump_grid(lower_widths, grades)),
        omega_lower=omega_lower,
        omega_upper=omega_upper,
    )


def make_first_rule(x, gmm: GmmDensity, grades: int, delta1: float, class_dim: int) -> Rule:
    """First rule of an empty base: mean at the sample, widths from the blended
    variance of the input density, zero consequents."""
    x = np.asarray(x, dtype=float)
    if gmm.input_dim != x.size:
        raise ValueError("density dimensionality must match the sample")
    upper_widths = np.sqrt(mixed_variance(gmm))
    zeros = np.zeros((class_dim, x.size + 1))
    return _build_rule(x, upper_widths, delta1, grades, zeros, zeros.copy())


def make_hypothetical_rule(x, gmm: GmmDensity, winner: Rule, grades: int, delta1: float) -> Rule:
    """Candidate rule at the sample: widths from the distance to the blended
    mean, consequent weights copied from the winning rule."""
    x = np.asarray(x, dtype=float)
    if gmm.input_dim != x.size:
        raise ValueError("density dimensionality must match the sample")
    upper_widths = np.abs(x - mixed_mean(gmm))
    return _build_rule(x, upper_widths, delta1, grades, winner.omega_lower.copy(), winner.omega_upper.copy())


def _significance_parts(means, widths_lower, widths_upper, gmm: GmmDensity):
    """Closed-form significance building blocks for stacked rules.

    Per rule and bound: sqrt(pi^(I/2) * sqrt(det(Sigma)) * (kernel row . weights)),
    where the kernel compares the rule mean against each mixture component
    with variance (rule variance / 2 + component variance).
    """
    input_dim = means.shape[1]
    widths_lower = np.maximum(widths_lower, WIDTH_FLOOR)
    widths_upper = np.maximum(widths_upper, WIDTH_FLOOR)
    diff2 = (means[:, None, :] - gmm.means[None, :, :]) ** 2  # (K, H, I)

    def bound_term(widths):
        var = widths * widths
        kernels = np.exp(-np.sum(diff2 / (var[:, None, :] / 2.0 + gmm.variances[None, :, :]), axis=2))
        det_root = np.prod(widths, axis=1)
        return np.sqrt(np.pi ** (input_dim / 2.0) * det_root * (kernels @ gmm.weights))

    return bound_term(widths_lower), bound_term(widths_upper)


def significance_from_arrays(
    means: np.ndarray,
    widths_lower: np.ndarray,
    widths_upper: np.ndarray,
    wnorm_lower: np.ndarray,
    wnorm_upper: np.ndarray,
    gmm: GmmDensity,
    q_lower,
    q_upper,
):
    """Array-level significance core over pre-extracted rule parameters.

    ``means``/``widths_*`` have shape (K, I), ``wnorm_*`` hold the Frobenius
    norms of the consequent matrices.  Returns ``(e_left, e_right)``, each of
    length K; the bounds blend the upper and lower weight-norm terms with the
    Euclidean norm of the corresponding design-factor vector.
    """
    term_lower, term_upper = _significance_parts(means, widths_lower, widths_upper, gmm)
    nq_l = float(np.sqrt(np.sum(np.square(q_lower))))
    nq_r = float(np.sqrt(np.sum(np.square(q_upper))))
    e_left = nq_l * wnorm_upper * term_upper + (1.0 - nq_l) * wnorm_lower * term_lower
    e_right = nq_r * wnorm_upper * term_upper + (1.0 - nq_r) * wnorm_lower * term_lower
    return e_left, e_right


def significance_batch(rules: list, gmm: GmmDensity, q_lower, q_upper):
    """Left/right significance estimates for a list of rules at once."""
    return significance_from_arrays(
        np.stack([r.mean for r in rules]),
        np.stack([r.jumps.lower.min(axis=1) for r in rules]),
        np.stack([r.jumps.upper.min(axis=1) for r in rules]),
        np.array([np.linalg.norm(r.omega_lower) for r in rules]),
        np.array([np.linalg.norm(r.omega_upper) for r in rules]),
        gmm,
        q_lower,
        q_upper,
    )


def rule_significance(rule: Rule, gmm: GmmDensity, q_lower, q_upper) -> SignificanceEstimate:
    """Closed-form contribution estimate of one rule under the input density."""
    e_left, e_right = significance_batch([rule], gmm, q_lower, q_upper)
    return SignificanceEstimate(float(e_left[0]), float(e_right[0]))


def growth_decision(candidate_total: float, existing_total: float, rho: float) -> bool:
    """Admission arithmetic: candidate total >= rho * summed existing totals.

    When both sides are exactly zero (fresh networks whose consequents are
    still all-zero) the candidate is rejected; admitting it would let the
    rule base grow unboundedly before the filter ever adapts a weight.
    """
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if candidate_total == 0.0 and existing_total == 0.0:
        return False
    return candidate_total >= rho * existing_total


def growth_check(candidate: SignificanceEstimate, existing, rho: float) -> bool:
    """Admission test over significance estimates; see :func:`growth_decision`."""
    return growth_decision(candidate.total, float(sum(e.total for e in existing)), rho)
