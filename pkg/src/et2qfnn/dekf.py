"""Decoupled extended Kalman filtering of the winning rule.

Each rule owns one covariance block of the notional block-diagonal
covariance; a training step updates only the winning rule's block together
with the flat parameter vector
``[omega_lower | omega_upper | q_lower | q_upper | mean | theta_lower | theta_upper]``.
The design factors ride inside that vector but are shared network-wide, so
the caller writes them back to the network after each update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .membership import grade_slopes
from .network import ForwardPass, NetworkState, Rule


class GainSolveError(RuntimeError):
    """Raised when the inner gain system cannot be solved."""


@dataclass(frozen=True)
class ParameterLayout:
    """Segment offsets of the flat per-rule parameter vector.

    Consequent blocks are class-major (all I + 1 weights of class 1, then
    class 2, ...); jump blocks are grade-major (all features of grade 1, then
    grade 2, ...), matching the row layout of the Jacobian.
    """

    input_dim: int
    class_dim: int
    grades: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.class_dim < 1 or self.grades < 1:
            raise ValueError("input_dim, class_dim and grades must all be >= 1")

    @property
    def size(self) -> int:
        return 2 * self.class_dim * (2 + self.input_dim) + self.input_dim * (2 * self.grades + 1)

    @property
    def omega_lower(self) -> slice:
        return slice(0, self.class_dim * (self.input_dim + 1))

    @property
    def omega_upper(self) -> slice:
        start = self.omega_lower.stop
        return slice(start, start + self.class_dim * (self.input_dim + 1))

    @property
    def q_lower(self) -> slice:
        start = self.omega_upper.stop
        return slice(start, start + self.class_dim)

    @property
    def q_upper(self) -> slice:
        start = self.q_lower.stop
        return slice(start, start + self.class_dim)

    @property
    def mean(self) -> slice:
        start = self.q_upper.stop
        return slice(start, start + self.input_dim)

    @property
    def theta_lower(self) -> slice:
        start = self.mean.stop
        return slice(start, start + self.input_dim * self.grades)

    @property
    def theta_upper(self) -> slice:
        start = self.theta_lower.stop
        return slice(start, start + self.input_dim * self.grades)


def layout_for(input_dim: int, class_dim: int, grades: int) -> ParameterLayout:
    return ParameterLayout(input_dim, class_dim, grades)


@dataclass
class UnpackedParameters:
    mean: np.ndarray
    jumps_lower: np.ndarray
    jumps_upper: np.ndarray
    omega_lower: np.ndarray
    omega_upper: np.ndarray
    q_lower: np.ndarray
    q_upper: np.ndarray


def pack_parameters(rule: Rule, q_lower, q_upper, layout: ParameterLayout) -> np.ndarray:
    """Flatten one rule plus the shared design factors into a layout vector."""
    i, m, g = layout.input_dim, layout.class_dim, layout.grades
    if rule.mean.size != i or rule.omega_lower.shape != (m, i + 1) or rule.jumps.grades != g:
        raise ValueError("rule shapes disagree with the layout")
    vec = np.empty(layout.size)
    vec[layout.omega_lower] = rule.omega_lower.ravel()
    vec[layout.omega_upper] = rule.omega_upper.ravel()
    vec[layout.q_lower] = q_lower
    vec[layout.q_upper] = q_upper
    vec[layout.mean] = rule.mean
    vec[layout.theta_lower] = rule.jumps.lower.T.ravel()  # grade-major
    vec[layout.theta_upper] = rule.jumps.upper.T.ravel()
    return vec


def unpack_parameters(vector: np.ndarray, layout: ParameterLayout, clamp_q: bool = True) -> UnpackedParameters:
    """Inverse of :func:`pack_parameters`.

    With ``clamp_q`` the design factors are clipped into [0, 1], keeping the
    type-reduction blend a convex-like mix after filter updates; disable it
    to recover the raw vector (exact round trip even for out-of-range q).
    """
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (layout.size,):
        raise ValueError(f"expected a vector of length {layout.size}, got shape {vector.shape}")
    i, m, g = layout.input_dim, layout.class_dim, layout.grades
    q_lower = vector[layout.q_lower].copy()
    q_upper = vector[layout.q_upper].copy()
    if clamp_q:
        np.clip(q_lower, 0.0, 1.0, out=q_lower)
        np.clip(q_upper, 0.0, 1.0, out=q_upper)
    return UnpackedParameters(
        mean=vector[layout.mean].copy(),
        jumps_lower=vector[layout.theta_lower].reshape(g, i).T.copy(),
        jumps_upper=vector[layout.theta_upper].reshape(g, i).T.copy(),
        omega_lower=vector[layout.omega_lower].reshape(m, i + 1).copy(),
        omega_upper=vector[layout.omega_upper].reshape(m, i + 1).copy(),
        q_lower=q_lower,
        q_upper=q_upper,
    )


def _leave_one_out_products(values: np.ndarray) -> np.ndarray:
    """out[i] = prod of values excluding index i, without dividing by zeros."""
    n = values.size
    prefix = np.ones(n)
    np.cumprod(values[:-1], out=prefix[1:])
    suffix = np.ones(n)
    suffix[:-1] = np.cumprod(values[::-1][:-1])[::-1]
    return prefix * suffix


def jacobian(state: NetworkState, x, cache: ForwardPass, winner: int) -> np.ndarray:
    """Output gradients w.r.t. the winning rule's packed parameters, (Z, M).

    Column ``o`` differentiates output ``o``.  Consequent-weight and
    design-factor rows are nonzero only in their own class column; mean and
    jump rows are dense because every output shares the firing strengths.
    """
    if not (0 <= winner < state.rule_count):
        raise ValueError(f"winner index {winner} out of range for {state.rule_count} rules")
    if cache.degenerate:
        raise ValueError("cannot differentiate a degenerate (underflowed) firing pattern")
    layout = layout_for(state.input_dim, state.class_dim, state.grades)
    i, m, g = state.input_dim, state.class_dim, state.grades
    x = np.asarray(x, dtype=float)
    rule = state.rules[winner]
    denom = cache.denominator
    x_e = cache.x_e
    q_l, q_r = state.q_lower, state.q_upper
    r_low = cache.strengths.lower[winner]
    r_up = cache.strengths.upper[winner]

    h = np.zeros((layout.size, m))

    # Consequent weights: class-block-diagonal rows, scaled extended input.
    coef_lower = ((1.0 - q_l) * r_low + q_l * r_up) / denom  # (M,)
    coef_upper = ((1.0 - q_r) * r_low + q_r * r_up) / denom
    block = np.arange(i + 1)
    for o in range(m):
        rows = layout.omega_lower.start + o * (i + 1) + block
        h[rows, o] = coef_lower[o] * x_e
        rows = layout.omega_upper.start + o * (i + 1) + block
        h[rows, o] = coef_upper[o] * x_e

    # Design factors: diagonal rows, swing between upper- and lower-weighted sums.
    swing = cache.strengths.upper - cache.strengths.lower  # (K,)
    diag = np.arange(m)
    h[layout.q_lower.start + diag, diag] = (swing @ cache.projections_lower) / denom
    h[layout.q_upper.start + diag, diag] = (swing @ cache.projections_upper) / denom

    # Firing-strength sensitivities of each output.
    proj_l_w = cache.projections_lower[winner]  # (M,)
    proj_u_w = cache.projections_upper[winner]
    dy_dr_low = ((1.0 - q_l) * proj_l_w - cache.y_lower) / denom + ((1.0 - q_r) * proj_u_w - cache.y_upper) / denom
    dy_dr_up = (q_l * proj_l_w - cache.y_lower) / denom + (q_r * proj_u_w - cache.y_upper) / denom

    # Staircase sensitivities of the winning rule's firing strengths.
    slopes_low, side = grade_slopes(x, rule.mean, rule.jumps.lower, state.beta)
    slopes_up, _ = grade_slopes(x, rule.mean, rule.jumps.upper, state.beta)
    loo_low = _leave_one_out_products(cache.memberships_lower[winner])
    loo_up = _leave_one_out_products(cache.memberships_upper[winner])

    psi_low = -side[:, None] * state.beta * slopes_low
    psi_up = -side[:, None] * state.beta * slopes_up
    dr_low_dm = loo_low * psi_low.mean(axis=1)
    dr_up_dm = loo_up * psi_up.mean(axis=1)
    h[layout.mean] = np.outer(dr_low_dm, dy_dr_low) + np.outer(dr_up_dm, dy_dr_up)

    phi_low = np.where(rule.jumps.lower >= 0.0, 1.0, -1.0) * state.beta * slopes_low
    phi_up = np.where(rule.jumps.upper >= 0.0, 1.0, -1.0) * state.beta * slopes_up
    dr_low_dtheta = loo_low[:, None] * phi_low / g  # (I, grades)
    dr_up_dtheta = loo_up[:, None] * phi_up / g
    h[layout.theta_lower] = np.outer(dr_low_dtheta.T.ravel(), dy_dr_low)
    h[layout.theta_upper] = np.outer(dr_up_dtheta.T.ravel(), dy_dr_up)
    return h


def kalman_gain(covariance: np.ndarray, h: np.ndarray, eta: float) -> np.ndarray:
    """Gain ``G = P H (eta I + H^T P H)^{-1}``.

    The inner system is solved by Cholesky (it is symmetric and, with
    ``eta > 0`` and PSD ``P``, positive definite); a singular system raises
    :class:`GainSolveError` carrying the condition estimate.
    """
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    ph = covariance @ h
    if h.shape[1] == 1:  # single-output sub-models reduce the inner solve to a scalar
        s = float(h[:, 0] @ ph[:, 0]) + eta
        if s <= 0.0 or not np.isfinite(s):
            raise GainSolveError(f"inner gain scalar is not positive ({s!r})")
        return ph / s
    inner = h.T @ ph
    inner = (inner + inner.T) / 2.0
    inner[np.diag_indices_from(inner)] += eta
    try:
        return cho_solve(cho_factor(inner), ph.T).T
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.solve(inner, ph.T).T
    except np.linalg.LinAlgError as exc:
        raise GainSolveError(
            f"inner gain system is singular (cond={np.linalg.cond(inner):.3e})"
        ) from exc


def covariance_update(covariance: np.ndarray, gain: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Short-form update ``(I - G H^T) P`` followed by symmetrisation."""
    if gain.shape != h.shape or covariance.shape != (h.shape[0], h.shape[0]):
        raise ValueError("covariance/gain/Jacobian shapes disagree")
    updated = covariance - gain @ (h.T @ covariance)
    return (updated + updated.T) / 2.0


def parameter_update(theta: np.ndarray, gain: np.ndarray, target, output) -> np.ndarray:
    """Innovation step ``theta + G (target - output)``."""
    theta = np.asarray(theta, dtype=float)
    target = np.asarray(target, dtype=float)
    output = np.asarray(output, dtype=float)
    if target.shape != output.shape or gain.shape != (theta.size, target.size):
        raise ValueError("parameter/gain/target shapes disagree")
    return theta + gain @ (target - output)


def init_covariance(size: int) -> np.ndarray:
    """Fresh rules start from the identity covariance."""
    if size < 1:
        raise ValueError("covariance size must be positive")
    return np.eye(size)


def inflate_covariances(blocks: list, rules_before: int) -> list:
    """Scale every pre-existing block by (K^2 + 1) / K^2 after a rule is added.

    ``rules_before`` is the rule count before the addition; the inflation
    compensates the newcomer's missing share of the filter's history.
    """
    if rules_before < 1:
        raise ValueError("rules_before must be >= 1")
    factor = (rules_before**2 + 1.0) / rules_before**2
    for block in blocks:
        block *= factor
    return blocks
