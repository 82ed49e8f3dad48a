"""Evolving rule base and the five-layer forward pass.

Layers: input pass-through, per-feature interval memberships, product
T-norm firing strengths, design-factor type reduction to crisp per-class
bounds, and the summed output with an argmax class decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .membership import JumpPositionSet, membership_matrix

DENOMINATOR_EPS = 1e-12

Q_LOWER_INIT = 0.3
Q_UPPER_INIT = 0.7


@dataclass
class Rule:
    """One fuzzy rule: premise mean + jump sets, interval consequent weights.

    ``omega_lower`` and ``omega_upper`` have shape (M, I + 1); row ``o`` is the
    affine consequent of class ``o`` applied to the extended input.
    """

    mean: np.ndarray
    jumps: JumpPositionSet
    omega_lower: np.ndarray
    omega_upper: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.omega_lower = np.asarray(self.omega_lower, dtype=float)
        self.omega_upper = np.asarray(self.omega_upper, dtype=float)
        if self.mean.ndim != 1:
            raise ValueError("rule mean must be a 1-D vector")
        i = self.mean.size
        if self.jumps.input_dim != i:
            raise ValueError("jump matrix rows must match the rule mean length")
        if self.omega_lower.shape != self.omega_upper.shape or self.omega_lower.ndim != 2:
            raise ValueError("consequent matrices must share shape (M, I + 1)")
        if self.omega_lower.shape[1] != i + 1:
            raise ValueError("consequent matrices must have I + 1 columns")
        for name, arr in (("mean", self.mean), ("omega_lower", self.omega_lower), ("omega_upper", self.omega_upper)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"rule {name} must be finite")

    def copy(self) -> "Rule":
        return Rule(self.mean.copy(), self.jumps.copy(), self.omega_lower.copy(), self.omega_upper.copy())


@dataclass
class NetworkState:
    """Rule list plus the shared design factors and staircase shape parameters."""

    rules: list
    q_lower: np.ndarray
    q_upper: np.ndarray
    beta: float
    grades: int
    input_dim: int
    class_dim: int

    def __post_init__(self) -> None:
        self.q_lower = np.asarray(self.q_lower, dtype=float)
        self.q_upper = np.asarray(self.q_upper, dtype=float)
        if self.q_lower.shape != (self.class_dim,) or self.q_upper.shape != (self.class_dim,):
            raise ValueError("design-factor vectors must have one entry per class")
        if self.beta <= 0.0 or self.grades < 1 or self.input_dim < 1 or self.class_dim < 1:
            raise ValueError("beta must be positive and grades/input_dim/class_dim >= 1")

    @property
    def rule_count(self) -> int:
        return len(self.rules)

    @classmethod
    def fresh(cls, input_dim: int, class_dim: int, beta: float = 1.0, grades: int = 3) -> "NetworkState":
        """Empty rule base with symmetric design-factor start (0.3 / 0.7)."""
        return cls(
            rules=[],
            q_lower=np.full(class_dim, Q_LOWER_INIT),
            q_upper=np.full(class_dim, Q_UPPER_INIT),
            beta=float(beta),
            grades=int(grades),
            input_dim=int(input_dim),
            class_dim=int(class_dim),
        )


@dataclass
class FiringStrengths:
    """Interval firing strengths of all rules: products of per-feature memberships."""

    lower: np.ndarray
    upper: np.ndarray


@dataclass
class TypeReduced:
    y_lower: np.ndarray
    y_upper: np.ndarray
    degenerate: bool


@dataclass
class ForwardPass:
    """Forward-pass result with the intermediates the Jacobian reuses."""

    x_e: np.ndarray
    memberships_lower: np.ndarray  # (K, I)
    memberships_upper: np.ndarray  # (K, I)
    strengths: FiringStrengths
    projections_lower: np.ndarray  # (K, M): consequent row o of rule j times x_e
    projections_upper: np.ndarray  # (K, M)
    denominator: float
    y_lower: np.ndarray
    y_upper: np.ndarray
    outputs: np.ndarray
    class_index: int
    degenerate: bool = field(default=False)


def extend_input(x) -> np.ndarray:
    """Prepend the intercept entry: ``[1, x_1, ..., x_I]``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input must be a 1-D vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")
    out = np.empty(x.size + 1)
    out[0] = 1.0
    out[1:] = x
    return out


def fire(rule: Rule, x, beta: float, grades: int) -> tuple[float, float]:
    """Interval firing strength of one rule: product T-norm over features."""
    x = np.asarray(x, dtype=float)
    if x.shape != rule.mean.shape:
        raise ValueError("input length must match the rule mean")
    if rule.jumps.grades != grades:
        raise ValueError("rule grade count disagrees with the network")
    lower = membership_matrix(x, rule.mean[None, :], rule.jumps.lower[None, :, :], beta)
    upper = membership_matrix(x, rule.mean[None, :], rule.jumps.upper[None, :, :], beta)
    return float(lower.prod()), float(upper.prod())


def _consequent_projections(state: NetworkState, x_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    omega_lower = np.stack([r.omega_lower for r in state.rules])
    omega_upper = np.stack([r.omega_upper for r in state.rules])
    return omega_lower @ x_e, omega_upper @ x_e


def _blend(state: NetworkState, strengths: FiringStrengths, proj_lower, proj_upper) -> TypeReduced:
    lower, upper = strengths.lower, strengths.upper
    denom = float(lower.sum() + upper.sum())
    if denom < DENOMINATOR_EPS:
        zeros = np.zeros(state.class_dim)
        return TypeReduced(zeros, zeros.copy(), True)
    from_lower = lower @ proj_lower
    from_upper = upper @ proj_lower
    y_lower = ((1.0 - state.q_lower) * from_lower + state.q_lower * from_upper) / denom
    from_lower = lower @ proj_upper
    from_upper = upper @ proj_upper
    y_upper = ((1.0 - state.q_upper) * from_lower + state.q_upper * from_upper) / denom
    return TypeReduced(y_lower, y_upper, False)


def type_reduce(state: NetworkState, strengths: FiringStrengths, x_e: np.ndarray) -> TypeReduced:
    """Blend interval firing strengths into crisp per-class output bounds.

    Each bound mixes the lower- and upper-strength weighted consequents with
    its design factor, normalised by the total firing mass.  A denominator
    below ``DENOMINATOR_EPS`` yields zero outputs with ``degenerate=True``
    instead of dividing by an underflowed product.
    """
    if state.rule_count == 0:
        raise ValueError("empty rule base")
    proj_lower, proj_upper = _consequent_projections(state, x_e)
    return _blend(state, strengths, proj_lower, proj_upper)


def crisp_output(y_lower: np.ndarray, y_upper: np.ndarray) -> np.ndarray:
    """Crisp per-class outputs: sum of the two bounds."""
    y_lower = np.asarray(y_lower, dtype=float)
    y_upper = np.asarray(y_upper, dtype=float)
    if y_lower.shape != y_upper.shape:
        raise ValueError("output bounds must share a shape")
    return y_lower + y_upper


def classify(outputs) -> int:
    """1-based index of the highest output; ties go to the lowest index."""
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim != 1 or outputs.size == 0:
        raise ValueError("outputs must be a non-empty vector")
    return int(np.argmax(outputs)) + 1


def winning_rule(strengths: FiringStrengths) -> int:
    """0-based index of the rule with the highest average firing strength."""
    avg = (strengths.lower + strengths.upper) / 2.0
    if avg.size == 0:
        raise ValueError("empty rule base")
    return int(np.argmax(avg))


def stacked_forward(
    state: NetworkState,
    x: np.ndarray,
    means: np.ndarray,
    jumps_lower: np.ndarray,
    jumps_upper: np.ndarray,
    omega_lower: np.ndarray,
    omega_upper: np.ndarray,
) -> ForwardPass:
    """Forward pass over pre-stacked rule parameters (the trainer's hot path)."""
    x_e = extend_input(x)
    memb_lower = membership_matrix(x, means, jumps_lower, state.beta)
    memb_upper = membership_matrix(x, means, jumps_upper, state.beta)
    strengths = FiringStrengths(memb_lower.prod(axis=1), memb_upper.prod(axis=1))
    proj_lower = omega_lower @ x_e
    proj_upper = omega_upper @ x_e
    reduced = _blend(state, strengths, proj_lower, proj_upper)
    outputs = crisp_output(reduced.y_lower, reduced.y_upper)
    return ForwardPass(
        x_e=x_e,
        memberships_lower=memb_lower,
        memberships_upper=memb_upper,
        strengths=strengths,
        projections_lower=proj_lower,
        projections_upper=proj_upper,
        denominator=float(strengths.lower.sum() + strengths.upper.sum()),
        y_lower=reduced.y_lower,
        y_upper=reduced.y_upper,
        outputs=outputs,
        class_index=classify(outputs),
        degenerate=reduced.degenerate,
    )


def forward(state: NetworkState, x) -> ForwardPass:
    """Full forward pass, caching every intermediate the trainer needs."""
    if state.rule_count == 0:
        raise ValueError("empty rule base")
    x = np.asarray(x, dtype=float)
    return stacked_forward(
        state,
        x,
        np.stack([r.mean for r in state.rules]),
        np.stack([r.jumps.lower for r in state.rules]),
        np.stack([r.jumps.upper for r in state.rules]),
        np.stack([r.omega_lower for r in state.rules]),
        np.stack([r.omega_upper for r in state.rules]),
    )
