"""Single-pass online learning loop and model persistence.

Every incoming sample either grows the rule base (when the candidate rule
carries enough estimated significance) or triggers one decoupled Kalman
update of the winning rule.  The sample is consumed: nothing is replayed.

Multiclass classification uses one single-output model per class trained
one-vs-rest; the final decision is the argmax over the sub-model outputs.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .dekf import (
    GainSolveError,
    covariance_update,
    init_covariance,
    inflate_covariances,
    jacobian,
    kalman_gain,
    layout_for,
    pack_parameters,
    parameter_update,
    unpack_parameters,
)
from .density import GmmDensity, SampleWindow, fit_gmm
from .growth import (
    WIDTH_FLOOR,
    growth_decision,
    make_first_rule,
    make_hypothetical_rule,
    significance_from_arrays,
)
from .membership import JumpPositionSet
from .network import NetworkState, Rule, stacked_forward, winning_rule

logger = logging.getLogger("et2qfnn")

GREW = "grew"
ADJUSTED = "adjusted"
SKIPPED = "skipped"

MODES = ("mm", "mimo")


@dataclass(frozen=True)
class Hyperparameters:
    """Learning configuration; defaults are the fixed values used throughout."""

    beta: float = 1.0
    grades: int = 3
    vigilance: float = 0.65
    uncertainty_factor: float = 0.7
    learning_rate: float = 0.001
    history_size: int = 50
    gmm_components: int = 3
    mode: str = "mm"
    seed: int = 0
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.beta <= 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.grades < 1:
            raise ValueError(f"grades must be >= 1, got {self.grades}")
        if not (0.0 < self.vigilance <= 1.0):
            raise ValueError(f"vigilance must lie in (0, 1], got {self.vigilance}")
        if not (0.0 < self.uncertainty_factor < 1.0):
            raise ValueError(f"uncertainty_factor must lie in (0, 1), got {self.uncertainty_factor}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.history_size < 1:
            raise ValueError(f"history_size must be >= 1, got {self.history_size}")
        if self.gmm_components < 1:
            raise ValueError(f"gmm_components must be >= 1, got {self.gmm_components}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class StepReport:
    """Outcome of one training step."""

    action: str
    rule_count: int
    winner: int | None
    outputs: np.ndarray | None
    error_norm: float | None
    degenerate: bool = False


def encode_target(class_index: int, class_count: int) -> np.ndarray:
    """One-hot target vector for a 1-based class index."""
    class_index = int(class_index)
    class_count = int(class_count)
    if not (1 <= class_index <= class_count):
        raise ValueError(f"class index {class_index} out of range 1..{class_count}")
    out = np.zeros(class_count)
    out[class_index - 1] = 1.0
    return out


class _MinMaxScaler:
    """Per-feature min-max scaling, frozen once the warm-up window has passed."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.low = np.full(dim, np.inf)
        self.high = np.full(dim, -np.inf)
        self.seen = False
        self.frozen = False

    def observe(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        np.minimum(self.low, x, out=self.low)
        np.maximum(self.high, x, out=self.high)
        self.seen = True

    def transform(self, x: np.ndarray) -> np.ndarray:
        if not self.seen:
            return x
        span = self.high - self.low
        span = np.where(span > 0.0, span, 1.0)
        return (x - self.low) / span


class OnlineModel:
    """One evolving network plus its filter state, density window and counters."""

    def __init__(self, input_dim: int, class_dim: int, hp: Hyperparameters) -> None:
        self.hp = hp
        self.network = NetworkState.fresh(input_dim, class_dim, beta=hp.beta, grades=hp.grades)
        self.layout = layout_for(input_dim, class_dim, hp.grades)
        self.covariances: list[np.ndarray] = []
        self.window = SampleWindow(hp.history_size, input_dim)
        self.gmm: GmmDensity | None = None
        self.step = 0
        self.scaler = _MinMaxScaler(input_dim) if hp.normalize else None
        self.growth_steps: list[int] = []
        self.ordering_violations = 0
        self.degenerate_steps = 0
        self.skipped_updates = 0
        self._rebuild_stacks()

    def _rebuild_stacks(self) -> None:
        """Contiguous copies of the rule parameters, kept in lockstep with the
        rule list so the per-step hot path avoids re-stacking Python lists."""
        i, m, g = self.network.input_dim, self.network.class_dim, self.hp.grades
        rules = self.network.rules
        k = len(rules)
        self._means = np.zeros((k, i))
        self._jumps_low = np.zeros((k, i, g))
        self._jumps_up = np.zeros((k, i, g))
        self._omega_low = np.zeros((k, m, i + 1))
        self._omega_up = np.zeros((k, m, i + 1))
        self._widths_low = np.zeros((k, i))
        self._widths_up = np.zeros((k, i))
        self._wnorm_low = np.zeros(k)
        self._wnorm_up = np.zeros(k)
        for j, rule in enumerate(rules):
            self._refresh_stack_row(j, rule)

    def _refresh_stack_row(self, j: int, rule: Rule) -> None:
        self._means[j] = rule.mean
        self._jumps_low[j] = rule.jumps.lower
        self._jumps_up[j] = rule.jumps.upper
        self._omega_low[j] = rule.omega_lower
        self._omega_up[j] = rule.omega_upper
        self._widths_low[j] = rule.jumps.lower.min(axis=1)
        self._widths_up[j] = rule.jumps.upper.min(axis=1)
        self._wnorm_low[j] = np.sqrt(np.sum(np.square(rule.omega_lower)))
        self._wnorm_up[j] = np.sqrt(np.sum(np.square(rule.omega_upper)))

    def _append_rule(self, rule: Rule) -> None:
        self.network.rules.append(rule)
        grow = lambda stack, row: np.concatenate([stack, row[None]])  # noqa: E731
        self._means = grow(self._means, rule.mean)
        self._jumps_low = grow(self._jumps_low, rule.jumps.lower)
        self._jumps_up = grow(self._jumps_up, rule.jumps.upper)
        self._omega_low = grow(self._omega_low, rule.omega_lower)
        self._omega_up = grow(self._omega_up, rule.omega_upper)
        self._widths_low = grow(self._widths_low, rule.jumps.lower.min(axis=1))
        self._widths_up = grow(self._widths_up, rule.jumps.upper.min(axis=1))
        self._wnorm_low = np.append(self._wnorm_low, np.sqrt(np.sum(np.square(rule.omega_lower))))
        self._wnorm_up = np.append(self._wnorm_up, np.sqrt(np.sum(np.square(rule.omega_upper))))
        self.covariances.append(init_covariance(self.layout.size))
        self.growth_steps.append(self.step)

    @property
    def input_dim(self) -> int:
        return self.network.input_dim

    @property
    def class_dim(self) -> int:
        return self.network.class_dim

    @property
    def rule_count(self) -> int:
        return self.network.rule_count

    # -- density maintenance -------------------------------------------------

    def _density(self) -> GmmDensity:
        return self.gmm if self.gmm is not None else self.window.moment_density()

    def _ingest(self, x: np.ndarray) -> np.ndarray:
        """Scale, window and (on cadence) refit the density for one sample."""
        if self.scaler is not None:
            self.scaler.observe(x)
            x = self.scaler.transform(x)
            if self.step >= self.hp.history_size:
                self.scaler.frozen = True
        self.window.push(x)
        if self.step % self.hp.history_size == 0:
            self.gmm = fit_gmm(self.window, self.hp.gmm_components, (self.hp.seed, self.step))
        return x

    def _prepare_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input must be finite")
        return x

    # -- learning ------------------------------------------------------------

    def train_step(self, x, target) -> StepReport:
        """Consume one labelled sample: grow a rule or adjust the winner."""
        x = self._prepare_input(x)
        target = np.asarray(target, dtype=float)
        if target.shape != (self.class_dim,):
            raise ValueError(f"expected target of shape ({self.class_dim},), got {target.shape}")
        if not np.all(np.isfinite(target)):
            raise ValueError("target must be finite")
        self.step += 1
        x = self._ingest(x)
        density = self._density()
        net = self.network

        if net.rule_count == 0:
            self._append_rule(
                make_first_rule(x, density, self.hp.grades, self.hp.uncertainty_factor, self.class_dim)
            )
            return StepReport(GREW, 1, None, None, None)

        cache = stacked_forward(
            net, x, self._means, self._jumps_low, self._jumps_up, self._omega_low, self._omega_up
        )
        winner = winning_rule(cache.strengths)
        error = target - cache.outputs
        error_norm = float(np.sqrt(error @ error))
        e_left, e_right = significance_from_arrays(
            self._means, self._widths_low, self._widths_up, self._wnorm_low, self._wnorm_up,
            density, net.q_lower, net.q_upper,
        )
        # Candidate widths without materialising the rule: the smallest grid
        # jump is the (floored) sample-to-blended-mean distance over the half
        # grade span; consequent norms are copied from the winner.  The float
        # operations mirror jump_grid exactly so decisions cannot diverge.
        half_span = (self.hp.grades + 1) / 2.0
        cand_sigma = np.maximum(np.abs(x - density.weights @ density.means), WIDTH_FLOOR)
        cand_left, cand_right = significance_from_arrays(
            x[None, :],
            ((self.hp.uncertainty_factor * cand_sigma) / half_span)[None, :],
            (cand_sigma / half_span)[None, :],
            self._wnorm_low[winner : winner + 1],
            self._wnorm_up[winner : winner + 1],
            density,
            net.q_lower,
            net.q_upper,
        )
        candidate_total = abs(float(cand_left[0])) + abs(float(cand_right[0]))
        existing_total = float(np.sum(np.abs(e_left) + np.abs(e_right)))

        if growth_decision(candidate_total, existing_total, self.hp.vigilance):
            inflate_covariances(self.covariances, net.rule_count)
            self._append_rule(
                make_hypothetical_rule(x, density, net.rules[winner], self.hp.grades, self.hp.uncertainty_factor)
            )
            return StepReport(GREW, net.rule_count, winner, cache.outputs, error_norm, cache.degenerate)

        if cache.degenerate:
            self.degenerate_steps += 1
            return StepReport(SKIPPED, net.rule_count, winner, cache.outputs, error_norm, True)

        h = jacobian(net, x, cache, winner)
        try:
            gain = kalman_gain(self.covariances[winner], h, self.hp.learning_rate)
        except GainSolveError as exc:
            logger.warning("step %d: skipping filter update (%s)", self.step, exc)
            self.skipped_updates += 1
            return StepReport(SKIPPED, net.rule_count, winner, cache.outputs, error_norm)

        vector = pack_parameters(net.rules[winner], net.q_lower, net.q_upper, self.layout)
        if np.any(error != 0.0):
            vector = parameter_update(vector, gain, target, cache.outputs)
        self.covariances[winner] = covariance_update(self.covariances[winner], gain, h)
        updated = unpack_parameters(vector, self.layout, clamp_q=True)
        rule = net.rules[winner]
        rule.mean = updated.mean
        rule.jumps = JumpPositionSet(updated.jumps_upper, updated.jumps_lower, validate=False)
        rule.omega_lower = updated.omega_lower
        rule.omega_upper = updated.omega_upper
        net.q_lower = updated.q_lower
        net.q_upper = updated.q_upper
        self._refresh_stack_row(winner, rule)
        self.ordering_violations += int(
            np.sum(np.abs(updated.jumps_upper) < np.abs(updated.jumps_lower))
        )
        return StepReport(ADJUSTED, net.rule_count, winner, cache.outputs, error_norm)

    def predict(self, x) -> tuple[int, np.ndarray]:
        """Forward pass only; the model is not mutated."""
        if self.rule_count == 0:
            raise ValueError("empty rule base: train on at least one sample first")
        x = self._prepare_input(x)
        if self.scaler is not None:
            x = self.scaler.transform(x)
        cache = stacked_forward(
            self.network, x, self._means, self._jumps_low, self._jumps_up, self._omega_low, self._omega_up
        )
        return cache.class_index, cache.outputs


class MultiModelClassifier:
    """One-vs-rest bundle of single-output models, one per class."""

    def __init__(self, input_dim: int, class_count: int, hp: Hyperparameters) -> None:
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        self.hp = hp
        self.sub_models = [OnlineModel(input_dim, 1, hp) for _ in range(class_count)]

    @property
    def input_dim(self) -> int:
        return self.sub_models[0].input_dim

    @property
    def class_count(self) -> int:
        return len(self.sub_models)

    def train_step(self, x, class_index: int) -> list[StepReport]:
        """Feed the sample to every sub-model with its binary target."""
        class_index = int(class_index)
        if not (1 <= class_index <= self.class_count):
            raise ValueError(f"class index {class_index} out of range 1..{self.class_count}")
        reports = []
        for position, sub in enumerate(self.sub_models, start=1):
            target = np.array([1.0 if position == class_index else 0.0])
            reports.append(sub.train_step(x, target))
        return reports

    def predict(self, x) -> tuple[int, np.ndarray]:
        scores = np.array([sub.predict(x)[1][0] for sub in self.sub_models])
        return int(np.argmax(scores)) + 1, scores

    def rule_counts(self) -> list[int]:
        return [sub.rule_count for sub in self.sub_models]

    @classmethod
    def from_sub_models(cls, sub_models: list) -> "MultiModelClassifier":
        """Assemble a classifier from independently trained single-output models."""
        if not sub_models:
            raise ValueError("at least one sub-model is required")
        if any(sub.class_dim != 1 for sub in sub_models):
            raise ValueError("sub-models must be single-output")
        clf = cls.__new__(cls)
        clf.hp = sub_models[0].hp
        clf.sub_models = list(sub_models)
        return clf


# ---------------------------------------------------------------------------
# Persistence: versioned little-endian binary format (see FORMAT.md).
# ---------------------------------------------------------------------------

MAGIC = b"ET2Q"
FORMAT_VERSION = 1
_KIND_SINGLE = 0
_KIND_MULTI = 1
_MODE_CODES = {"mm": 0, "mimo": 1}
_MODE_NAMES = {code: name for name, code in _MODE_CODES.items()}


class _Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self._parts.append(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def i64(self, v: int) -> None:
        self._parts.append(struct.pack("<q", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def array(self, arr: np.ndarray) -> None:
        flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        self.u64(flat.size)
        self._parts.append(flat.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ValueError("truncated model payload")
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def array(self, shape=None) -> np.ndarray:
        size = self.u64()
        arr = np.frombuffer(self._take(8 * size), dtype="<f8").astype(float)
        return arr if shape is None else arr.reshape(shape)

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise ValueError("trailing bytes after model payload")


def _write_hyperparameters(w: _Writer, hp: Hyperparameters) -> None:
    w.f64(hp.beta)
    w.u32(hp.grades)
    w.f64(hp.vigilance)
    w.f64(hp.uncertainty_factor)
    w.f64(hp.learning_rate)
    w.u32(hp.history_size)
    w.u32(hp.gmm_components)
    w.u8(_MODE_CODES[hp.mode])
    w.i64(hp.seed)
    w.u8(1 if hp.normalize else 0)


def _read_hyperparameters(r: _Reader) -> Hyperparameters:
    return Hyperparameters(
        beta=r.f64(),
        grades=r.u32(),
        vigilance=r.f64(),
        uncertainty_factor=r.f64(),
        learning_rate=r.f64(),
        history_size=r.u32(),
        gmm_components=r.u32(),
        mode=_MODE_NAMES[r.u8()],
        seed=r.i64(),
        normalize=bool(r.u8()),
    )


def _write_single(w: _Writer, model: OnlineModel) -> None:
    _write_hyperparameters(w, model.hp)
    i, m = model.input_dim, model.class_dim
    w.u32(i)
    w.u32(m)
    w.u64(model.step)
    if model.scaler is not None:
        w.u8(1 if model.scaler.seen else 0)
        w.u8(1 if model.scaler.frozen else 0)
        w.array(model.scaler.low)
        w.array(model.scaler.high)
    net = model.network
    w.array(net.q_lower)
    w.array(net.q_upper)
    w.u32(net.rule_count)
    for rule in net.rules:
        w.array(rule.mean)
        w.array(rule.jumps.lower)
        w.array(rule.jumps.upper)
        w.array(rule.omega_lower)
        w.array(rule.omega_upper)
    for block in model.covariances:
        w.array(block)
    samples = model.window.samples()
    w.u32(samples.shape[0])
    w.array(samples)
    w.u64(model.window.count)
    w.array(model.window.running_mean())
    w.array(model.window._m2)
    if model.gmm is None:
        w.u8(0)
    else:
        w.u8(1)
        w.u32(model.gmm.component_count)
        w.array(model.gmm.weights)
        w.array(model.gmm.means)
        w.array(model.gmm.variances)
    w.u32(len(model.growth_steps))
    for s in model.growth_steps:
        w.u64(s)
    w.u64(model.ordering_violations)
    w.u64(model.degenerate_steps)
    w.u64(model.skipped_updates)


def _read_single(r: _Reader) -> OnlineModel:
    hp = _read_hyperparameters(r)
    i = r.u32()
    m = r.u32()
    model = OnlineModel(i, m, hp)
    model.step = r.u64()
    if hp.normalize:
        seen = bool(r.u8())
        frozen = bool(r.u8())
        low = r.array((i,))
        high = r.array((i,))
        model.scaler.seen = seen
        model.scaler.frozen = frozen
        model.scaler.low = low
        model.scaler.high = high
    net = model.network
    net.q_lower = r.array((m,))
    net.q_upper = r.array((m,))
    rule_count = r.u32()
    g = hp.grades
    for _ in range(rule_count):
        mean = r.array((i,))
        jumps_lower = r.array((i, g))
        jumps_upper = r.array((i, g))
        omega_lower = r.array((m, i + 1))
        omega_upper = r.array((m, i + 1))
        net.rules.append(
            Rule(mean, JumpPositionSet(jumps_upper, jumps_lower, validate=False), omega_lower, omega_upper)
        )
    z = model.layout.size
    model.covariances = [r.array((z, z)) for _ in range(rule_count)]
    window_size = r.u32()
    samples = r.array((window_size, i)) if window_size else np.zeros((0, i))
    count = r.u64()
    mean = r.array((i,))
    m2 = r.array((i,))
    window = model.window
    window._buf[:window_size] = samples
    window._size = window_size
    window._cursor = window_size % window.capacity
    window.count = count
    window._mean = mean
    window._m2 = m2
    if r.u8():
        h = r.u32()
        model.gmm = GmmDensity(r.array((h,)), r.array((h, i)), r.array((h, i)))
    model.growth_steps = [r.u64() for _ in range(r.u32())]
    model.ordering_violations = r.u64()
    model.degenerate_steps = r.u64()
    model.skipped_updates = r.u64()
    model._rebuild_stacks()
    return model


def serialize(model) -> bytes:
    """Binary snapshot of a model; the exact layout is pinned in FORMAT.md."""
    w = _Writer()
    w._parts.append(MAGIC)
    w.u16(FORMAT_VERSION)
    if isinstance(model, MultiModelClassifier):
        w.u8(_KIND_MULTI)
        w.u32(model.class_count)
        for sub in model.sub_models:
            _write_single(w, sub)
    elif isinstance(model, OnlineModel):
        w.u8(_KIND_SINGLE)
        _write_single(w, model)
    else:
        raise TypeError(f"cannot serialize object of type {type(model).__name__}")
    return w.getvalue()


def deserialize(data: bytes):
    """Rebuild a model from :func:`serialize` output; strict about format."""
    if len(data) < 7:
        raise ValueError("truncated model payload")
    if data[:4] != MAGIC:
        raise ValueError("not a model file (bad magic bytes)")
    r = _Reader(data)
    r._take(4)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    kind = r.u8()
    if kind == _KIND_SINGLE:
        model = _read_single(r)
    elif kind == _KIND_MULTI:
        count = r.u32()
        subs = [_read_single(r) for _ in range(count)]
        if not subs:
            raise ValueError("multi-model payload with zero sub-models")
        model = MultiModelClassifier.__new__(MultiModelClassifier)
        model.hp = subs[0].hp
        model.sub_models = subs
    else:
        raise ValueError(f"unknown model kind {kind}")
    r.expect_end()
    return model


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
