"""Synthetic RSS streams and the two evaluation protocols.

The generator models a single reader interrogating reference tags at fixed
positions: each observation is the two-way radar-equation return of the
emitting tag as seen by a small array of virtual antennas, corrupted by
multiplicative log-normal fading, a slow sinusoidal gain drift and an
additive noise floor.  Evaluation covers k-fold cross-validation and a
periodic hold-out split, reporting classification rate, rule counts and
wall-clock execution time (plus per-class precision/recall as extensions).
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .learner import (
    Hyperparameters,
    MultiModelClassifier,
    OnlineModel,
    deserialize,
    encode_target,
    serialize,
)


@dataclass(frozen=True)
class StreamRecord:
    """One labelled observation: feature vector, 1-based class label, step index."""

    features: np.ndarray
    label: int
    timestamp: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.features.ndim != 1 or not np.all(np.isfinite(self.features)):
            raise ValueError("features must be a finite 1-D vector")
        if self.label < 1:
            raise ValueError(f"label must be a 1-based class index, got {self.label}")


@dataclass(frozen=True)
class RadarConfig:
    """Geometry, transmit parameters and noise model of the synthetic setup."""

    transmit_power: float = 1.0
    antenna_gain: float = 1.0
    wavelength: float = 0.33
    cross_section: float = 1.0
    tag_positions: tuple = ()
    reader_position: tuple = (0.0, 0.0, 1.1)
    antenna_offsets: tuple = (
        (-0.3, 0.0, -0.3),
        (0.3, 0.0, -0.3),
        (-0.3, 0.0, 0.3),
        (0.3, 0.0, 0.3),
    )
    fading_sigma: float = 0.15
    noise_floor: float = 1e-7
    drift_amplitude: float = 0.05
    drift_period: float = 2000.0

    def __post_init__(self) -> None:
        for name in ("transmit_power", "antenna_gain", "wavelength", "cross_section"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.tag_positions:
            raise ValueError("at least one tag position is required")
        if not self.antenna_offsets:
            raise ValueError("at least one antenna offset is required")
        if self.fading_sigma < 0.0 or self.noise_floor < 0.0:
            raise ValueError("noise scales must be non-negative")
        if not (0.0 <= self.drift_amplitude < 1.0) or self.drift_period <= 0.0:
            raise ValueError("drift amplitude must lie in [0, 1) with a positive period")

    @property
    def feature_dim(self) -> int:
        return len(self.antenna_offsets)

    @property
    def tag_count(self) -> int:
        return len(self.tag_positions)

    def antenna_positions(self) -> np.ndarray:
        reader = np.asarray(self.reader_position, dtype=float)
        return reader[None, :] + np.asarray(self.antenna_offsets, dtype=float)


def default_radar_config(tags: int = 4, **overrides) -> RadarConfig:
    """Config with ``tags`` reference tags spread on a grid facing the reader."""
    if tags < 1:
        raise ValueError("tags must be >= 1")
    cols = max(int(np.ceil(np.sqrt(tags))), 1)
    positions = []
    for t in range(tags):
        col, row = t % cols, t // cols
        x = -0.5 + (1.0 / max(cols - 1, 1)) * col if cols > 1 else 0.0
        positions.append((x, 1.0, 0.4 + 0.6 * row))
    return RadarConfig(tag_positions=tuple(positions), **overrides)


def radar_power(config: RadarConfig, distance: float) -> float:
    """Noiseless two-way return power in watts at the given range."""
    if distance <= 0.0:
        raise ValueError(f"distance must be positive, got {distance}")
    g2 = config.antenna_gain**2
    return (
        config.transmit_power
        * g2
        * config.wavelength**2
        * config.cross_section
        / ((4.0 * np.pi) ** 2 * distance**4)
    )


def radar_rss(config: RadarConfig, tag_index: int, noise_draws=None, step: int = 0) -> float:
    """Reader-to-tag return power, optionally corrupted by the noise model.

    ``noise_draws`` is a pair of standard-normal draws ``(fading, floor)``;
    ``None`` yields the bare closed-form value.
    """
    if not (0 <= tag_index < config.tag_count):
        raise ValueError(f"tag index {tag_index} out of range 0..{config.tag_count - 1}")
    reader = np.asarray(config.reader_position, dtype=float)
    tag = np.asarray(config.tag_positions[tag_index], dtype=float)
    power = radar_power(config, float(np.linalg.norm(tag - reader)))
    if noise_draws is None:
        return power
    fading, floor = noise_draws
    drift = 1.0 + config.drift_amplitude * np.sin(2.0 * np.pi * step / config.drift_period)
    return power * np.exp(config.fading_sigma * fading) * drift + config.noise_floor * abs(floor)


def generate_stream(config: RadarConfig, n_samples: int, seed: int) -> list:
    """Labelled synthetic stream: tags emit uniformly at random, deterministically per seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    antennas = config.antenna_positions()  # (I, 3)
    tags = np.asarray(config.tag_positions, dtype=float)  # (T, 3)
    base = np.empty((config.tag_count, config.feature_dim))
    for t in range(config.tag_count):
        for a in range(config.feature_dim):
            base[t, a] = radar_power(config, float(np.linalg.norm(tags[t] - antennas[a])))

    emitters = rng.integers(0, config.tag_count, size=n_samples)
    fading = rng.standard_normal((n_samples, config.feature_dim))
    floor = rng.standard_normal((n_samples, config.feature_dim))
    steps = np.arange(n_samples)
    drift = 1.0 + config.drift_amplitude * np.sin(2.0 * np.pi * steps / config.drift_period)
    features = (
        base[emitters] * np.exp(config.fading_sigma * fading) * drift[:, None]
        + config.noise_floor * np.abs(floor)
    )
    return [
        StreamRecord(features[n], int(emitters[n]) + 1, int(n))
        for n in range(n_samples)
    ]


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def write_csv(records: list, path) -> None:
    """Write ``x_1,...,x_I,label`` rows; floats use shortest round-trip repr."""
    if not records:
        raise ValueError("cannot write an empty record list")
    dim = records[0].features.size
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i + 1}" for i in range(dim)] + ["label"])
        for rec in records:
            if rec.features.size != dim:
                raise ValueError("records have inconsistent feature dimensions")
            writer.writerow([repr(float(v)) for v in rec.features] + [str(rec.label)])


def load_csv(path) -> list:
    """Parse a stream CSV; row numbers are reported on malformed input."""
    records = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != "label" or header[:-1] != [
            f"x_{i + 1}" for i in range(len(header) - 1)
        ]:
            raise ValueError(f"{path}: malformed header {header!r} (expected x_1,...,label)")
        dim = len(header) - 1
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ValueError(f"{path}:{line_no}: expected {dim + 1} columns, got {len(row)}")
            try:
                features = np.array([float(v) for v in row[:-1]])
                label = int(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
            if label < 1:
                raise ValueError(f"{path}:{line_no}: label must be >= 1, got {label}")
            records.append(StreamRecord(features, label, len(records)))
    if not records:
        raise ValueError(f"{path}: no data rows")
    return records


# ---------------------------------------------------------------------------
# Evaluation protocols
# ---------------------------------------------------------------------------


@dataclass
class EvaluationReport:
    """Aggregated metrics; ``per_class`` precision/recall are extensions."""

    protocol: str
    classification_rate: float
    rate_std: float
    fold_rates: list
    rule_mean: float
    rule_std: float
    rule_counts: list
    validation_count: int
    correct_count: int
    execution_time_seconds: float
    per_class: dict
    metadata: dict = field(default_factory=dict)

    def as_dict(self, include_timing: bool = True) -> dict:
        out = {
            "protocol": self.protocol,
            "classification_rate": self.classification_rate,
            "rate_std": self.rate_std,
            "fold_rates": self.fold_rates,
            "rule_mean": self.rule_mean,
            "rule_std": self.rule_std,
            "rule_counts": self.rule_counts,
            "validation_count": self.validation_count,
            "correct_count": self.correct_count,
            "per_class_extensions": self.per_class,
            "metadata": dict(self.metadata),
        }
        if include_timing:
            out["execution_time_seconds"] = self.execution_time_seconds
        else:
            out["metadata"].pop("machine", None)
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.as_dict(include_timing), sort_keys=True, indent=2) + "\n"


def write_report(report: EvaluationReport, path, include_timing: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_json(include_timing))


def _class_count(records: list) -> int:
    return max(rec.label for rec in records)


def build_model(input_dim: int, class_count: int, hp: Hyperparameters):
    """Model matching the configured decomposition (one-vs-rest or joint)."""
    if hp.mode == "mm":
        return MultiModelClassifier(input_dim, class_count, hp)
    return OnlineModel(input_dim, class_count, hp)


def train_on_records(model, records: list, trace=None) -> None:
    """Run the online loop over ``records`` in stream order."""
    if isinstance(model, MultiModelClassifier):
        for rec in records:
            for sub_index, report in enumerate(model.train_step(rec.features, rec.label)):
                if trace is not None:
                    trace.append((rec.timestamp, sub_index, report.rule_count, report.action, report.error_norm))
    else:
        class_count = model.class_dim
        for rec in records:
            report = model.train_step(rec.features, encode_target(rec.label, class_count))
            if trace is not None:
                trace.append((rec.timestamp, 0, report.rule_count, report.action, report.error_norm))


def evaluate_predictions(model, records: list, class_count: int):
    """Predict every record; returns (correct, confusion, predictions)."""
    confusion = np.zeros((class_count, class_count), dtype=int)
    predictions = []
    correct = 0
    for rec in records:
        predicted, _ = model.predict(rec.features)
        predictions.append(predicted)
        confusion[rec.label - 1, predicted - 1] += 1
        correct += int(predicted == rec.label)
    return correct, confusion, predictions


def _per_class_metrics(confusion: np.ndarray) -> dict:
    out = {}
    for c in range(confusion.shape[0]):
        tp = int(confusion[c, c])
        predicted = int(confusion[:, c].sum())
        actual = int(confusion[c].sum())
        out[str(c + 1)] = {
            "precision": tp / predicted if predicted else 0.0,
            "recall": tp / actual if actual else 0.0,
            "support": actual,
        }
    return out


def _model_rule_counts(model) -> list:
    if isinstance(model, MultiModelClassifier):
        return model.rule_counts()
    return [model.rule_count]


def _metadata(hp: Hyperparameters, extra: dict) -> dict:
    meta = {
        "hyperparameters": asdict(hp),
        "machine": f"{platform.platform()} ({os.cpu_count()} cpus)",
        "timing": "wall-clock monotonic, training start through validation end",
    }
    meta.update(extra)
    return meta


def _write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "model", "rules", "action", "error_norm"])
        for step, sub, rules, action, err in rows:
            writer.writerow([step, sub, rules, action, "" if err is None else repr(float(err))])


def _write_predictions(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "index", "label", "predicted"])
        writer.writerows(rows)


def _run_fold(payload):
    records, hp, train_idx, val_idx, class_count, want_trace = payload
    trace = [] if want_trace else None
    model = build_model(records[0].features.size, class_count, hp)
    train_on_records(model, [records[i] for i in train_idx], trace)
    correct, confusion, predictions = evaluate_predictions(model, [records[i] for i in val_idx], class_count)
    return correct, confusion, predictions, _model_rule_counts(model), trace


def cross_validate(
    records: list,
    hp: Hyperparameters,
    folds: int = 10,
    seed: int | None = None,
    jobs: int = 1,
    trace_path=None,
    predictions_path=None,
) -> EvaluationReport:
    """k-fold protocol: train on k-1 folds in stream order, score the held-out fold.

    Fold assignment is a seeded permutation, so reports are reproducible;
    rates are measured on validation folds only.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if len(records) < folds:
        raise ValueError(f"need at least {folds} records, got {len(records)}")
    class_count = _class_count(records)
    rng = np.random.default_rng(hp.seed if seed is None else seed)
    permutation = rng.permutation(len(records))
    assignments = np.array_split(permutation, folds)

    start = time.perf_counter()
    payloads = []
    for fold_indices in assignments:
        mask = np.ones(len(records), dtype=bool)
        mask[fold_indices] = False
        train_idx = np.flatnonzero(mask)
        payloads.append((records, hp, train_idx, np.sort(fold_indices), class_count, trace_path is not None))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, payloads))
    else:
        results = [_run_fold(p) for p in payloads]
    elapsed = time.perf_counter() - start

    fold_rates, rule_counts, trace_rows, prediction_rows = [], [], [], []
    confusion = np.zeros((class_count, class_count), dtype=int)
    correct_total = 0
    count_total = 0
    for fold, (payload, result) in enumerate(zip(payloads, results)):
        correct, fold_confusion, predictions, rules, trace = result
        val_idx = payload[3]
        fold_rates.append(correct / len(val_idx))
        rule_counts.append(rules)
        confusion += fold_confusion
        correct_total += correct
        count_total += len(val_idx)
        prediction_rows.extend(
            (fold, int(i), records[i].label, int(p)) for i, p in zip(val_idx, predictions)
        )
        if trace is not None:
            trace_rows.extend(trace)

    if trace_path is not None:
        _write_trace(trace_path, trace_rows)
    if predictions_path is not None:
        _write_predictions(predictions_path, prediction_rows)

    flat_rules = np.array([k for fold in rule_counts for k in fold], dtype=float)
    return EvaluationReport(
        protocol="cross-validation",
        classification_rate=float(np.mean(fold_rates)),
        rate_std=float(np.std(fold_rates)),
        fold_rates=[float(r) for r in fold_rates],
        rule_mean=float(flat_rules.mean()),
        rule_std=float(flat_rules.std()),
        rule_counts=rule_counts,
        validation_count=count_total,
        correct_count=correct_total,
        execution_time_seconds=elapsed,
        per_class=_per_class_metrics(confusion),
        metadata=_metadata(hp, {"folds": folds, "seed": int(hp.seed if seed is None else seed)}),
    )


def _train_one_vs_rest(payload):
    features, labels, position, hp = payload
    model = OnlineModel(features.shape[1], 1, hp)
    for x, label in zip(features, labels):
        model.train_step(x, np.array([1.0 if label == position else 0.0]))
    return serialize(model)


def periodic_holdout(
    records: list,
    n_train: int,
    hp: Hyperparameters,
    jobs: int = 1,
    trace_path=None,
    predictions_path=None,
) -> EvaluationReport:
    """Train on the first ``n_train`` records in stream order, score the rest."""
    if not (0 < n_train < len(records)):
        raise ValueError(f"n_train must lie in 1..{len(records) - 1}, got {n_train}")
    class_count = _class_count(records)
    train_records = records[:n_train]
    val_records = records[n_train:]

    start = time.perf_counter()
    trace = [] if trace_path is not None else None
    if hp.mode == "mm" and jobs > 1 and trace is None:
        features = np.stack([rec.features for rec in train_records])
        labels = np.array([rec.label for rec in train_records])
        payloads = [(features, labels, position, hp) for position in range(1, class_count + 1)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            blobs = list(pool.map(_train_one_vs_rest, payloads))
        model = MultiModelClassifier.from_sub_models([deserialize(b) for b in blobs])
    else:
        model = build_model(records[0].features.size, class_count, hp)
        train_on_records(model, train_records, trace)
    correct, confusion, predictions = evaluate_predictions(model, val_records, class_count)
    elapsed = time.perf_counter() - start

    if trace_path is not None:
        _write_trace(trace_path, trace)
    if predictions_path is not None:
        _write_predictions(
            predictions_path,
            [(0, n_train + i, rec.label, int(p)) for i, (rec, p) in enumerate(zip(val_records, predictions))],
        )

    rules = np.array(_model_rule_counts(model), dtype=float)
    rate = correct / len(val_records)
    return EvaluationReport(
        protocol="periodic-holdout",
        classification_rate=float(rate),
        rate_std=0.0,
        fold_rates=[float(rate)],
        rule_mean=float(rules.mean()),
        rule_std=float(rules.std()),
        rule_counts=[[int(k) for k in rules]],
        validation_count=len(val_records),
        correct_count=correct,
        execution_time_seconds=elapsed,
        per_class=_per_class_metrics(confusion),
        metadata=_metadata(hp, {"n_train": int(n_train)}),
    )
