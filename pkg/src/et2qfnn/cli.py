"""Command-line entry point: simulate / train / evaluate / predict / inspect."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .harness import (
    EvaluationReport,
    build_model,
    cross_validate,
    default_radar_config,
    generate_stream,
    load_csv,
    periodic_holdout,
    train_on_records,
    write_csv,
    write_report,
)
from .learner import (
    Hyperparameters,
    MultiModelClassifier,
    OnlineModel,
    load_model,
    save_model,
)

logger = logging.getLogger("et2qfnn")


def _configure_logging() -> None:
    level = os.environ.get("ET2Q_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr)


def _add_hyperparameter_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("hyperparameters")
    group.add_argument("--beta", type=float, default=1.0, help="staircase slope factor")
    group.add_argument("--grades", type=int, default=3, help="sigmoid grades per membership")
    group.add_argument("--vigilance", type=float, default=0.65, help="rule admission threshold")
    group.add_argument("--uncertainty-factor", type=float, default=0.7, help="lower/upper width ratio")
    group.add_argument("--learning-rate", type=float, default=0.001, help="Kalman learning rate")
    group.add_argument("--history-size", type=int, default=50, help="density window length")
    group.add_argument("--gmm-components", type=int, default=3, help="mixture components")
    group.add_argument("--mode", choices=("mm", "mimo"), default="mm", help="classifier decomposition")
    group.add_argument("--seed", type=int, default=0, help="base RNG seed")
    group.add_argument("--normalize", action="store_true", help="min-max scale features on the warm-up window")


def _hyperparameters(args: argparse.Namespace) -> Hyperparameters:
    return Hyperparameters(
        beta=args.beta,
        grades=args.grades,
        vigilance=args.vigilance,
        uncertainty_factor=args.uncertainty_factor,
        learning_rate=args.learning_rate,
        history_size=args.history_size,
        gmm_components=args.gmm_components,
        mode=args.mode,
        seed=args.seed,
        normalize=args.normalize,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="et2qfnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic RSS stream CSV")
    p.add_argument("--tags", type=int, default=4, help="number of reference tags (classes)")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--fading-sigma", type=float, default=0.15)
    p.add_argument("--noise-floor", type=float, default=1e-7)
    p.add_argument("--drift-amplitude", type=float, default=0.05)
    p.add_argument("--drift-period", type=float, default=2000.0)

    p = sub.add_parser("train", help="train a model on a stream CSV (single pass)")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out", help="JSON training report path")
    _add_hyperparameter_flags(p)

    p = sub.add_parser("evaluate", help="run a cross-validation or hold-out protocol")
    p.add_argument("--data", required=True)
    split = p.add_mutually_exclusive_group(required=True)
    split.add_argument("--cv", type=int, metavar="FOLDS", help="k-fold cross-validation")
    split.add_argument("--holdout", type=int, metavar="N_TRAIN", help="train on the first N rows")
    p.add_argument("--jobs", type=int, default=1, help="parallel folds / sub-models")
    p.add_argument("--report-out", help="JSON report path (default: stdout)")
    p.add_argument("--trace", help="per-step training trace CSV path")
    p.add_argument("--predictions", help="per-prediction CSV path")
    p.add_argument("--timing", choices=("wall", "none"), default="wall",
                   help="'none' omits volatile timing fields for byte-stable reports")
    _add_hyperparameter_flags(p)

    p = sub.add_parser("predict", help="classify every row of a CSV with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write predicted classes here instead of stdout")

    p = sub.add_parser("inspect", help="human-readable dump of a model file")
    p.add_argument("--model", required=True)
    return parser


def _cmd_simulate(args) -> int:
    config = default_radar_config(
        tags=args.tags,
        fading_sigma=args.fading_sigma,
        noise_floor=args.noise_floor,
        drift_amplitude=args.drift_amplitude,
        drift_period=args.drift_period,
    )
    records = generate_stream(config, args.samples, args.seed)
    write_csv(records, args.out)
    print(f"wrote {len(records)} samples ({config.tag_count} classes) to {args.out}")
    return 0


def _training_report(model, n_records: int) -> dict:
    subs = model.sub_models if isinstance(model, MultiModelClassifier) else [model]
    return {
        "records": n_records,
        "input_dim": subs[0].input_dim,
        "classes": len(subs) if isinstance(model, MultiModelClassifier) else subs[0].class_dim,
        "mode": subs[0].hp.mode,
        "hyperparameters": asdict(subs[0].hp),
        "sub_models": [
            {
                "rules": sub.rule_count,
                "growth_steps": list(sub.growth_steps),
                "ordering_violations": sub.ordering_violations,
                "degenerate_steps": sub.degenerate_steps,
                "skipped_updates": sub.skipped_updates,
            }
            for sub in subs
        ],
    }


def _cmd_train(args) -> int:
    records = load_csv(args.data)
    hp = _hyperparameters(args)
    class_count = max(rec.label for rec in records)
    model = build_model(records[0].features.size, class_count, hp)
    train_on_records(model, records)
    save_model(model, args.model_out)
    report = _training_report(model, len(records))
    if args.report_out:
        with open(args.report_out, "w") as fh:
            fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    counts = [s["rules"] for s in report["sub_models"]]
    print(f"trained on {len(records)} samples; rules per model: {counts}; model: {args.model_out}")
    return 0


def _cmd_evaluate(args) -> int:
    records = load_csv(args.data)
    hp = _hyperparameters(args)
    if args.cv is not None:
        report = cross_validate(
            records, hp, folds=args.cv, jobs=args.jobs,
            trace_path=args.trace, predictions_path=args.predictions,
        )
    else:
        report = periodic_holdout(
            records, args.holdout, hp, jobs=args.jobs,
            trace_path=args.trace, predictions_path=args.predictions,
        )
    include_timing = args.timing == "wall"
    if args.report_out:
        write_report(report, args.report_out, include_timing)
        print(f"classification rate {report.classification_rate:.4f}; report: {args.report_out}")
    else:
        sys.stdout.write(report.to_json(include_timing))
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    records = load_csv(args.data)
    predictions = [model.predict(rec.features)[0] for rec in records]
    lines = "\n".join(str(p) for p in predictions) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)
    correct = sum(int(p == rec.label) for p, rec in zip(predictions, records))
    print(f"accuracy: {correct / len(records):.6f} ({correct}/{len(records)})", file=sys.stderr)
    return 0


def _format_vector(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def _dump_single(sub: OnlineModel, indent: str, out) -> None:
    print(f"{indent}steps: {sub.step}", file=out)
    print(f"{indent}rules: {sub.rule_count}", file=out)
    print(f"{indent}q_lower: {_format_vector(sub.network.q_lower)}", file=out)
    print(f"{indent}q_upper: {_format_vector(sub.network.q_upper)}", file=out)
    print(f"{indent}growth_steps: {','.join(str(s) for s in sub.growth_steps)}", file=out)
    print(f"{indent}ordering_violations: {sub.ordering_violations}", file=out)
    print(f"{indent}degenerate_steps: {sub.degenerate_steps}", file=out)
    print(f"{indent}skipped_updates: {sub.skipped_updates}", file=out)
    for idx, rule in enumerate(sub.network.rules, start=1):
        print(f"{indent}rule {idx}:", file=out)
        print(f"{indent}  mean: {_format_vector(rule.mean)}", file=out)
        print(f"{indent}  jumps_lower: {'; '.join(_format_vector(row) for row in rule.jumps.lower)}", file=out)
        print(f"{indent}  jumps_upper: {'; '.join(_format_vector(row) for row in rule.jumps.upper)}", file=out)
        print(f"{indent}  omega_lower_norm: {repr(float(np.linalg.norm(rule.omega_lower)))}", file=out)
        print(f"{indent}  omega_upper_norm: {repr(float(np.linalg.norm(rule.omega_upper)))}", file=out)


def _cmd_inspect(args) -> int:
    model = load_model(args.model)
    out = sys.stdout
    if isinstance(model, MultiModelClassifier):
        print(f"kind: multi-model ({model.class_count} one-vs-rest sub-models)", file=out)
        print(f"input_dim: {model.input_dim}", file=out)
        print(f"hyperparameters: {json.dumps(asdict(model.hp), sort_keys=True)}", file=out)
        for idx, sub in enumerate(model.sub_models, start=1):
            print(f"sub-model {idx}:", file=out)
            _dump_single(sub, "  ", out)
    else:
        print("kind: single model", file=out)
        print(f"input_dim: {model.input_dim}", file=out)
        print(f"classes: {model.class_dim}", file=out)
        print(f"hyperparameters: {json.dumps(asdict(model.hp), sort_keys=True)}", file=out)
        _dump_single(model, "", out)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
