"""Evolving interval type-2 quantum fuzzy neural network for online stream classification."""

from .density import GmmDensity, SampleWindow, fit_gmm, gaussian_kernel, mixed_mean, mixed_variance
from .growth import (
    GrowthConfig,
    SignificanceEstimate,
    growth_check,
    make_first_rule,
    make_hypothetical_rule,
    rule_significance,
)
from .harness import (
    EvaluationReport,
    RadarConfig,
    StreamRecord,
    cross_validate,
    default_radar_config,
    generate_stream,
    load_csv,
    periodic_holdout,
    radar_rss,
    write_csv,
)
from .learner import (
    Hyperparameters,
    MultiModelClassifier,
    OnlineModel,
    StepReport,
    deserialize,
    encode_target,
    load_model,
    save_model,
    serialize,
)
from .membership import (
    JumpPositionSet,
    QmfParams,
    gaussian_approx_widths,
    it2gmf_eval,
    it2qmf_eval,
    phi_kernel,
    psi_kernel,
    qmf_eval,
)
from .network import (
    FiringStrengths,
    NetworkState,
    Rule,
    classify,
    crisp_output,
    extend_input,
    fire,
    forward,
    type_reduce,
    winning_rule,
)

__version__ = "0.1.0"

__all__ = [
    "EvaluationReport",
    "FiringStrengths",
    "GmmDensity",
    "GrowthConfig",
    "Hyperparameters",
    "JumpPositionSet",
    "MultiModelClassifier",
    "NetworkState",
    "OnlineModel",
    "QmfParams",
    "RadarConfig",
    "Rule",
    "SampleWindow",
    "SignificanceEstimate",
    "StepReport",
    "StreamRecord",
    "classify",
    "crisp_output",
    "cross_validate",
    "default_radar_config",
    "deserialize",
    "encode_target",
    "extend_input",
    "fire",
    "fit_gmm",
    "forward",
    "gaussian_approx_widths",
    "gaussian_kernel",
    "generate_stream",
    "growth_check",
    "it2gmf_eval",
    "it2qmf_eval",
    "load_csv",
    "load_model",
    "make_first_rule",
    "make_hypothetical_rule",
    "mixed_mean",
    "mixed_variance",
    "periodic_holdout",
    "phi_kernel",
    "psi_kernel",
    "qmf_eval",
    "radar_rss",
    "rule_significance",
    "save_model",
    "serialize",
    "type_reduce",
    "winning_rule",
    "write_csv",
]
