"""Lower-bound the probability that a black-box closed-loop system satisfies a reach-avoid spec.

The pipeline calibrates a nominal simulator against the true system, searches
for the worst-case environment configuration with Bayesian optimization, and
certifies when the nominal worst-case robustness clears the calibrated error.
"""

from .bayesopt import (
    ContinuousDim,
    EnvSpace,
    FalsificationResult,
    IntegerDim,
    KernelParams,
    expected_improvement,
    gp_fit,
    gp_posterior,
    minimize_robustness,
    propose_next,
)
from .calibrate import AccuracyProfile, empirical_quantile, estimate_accuracy
from .certify import Certificate, NormMismatchError, ValidationReport, certify, validate_empirically
from .signals import Trajectory, WeightedNorm, sup_deviation, weighted_norm
from .stl import (
    NotReachAvoidError,
    RobustnessMeasure,
    SpecSyntaxError,
    build_measure,
    format_spec,
    is_certifiable,
    parse_spec,
    robustness,
    satisfies,
    signed_distance,
)
from .systems import (
    ControllerSpec,
    DivergenceError,
    NominalModel,
    ScenarioConfig,
    TrueModel,
    derive_seed,
    resolve,
    simulate_nominal,
    simulate_true,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyProfile", "Certificate", "ContinuousDim", "ControllerSpec", "DivergenceError", "EnvSpace",
    "FalsificationResult", "IntegerDim", "KernelParams", "NominalModel", "NormMismatchError",
    "NotReachAvoidError", "RobustnessMeasure", "ScenarioConfig", "SpecSyntaxError", "Trajectory",
    "TrueModel", "ValidationReport", "WeightedNorm", "build_measure", "certify", "derive_seed",
    "empirical_quantile", "estimate_accuracy", "expected_improvement", "format_spec", "gp_fit",
    "gp_posterior", "is_certifiable", "minimize_robustness", "parse_spec", "propose_next", "resolve",
    "robustness", "satisfies", "signed_distance", "simulate_nominal", "simulate_true", "sup_deviation",
    "validate_empirically", "weighted_norm",
]
