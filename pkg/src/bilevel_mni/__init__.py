"""Numerical laboratory for minimum-norm interpolating multiclass classifiers
on bi-level Gaussian ensembles: data generation, kernel-trick interpolation,
survival/contamination diagnostics, phase-regime predictors, concentration
bound testbeds, and a Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .diagnostics import (
    correlation_report,
    fit,
    fit_scaling_exponent,
    spectrum_report,
    survival_contamination,
)
from .ensemble import (
    BilevelParams,
    DerivedScaling,
    TestPoint,
    TrainingSet,
    derive_scaling,
    generate_training,
    sample_test_points,
    stream_unfavored_blocks,
)
from .errors import BilevelError, InvalidParams
from .experiments import run_sweep, run_trial
from .interpolator import (
    build_gram,
    build_gram_and_kernel,
    score_test_point,
    score_test_points,
)
from .regimes import averaging_regime, legacy_regimes, mni_regime, regression_works

__all__ = [
    "__version__",
    "BilevelParams",
    "DerivedScaling",
    "TrainingSet",
    "TestPoint",
    "derive_scaling",
    "generate_training",
    "stream_unfavored_blocks",
    "sample_test_points",
    "BilevelError",
    "InvalidParams",
    "build_gram",
    "build_gram_and_kernel",
    "score_test_point",
    "score_test_points",
    "fit",
    "survival_contamination",
    "correlation_report",
    "spectrum_report",
    "fit_scaling_exponent",
    "mni_regime",
    "averaging_regime",
    "legacy_regimes",
    "regression_works",
    "run_trial",
    "run_sweep",
]
