"""Disclosure-limiting transformations of observational data, combined
with randomized-experiment data for treatment-effect estimation."""

from .core_model import (
    DataMatrix,
    GramMatrix,
    LinearModel,
    MomentSummary,
    Provenance,
    compute_gram,
    ols_from_gram,
    partition_gram,
    predict,
    reconstruct_gram,
)
from .errors import (
    AllReplicatesFailed,
    ConfigError,
    DegenerateColumn,
    DegenerateSample,
    EmptyArm,
    Infeasible,
    InvalidBudget,
    NumericalError,
    PrivshiftError,
    SingularSystem,
    TooFewRows,
)
from .estimators import (
    CalibrationWeights,
    EstimateResult,
    RctSample,
    acw_estimate,
    acw_pipeline,
    bootstrap_ci,
    calibration_weights,
    cw_estimate,
    diff_in_means,
    fipw_estimate,
    ipw_estimate,
    loop_estimate,
    regression_adjusted,
)
from .privacy import (
    BudgetLedger,
    NoiseSpec,
    PrivacyBudget,
    allocate_budget,
    dp_gram_transform,
    en_transform,
    gaussian_gamma,
    gaussian_mechanism,
    loo_sensitivity,
)
from .simulation import (
    GeneralizationConfig,
    PrecisionConfig,
    StudyResults,
    mse_decompose,
    run_generalization_study,
    run_precision_study,
)
from .synthesis import SequentialSynthesizer, fit_sequential, synthesize
from .transforms import TransformSpec, apply_transform, parse_transforms

__version__ = "0.1.0"

__all__ = [
    "AllReplicatesFailed",
    "BudgetLedger",
    "CalibrationWeights",
    "ConfigError",
    "DataMatrix",
    "DegenerateColumn",
    "DegenerateSample",
    "EmptyArm",
    "EstimateResult",
    "GeneralizationConfig",
    "GramMatrix",
    "Infeasible",
    "InvalidBudget",
    "LinearModel",
    "MomentSummary",
    "NoiseSpec",
    "NumericalError",
    "PrecisionConfig",
    "PrivacyBudget",
    "PrivshiftError",
    "Provenance",
    "RctSample",
    "SequentialSynthesizer",
    "SingularSystem",
    "StudyResults",
    "TooFewRows",
    "TransformSpec",
    "acw_estimate",
    "acw_pipeline",
    "allocate_budget",
    "apply_transform",
    "bootstrap_ci",
    "calibration_weights",
    "compute_gram",
    "cw_estimate",
    "diff_in_means",
    "dp_gram_transform",
    "en_transform",
    "fipw_estimate",
    "fit_sequential",
    "gaussian_gamma",
    "gaussian_mechanism",
    "ipw_estimate",
    "loo_sensitivity",
    "loop_estimate",
    "mse_decompose",
    "ols_from_gram",
    "parse_transforms",
    "partition_gram",
    "predict",
    "reconstruct_gram",
    "regression_adjusted",
    "run_generalization_study",
    "run_precision_study",
    "synthesize",
]
