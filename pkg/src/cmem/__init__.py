"""Count time series with multiplicative conditional-mean dynamics.

The package covers integer multiplicative operators (sampling, conditional
pmfs and generating functions), feedback models for the conditional mean,
closed-form and linear-system second-order moments, quasi-likelihood and
weighted least-squares estimation with robust standard errors, residual
diagnostics, and a Monte-Carlo study driver with a small CLI on top.
"""

from .errors import (
    CmemError,
    DataFormatError,
    DomainError,
    EstimationError,
    NumericalError,
    StationarityError,
)
from .operators import (
    BINOMIAL_OP,
    DEGENERATE_ONE,
    NB_OP,
    POISSON_OP,
    POISSON_UNIT,
    InnovationSpec,
    OperatorSpec,
    conditional_pmf,
    conditional_support,
    empirical,
    innovation_pgf,
    innovation_support,
    innovation_variance,
    innovation_with_variance,
    nu,
    operator_pgf,
    sample_innovation,
    sample_operator,
    three_point,
    three_point_from_sigma2,
    zip_operator,
    zip_unit,
)
from .model import (
    EstimationWarning,
    MeanSpec,
    ModelSpec,
    MomentSummary,
    acf_closed_form_11,
    check_first_order_stationarity,
    check_second_order_stationarity_11,
    conditional_mean_path,
    mean_variance_ratio_11,
    moment_estimate_11,
    moment_summary,
    sample_acf,
    simulate,
    unconditional_mean,
    variance_slope_v1,
)
from .estimation import (
    EQ,
    NQ,
    PQ,
    W1,
    W2,
    EstimatorKind,
    FitOptions,
    FitResult,
    conditional_variance,
    estimate_sigma2,
    fit,
    fit_qmle,
    fit_wlse,
    mean_gradient_path,
    qmle_objective,
    sandwich_se,
)
from .diagnostics import (
    DiagnosticsReport,
    FilterState,
    ModelSampleComparison,
    filter_state,
    holdout_evaluate,
    mean_absolute_residual,
    model_vs_sample_report,
    mspr,
    nb_suitability_screen,
    pearson_residuals,
    predicted_scaled_variance,
    residual_report,
    scaled_residual_stats,
    scaled_residuals,
)
from .simstudy import (
    FitSpec,
    MisspecConfig,
    SimStudyConfig,
    SimStudyResult,
    misspecification_report,
    run_sim_study,
    trimmed_stats,
)

__version__ = "0.1.0"

__all__ = [
    "CmemError",
    "DataFormatError",
    "DomainError",
    "EstimationError",
    "NumericalError",
    "StationarityError",
    "OperatorSpec",
    "InnovationSpec",
    "POISSON_OP",
    "NB_OP",
    "BINOMIAL_OP",
    "DEGENERATE_ONE",
    "POISSON_UNIT",
    "zip_operator",
    "three_point",
    "three_point_from_sigma2",
    "zip_unit",
    "empirical",
    "innovation_variance",
    "innovation_with_variance",
    "innovation_pgf",
    "innovation_support",
    "sample_innovation",
    "nu",
    "sample_operator",
    "conditional_pmf",
    "conditional_support",
    "operator_pgf",
    "EstimationWarning",
    "MeanSpec",
    "ModelSpec",
    "MomentSummary",
    "check_first_order_stationarity",
    "check_second_order_stationarity_11",
    "variance_slope_v1",
    "unconditional_mean",
    "conditional_mean_path",
    "simulate",
    "acf_closed_form_11",
    "mean_variance_ratio_11",
    "moment_summary",
    "sample_acf",
    "moment_estimate_11",
    "EstimatorKind",
    "PQ",
    "NQ",
    "EQ",
    "W1",
    "W2",
    "FitOptions",
    "FitResult",
    "fit",
    "fit_qmle",
    "fit_wlse",
    "qmle_objective",
    "mean_gradient_path",
    "conditional_variance",
    "estimate_sigma2",
    "sandwich_se",
    "pearson_residuals",
    "mspr",
    "scaled_residuals",
    "scaled_residual_stats",
    "mean_absolute_residual",
    "predicted_scaled_variance",
    "nb_suitability_screen",
    "DiagnosticsReport",
    "residual_report",
    "FilterState",
    "filter_state",
    "holdout_evaluate",
    "ModelSampleComparison",
    "model_vs_sample_report",
    "FitSpec",
    "SimStudyConfig",
    "SimStudyResult",
    "trimmed_stats",
    "run_sim_study",
    "MisspecConfig",
    "misspecification_report",
    "__version__",
]
