"""Operating characteristics of Bayesian fixed and group-sequential
designs through a learned precision surrogate, with a matching brute
force Monte Carlo path for validation."""

from .bart import BartConfig, BartPosterior, bart_fit, bart_predict, load_bart, loocv, save_bart
from .design_space import (
    DesignBox,
    LambdaEstimate,
    TrainingSet,
    build_training_set,
    estimate_lambda,
    maximin_lhs,
    training_set_from_csv,
    training_set_to_csv,
)
from .errors import ConfigError, NumericalError
from .models import (
    Dataset,
    DesignPrior,
    GaussianPrior,
    LogisticSubgroupModel,
    Marginal,
    ModelSpec,
    ParameterPoint,
    PiecewiseExpSurvivalModel,
    load_model_spec,
    log_likelihood,
    model_spec_from_json,
    model_spec_to_json,
    prior_sample_matrix,
    psi,
    sample_design_prior,
    simulate_dataset,
)
from .oc import (
    CostSpec,
    MvnConfig,
    OcReport,
    TrialDesign,
    assurance,
    design_from_json,
    design_to_json,
    evaluate_design,
    gamma_joint,
    iec,
    iess,
    integrated_power_curve,
    load_design,
    optimize_design,
    power_fixed,
    power_uncertainty,
    report_from_json,
    report_to_csv,
    report_to_json,
    save_report,
    stop_probs,
)
from .oracle import OracleConfig, mc_gsd, mc_power_fixed
from .posterior import McmcConfig, PosteriorDraws, fit_posterior, posterior_summary, tau

__version__ = "0.1.0"

__all__ = [
    "BartConfig",
    "BartPosterior",
    "ConfigError",
    "CostSpec",
    "Dataset",
    "DesignBox",
    "DesignPrior",
    "GaussianPrior",
    "LambdaEstimate",
    "LogisticSubgroupModel",
    "Marginal",
    "McmcConfig",
    "ModelSpec",
    "MvnConfig",
    "NumericalError",
    "OcReport",
    "OracleConfig",
    "ParameterPoint",
    "PiecewiseExpSurvivalModel",
    "PosteriorDraws",
    "TrainingSet",
    "TrialDesign",
    "assurance",
    "bart_fit",
    "bart_predict",
    "build_training_set",
    "design_from_json",
    "design_to_json",
    "estimate_lambda",
    "evaluate_design",
    "fit_posterior",
    "gamma_joint",
    "iec",
    "iess",
    "integrated_power_curve",
    "load_bart",
    "load_design",
    "load_model_spec",
    "log_likelihood",
    "loocv",
    "maximin_lhs",
    "mc_gsd",
    "mc_power_fixed",
    "model_spec_from_json",
    "model_spec_to_json",
    "optimize_design",
    "posterior_summary",
    "power_fixed",
    "prior_sample_matrix",
    "power_uncertainty",
    "psi",
    "report_from_json",
    "report_to_csv",
    "report_to_json",
    "sample_design_prior",
    "save_bart",
    "save_report",
    "simulate_dataset",
    "stop_probs",
    "tau",
    "training_set_from_csv",
    "training_set_to_csv",
]
