"""Bayesian network autocorrelation models with heterogeneous susceptibility to social influence."""

from .graph import (
    LocalFeatures,
    Network,
    betweenness,
    degree_and_inverse,
    degrees,
    eigencentrality,
    local_clustering,
    local_features,
    read_edge_list,
    row_normalize,
    standardize,
    validate_network,
)
from .model import (
    AssembledModel,
    DesignSet,
    ModelContext,
    ModelSpec,
    ParameterState,
    Variant,
    assemble,
    log_determinant_fast,
    marginal_log_posterior,
    susceptibility_diag_eps,
    susceptibility_diag_x,
)
from .durbin import DurbinFit, durbin_laplace, fit_durbin, sample_durbin
from .inference import (
    FitSummary,
    GammaPosterior,
    OptimOptions,
    PosteriorDraws,
    SummaryRow,
    fit_variant,
    optimize_marginal,
    sample_posterior,
    summarize,
)
from .ego import (
    EgoDesign,
    EgoPartition,
    EgoSweepResult,
    assemble_ego_ma,
    ego_sweep,
    partition,
    restrict_design,
)
from .sim import (
    CovariateRecipe,
    StudyConfig,
    StudyResult,
    coverage_study,
    erdos_renyi,
    simulate_covariates,
    simulate_response,
)

__version__ = "0.1.0"

__all__ = [
    "AssembledModel", "CovariateRecipe", "DesignSet", "DurbinFit", "EgoDesign",
    "EgoPartition", "EgoSweepResult", "FitSummary", "GammaPosterior", "LocalFeatures",
    "ModelContext", "ModelSpec", "Network", "OptimOptions", "ParameterState",
    "PosteriorDraws", "StudyConfig", "StudyResult", "SummaryRow", "Variant",
    "assemble", "assemble_ego_ma", "betweenness", "coverage_study",
    "degree_and_inverse", "degrees", "durbin_laplace", "ego_sweep",
    "eigencentrality", "erdos_renyi", "fit_durbin", "fit_variant",
    "local_clustering", "local_features", "log_determinant_fast",
    "marginal_log_posterior", "optimize_marginal", "partition", "read_edge_list",
    "restrict_design", "row_normalize", "sample_durbin", "sample_posterior",
    "simulate_covariates", "simulate_response", "standardize",
    "summarize", "susceptibility_diag_eps", "susceptibility_diag_x",
    "validate_network", "__version__",
]
