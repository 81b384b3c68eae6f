from .diagnostics import DiagnosticError, Diagnostics, diagnose, ess_bulk, split_rhat
from .mle import MleResult, fit_mle_logistic, mle_cell_prevalence
from .posterior import (
    McmcConfig,
    ParameterVector,
    PosteriorDraws,
    PosteriorModel,
    log_likelihood_terms,
    sample_cells,
    sample_posterior,
)

__all__ = [
    "DiagnosticError",
    "Diagnostics",
    "McmcConfig",
    "MleResult",
    "ParameterVector",
    "PosteriorDraws",
    "PosteriorModel",
    "diagnose",
    "ess_bulk",
    "fit_mle_logistic",
    "log_likelihood_terms",
    "mle_cell_prevalence",
    "sample_cells",
    "sample_posterior",
    "split_rhat",
]
