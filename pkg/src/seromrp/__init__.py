"""Multilevel regression and poststratification for prevalence under imperfect tests."""

__version__ = "0.1.0"

from .metrics import IterationResult, aggregate, compute_metrics, summarize
from .model import (
    CalibrationData,
    CellTable,
    Covariate,
    CovariateSchema,
    EstimatedBoth,
    EstimatedSpecificity,
    KnownErrorRates,
    ModelSpec,
    Term,
    TermType,
    build_model_ladder,
    cell_table,
)
from .poststrat import estimand_draws, population_estimate, prior_predictive, sample_ppc_mean
from .synthpop import (
    PopulationConfig,
    calibration_counts,
    corrupt_measurements,
    draw_sample,
    generate_population,
    observable_bounds,
    solve_intercept,
)

__all__ = [
    "CalibrationData",
    "CellTable",
    "Covariate",
    "CovariateSchema",
    "EstimatedBoth",
    "EstimatedSpecificity",
    "IterationResult",
    "KnownErrorRates",
    "ModelSpec",
    "PopulationConfig",
    "Term",
    "TermType",
    "aggregate",
    "build_model_ladder",
    "calibration_counts",
    "cell_table",
    "compute_metrics",
    "corrupt_measurements",
    "draw_sample",
    "estimand_draws",
    "generate_population",
    "observable_bounds",
    "population_estimate",
    "prior_predictive",
    "sample_ppc_mean",
    "solve_intercept",
    "summarize",
]
