"""One model fit on one sample: posterior draws reduced to point estimates."""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from ..inference import (
    McmcConfig,
    PosteriorModel,
    fit_mle_logistic,
    mle_cell_prevalence,
    sample_posterior,
)
from ..model import CellTable, CovariateSchema, ModelSpec
from ..poststrat import EstimandDraws, credible_interval, estimand_draws, population_estimate


@dataclass
class FitSummary:
    pi_hat: float
    beta0_hat: float
    pi_hat_mean: float = float("nan")
    ppc_mean: float = float("nan")
    test_positive_hat: float = float("nan")
    specificity_hat: float = float("nan")
    sensitivity_hat: float = float("nan")
    intervals: dict = field(default_factory=dict)
    divergences: int = 0
    warnings: list = field(default_factory=list)
    estimands: EstimandDraws | None = None
    draws: object = None


INTERVAL_FIELDS = ("prevalence", "test_positive", "specificity", "sensitivity")


def fit_bayes(spec: ModelSpec, sample_cells: CellTable, pop_cells: CellTable, schema: CovariateSchema,
              mcmc: McmcConfig, interval: float = 0.9) -> FitSummary:
    model = PosteriorModel(spec, sample_cells, schema)
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)
        draws = sample_posterior(model, mcmc, check=True)
    est = estimand_draws(draws, pop_cells, sample_cells, spec, schema)
    cols = est.columns()
    out = FitSummary(
        pi_hat=float(np.median(est.prevalence)),
        beta0_hat=float(np.median(draws.flat("beta0"))),
        pi_hat_mean=float(np.mean(est.prevalence)),
        ppc_mean=float(np.median(est.sample_mean)) if est.sample_mean is not None else float("nan"),
        test_positive_hat=float(np.median(est.test_positive)),
        specificity_hat=float(np.median(est.specificity)),
        sensitivity_hat=float(np.median(est.sensitivity)),
        intervals={k: credible_interval(cols[k], interval) for k in INTERVAL_FIELDS},
        divergences=draws.divergences,
        warnings=list(draws.warnings),
        estimands=est,
        draws=draws,
    )
    return out


def fit_mle(spec: ModelSpec, sample_cells: CellTable, pop_cells: CellTable,
            schema: CovariateSchema) -> FitSummary:
    res = fit_mle_logistic(sample_cells, spec, schema)
    with np.errstate(over="ignore"):
        probs = mle_cell_prevalence(res, pop_cells, spec, schema)
    pi = population_estimate(probs, pop_cells)
    warn = [] if res.converged else [f"mle {res.status} after {res.iterations} iterations"]
    return FitSummary(pi_hat=pi, beta0_hat=res.intercept, pi_hat_mean=pi, test_positive_hat=pi,
                      specificity_hat=1.0, sensitivity_hat=1.0, warnings=warn)
