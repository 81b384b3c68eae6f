"""Cell predictions, poststratified prevalence and predictive checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .inference.kernels import T_NU, T_SCALE, cell_eta, weighted_prevalence
from .inference.posterior import ParameterVector, PosteriorDraws
from .model import (
    POPULATION_COUNTS,
    CellTable,
    CovariateSchema,
    EstimatedBoth,
    EstimatedSpecificity,
    KnownErrorRates,
    ModelSpec,
    SchemaError,
)
from .seeds import rng


@dataclass
class EstimandDraws:
    """Per-draw population prevalence, sample PPC mean and test-positive rate."""

    prevalence: np.ndarray
    sample_mean: np.ndarray | None
    test_positive: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    labels: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.prevalence)

    def columns(self) -> dict:
        cols = {
            "prevalence": self.prevalence,
            "test_positive": self.test_positive,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
        }
        if self.sample_mean is not None:
            cols["sample_mean"] = self.sample_mean
        return cols


class _Design:
    """Level indices and slope values of a cell table, aligned with a spec."""

    def __init__(self, spec: ModelSpec, cells: CellTable, schema: CovariateSchema | None):
        if tuple(cells.covariates) != tuple(spec.covariates):
            raise SchemaError("cell table was built for a different model")
        self.varying = spec.varying
        self.slopes = spec.slopes
        lev = [cells.level_column(c) - 1 for c in self.varying]
        self.lev = (np.column_stack(lev) if lev else np.zeros((len(cells), 0))).astype(np.int64)
        if schema is not None:
            self.n_levels = np.array([schema[c].levels for c in self.varying], dtype=np.int64)
        else:
            self.n_levels = (self.lev.max(axis=0) + 1) if lev else np.zeros(0, dtype=np.int64)
        if self.lev.size and np.any(self.lev.max(axis=0) >= self.n_levels):
            raise SchemaError("cell references a level the model has no offset for")
        self.zoff = np.concatenate([[0], np.cumsum(self.n_levels)[:-1]]).astype(np.int64)
        self.xs = np.ascontiguousarray(
            np.column_stack([cells.slope_column(c) for c in self.slopes]) if self.slopes
            else np.zeros((len(cells), 0))
        )

    def stack(self, beta0, beta: dict, alpha: dict):
        """Batch parameter arrays in kernel layout; inputs have a leading draw axis."""
        beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
        B = beta0.shape[0]
        b = np.column_stack([np.asarray(beta[c], float).reshape(B) for c in self.slopes]) if self.slopes \
            else np.zeros((B, 0))
        a = np.concatenate([np.asarray(alpha[c], float).reshape(B, -1) for c in self.varying], axis=1) \
            if self.varying else np.zeros((B, 0))
        if a.shape[1] != int(self.n_levels.sum()):
            raise SchemaError("varying-intercept draws do not match the number of levels")
        return beta0, np.ascontiguousarray(b), np.ascontiguousarray(a)


def cell_prevalence(draw: ParameterVector, cells: CellTable, spec: ModelSpec,
                    schema: CovariateSchema | None = None) -> np.ndarray:
    """Inverse-logit prediction for every cell under one parameter draw."""
    d = _Design(spec, cells, schema)
    alpha = {c: np.asarray(draw.alpha[c], float)[None, :] for c in d.varying}
    if schema is None:
        d.n_levels = np.array([len(draw.alpha[c]) for c in d.varying], dtype=np.int64)
        d.zoff = np.concatenate([[0], np.cumsum(d.n_levels)[:-1]]).astype(np.int64)
        if d.lev.size and np.any(d.lev.max(axis=0) >= d.n_levels):
            raise SchemaError("cell references a level the draw has no offset for")
    b0, b, a = d.stack([draw.beta0], {c: [draw.beta[c]] for c in d.slopes}, alpha)
    return expit(cell_eta(b0, b, a, d.zoff, d.lev, d.xs)[0])


def _weighted_mean(values, counts) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if not total > 0:
        raise ValueError("cell counts sum to zero")
    return float(np.dot(counts, np.asarray(values, dtype=float)) / total)


def population_estimate(cell_probs, cells: CellTable) -> float:
    """Population-count weighted mean of cell predictions."""
    return _weighted_mean(cell_probs, cells.counts)


def sample_ppc_mean(cell_probs, cells: CellTable) -> float:
    """Sample-count weighted mean of cell predictions."""
    return _weighted_mean(cell_probs, cells.counts)


def _batch_prevalence(design: _Design, cells: CellTable, beta0, beta, alpha) -> np.ndarray:
    b0, b, a = design.stack(beta0, beta, alpha)
    return weighted_prevalence(b0, b, a, design.zoff, design.lev, design.xs, cells.counts.astype(float))


def _error_rates(spec: ModelSpec):
    m = spec.measurement
    if m is None:
        return 1.0, 1.0
    if isinstance(m, KnownErrorRates):
        return m.sensitivity, m.specificity
    if isinstance(m, EstimatedSpecificity):
        return m.sensitivity, None
    return None, None


def estimand_draws(draws: PosteriorDraws, pop_cells: CellTable, sample_cells: CellTable | None,
                   spec: ModelSpec, schema: CovariateSchema) -> EstimandDraws:
    """Poststratified prevalence, sample PPC mean and Pr(y*=1) for every draw."""
    if pop_cells.count_kind != POPULATION_COUNTS:
        raise ValueError("population estimates need population cell counts")
    d = _Design(spec, pop_cells, schema)
    flat = draws.values.reshape(-1, draws.values.shape[-1])
    col = {n: i for i, n in enumerate(draws.names)}
    beta0 = flat[:, col["beta0"]]
    beta = {c: flat[:, col[f"beta[{c}]"]] for c in d.slopes}
    alpha = {}
    for c, L in zip(d.varying, d.n_levels):
        alpha[c] = flat[:, [col[f"alpha[{c},{l + 1}]"] for l in range(L)]]
    prev = _batch_prevalence(d, pop_cells, beta0, beta, alpha)
    ppc = None
    if sample_cells is not None:
        ds = _Design(spec, sample_cells, schema)
        ppc = _batch_prevalence(ds, sample_cells, beta0, beta, alpha)

    sens, spec_rate = _error_rates(spec)
    B = len(beta0)
    sens_d = flat[:, col["sensitivity"]] if sens is None else np.full(B, float(sens))
    spec_d = flat[:, col["specificity"]] if spec_rate is None else np.full(B, float(spec_rate))
    test_pos = (1.0 - spec_d) * (1.0 - prev) + sens_d * prev
    return EstimandDraws(prev, ppc, test_pos, sens_d, spec_d, {"model": spec.label, "variant": spec.variant})


def prior_predictive(spec: ModelSpec, cells: CellTable, n_draws: int = 10_000, seed=0,
                     schema: CovariateSchema | None = None) -> EstimandDraws:
    """Prevalence and Pr(y*=1) implied by the priors alone."""
    g = rng(seed)
    d = _Design(spec, cells, schema)
    t = lambda size=None: T_SCALE * g.standard_t(T_NU, size=size)
    beta0 = t(n_draws)
    beta = {c: t(n_draws) for c in d.slopes}
    alpha = {}
    for c, L in zip(d.varying, d.n_levels):
        sigma = np.abs(t(n_draws))
        alpha[c] = sigma[:, None] * g.standard_normal((n_draws, L))
    prev = _batch_prevalence(d, cells, beta0, beta, alpha)

    m = spec.measurement
    sens, spec_rate = _error_rates(spec)
    if spec_rate is None:
        spec_d = g.beta(*m.calibration.specificity_prior(), size=n_draws)
    else:
        spec_d = np.full(n_draws, float(spec_rate))
    if sens is None:
        sens_d = g.beta(*m.calibration.sensitivity_prior(), size=n_draws)
    else:
        sens_d = np.full(n_draws, float(sens))
    test_pos = (1.0 - spec_d) * (1.0 - prev) + sens_d * prev
    return EstimandDraws(prev, None, test_pos, sens_d, spec_d, {"model": spec.label, "variant": spec.variant})


def credible_interval(x, level: float = 0.9) -> tuple[float, float]:
    """Equal-tailed quantile interval; 0.9 and 0.8 are the presets in use."""
    lo = (1.0 - level) / 2.0
    q = np.quantile(np.asarray(x), [lo, 1.0 - lo])
    return float(q[0]), float(q[1])
