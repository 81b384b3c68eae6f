"""Maximum-likelihood logistic regression by Newton-Raphson (IRLS).

Varying-intercept terms are encoded as fixed effects with treatment coding
(the first level is the reference), so any ladder model without a
measurement layer can be fitted classically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..model import CellTable, CovariateSchema, ModelSpec

SCORE_TOL = 1e-8
MAX_ITER = 100
DIVERGENCE_BOUND = 20.0


@dataclass(frozen=True)
class MleResult:
    names: list
    coef: np.ndarray
    converged: bool
    status: str
    iterations: int
    max_abs_score: float

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])


def design_matrix(cells: CellTable, spec: ModelSpec, schema: CovariateSchema | None = None):
    cols = [np.ones(len(cells))]
    names = ["beta0"]
    for c in spec.slopes:
        cols.append(cells.slope_column(c))
        names.append(f"beta[{c}]")
    for c in spec.varying:
        L = schema[c].levels if schema is not None else int(cells.level_column(c).max())
        lev = cells.level_column(c)
        for l in range(2, L + 1):
            cols.append((lev == l).astype(float))
            names.append(f"{c}[{l}]")
    return np.column_stack(cols), names


def irls(X: np.ndarray, successes: np.ndarray, trials: np.ndarray, max_iter: int = MAX_ITER,
         tol: float = SCORE_TOL):
    """Newton iterations on binomial counts. Returns (coef, iterations, max |score|, converged)."""
    X = np.asarray(X, float)
    s = np.asarray(successes, float)
    n = np.asarray(trials, float)
    beta = np.zeros(X.shape[1])
    score = X.T @ (s - n * expit(X @ beta))
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        w = n * p * (1.0 - p)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        beta = beta + step
        score = X.T @ (s - n * expit(X @ beta))
        if np.max(np.abs(score)) < tol:
            return beta, it, float(np.max(np.abs(score))), True
        if not np.all(np.isfinite(beta)):
            break
    return beta, it, float(np.max(np.abs(score))), False


def fit_mle_logistic(cells: CellTable, spec: ModelSpec, schema: CovariateSchema | None = None) -> MleResult:
    """Classical fit on aggregated sample cells.

    Separation shows up as coefficients running off to infinity: those are
    reported as +/-inf with status ``"separation"`` rather than as a large
    finite number.
    """
    if spec.measurement is not None:
        raise ValueError("maximum likelihood fits take no measurement layer")
    if cells.positives is None:
        raise ValueError("sample cells need per-cell positive counts")
    X, names = design_matrix(cells, spec, schema)
    beta, it, score, converged = irls(X, cells.positives, cells.counts)

    runaway = ~np.isfinite(beta) | (np.abs(beta) > DIVERGENCE_BOUND)
    if runaway.any():
        coef = np.where(runaway, np.sign(np.nan_to_num(beta)) * np.inf, beta)
        return MleResult(names, coef, False, "separation", it, score)
    return MleResult(names, beta, converged, "converged" if converged else "max_iterations", it, score)


def mle_cell_prevalence(result: MleResult, cells: CellTable, spec: ModelSpec,
                        schema: CovariateSchema | None = None) -> np.ndarray:
    """Per-cell fitted probabilities; infinite coefficients give limits 0 or 1."""
    X, _ = design_matrix(cells, spec, schema)
    with np.errstate(invalid="ignore"):
        eta = np.where(X != 0, X * result.coef, 0.0).sum(axis=1)
    return expit(eta)
