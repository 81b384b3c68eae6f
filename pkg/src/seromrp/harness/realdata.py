"""Real-data mode: an external sample and poststratification table, no truth.

Sample CSV columns: ``<covariate>_level`` (1-based) for every covariate,
optionally ``<covariate>`` holding a continuous value, and ``y_star``.
Poststratification CSV: the same level and continuous columns plus ``count``.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..inference import sample_cells
from ..metrics import IterationResult
from ..model import (
    POPULATION_COUNTS,
    CalibrationData,
    CellTable,
    Covariate,
    CovariateSchema,
    EstimatedBoth,
    EstimatedSpecificity,
    SchemaError,
    build_model_ladder,
)
from ..seeds import derive_seed
from ..synthpop import ConfigurationError
from .config import ExperimentConfig
from .fitting import INTERVAL_FIELDS, fit_bayes


class _Units:
    def __init__(self, levels: dict, continuous: dict, n: int):
        self.levels = levels
        self.continuous = continuous
        self.n_units = n


def _read_columns(path) -> dict:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as err:
        raise ConfigurationError(f"cannot read {path}: {err}") from None
    if not rows:
        raise ConfigurationError(f"{path} has no rows")
    return {k: [r[k] for r in rows] for k in rows[0]}


def _units(cols: dict, schema: CovariateSchema, path) -> _Units:
    levels, cont = {}, {}
    for c in schema.covariates:
        key = f"{c.name}_level"
        if key not in cols:
            raise ConfigurationError(f"{path} lacks column {key!r}")
        lev = np.array([int(v) for v in cols[key]], dtype=np.int64)
        if lev.min() < 1 or lev.max() > c.levels:
            raise ConfigurationError(f"{path}: {key} outside 1..{c.levels}")
        levels[c.name] = lev
        if c.name in cols:
            cont[c.name] = np.array([float(v) for v in cols[c.name]])
    return _Units(levels, cont, len(next(iter(cols.values()))))


def weighted_cell_table(units: _Units, weights: np.ndarray, spec) -> CellTable:
    """Cells of a poststratification table whose rows carry population counts."""
    covs, slopes = tuple(spec.covariates), tuple(spec.slopes)
    for s in slopes:
        if s not in units.continuous:
            raise SchemaError(f"poststratification table has no continuous column {s!r}")
    if covs:
        lev = np.column_stack([units.levels[c] for c in covs])
        uniq, inv = np.unique(lev, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
    else:
        uniq, inv = np.empty((1, 0), dtype=np.int64), np.zeros(units.n_units, dtype=np.int64)
    counts = np.bincount(inv, weights=weights, minlength=len(uniq))
    vals = np.empty((len(uniq), len(slopes)))
    for q, s in enumerate(slopes):
        vals[:, q] = np.bincount(inv, weights=weights * units.continuous[s], minlength=len(uniq)) / counts
    return CellTable(covs, uniq, slopes, vals, counts, POPULATION_COUNTS)


def _measurement(data: dict):
    cal = data.get("calibration")
    if not cal:
        return None
    c = CalibrationData(tp=cal.get("tp", 0), fn=cal.get("fn", 0), tn=cal.get("tn", 0), fp=cal.get("fp", 0))
    if c.m_delta > 0:
        return EstimatedBoth(c)
    return EstimatedSpecificity(c)


def run_real_data(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Fit the requested ladder models and write ``results.csv`` without truth columns."""
    from .runner import RESULT_COLUMNS, result_row, write_csv

    data = cfg.data
    schema = CovariateSchema(tuple(Covariate(k, int(v)) for k, v in data["covariates"].items()))
    base = Path(out_dir or cfg.output_dir)
    sample_cols = _read_columns(data["sample"])
    if "y_star" not in sample_cols:
        raise ConfigurationError("sample file lacks the y_star column")
    sample = _units(sample_cols, schema, data["sample"])
    sample.y_star = np.array([int(v) for v in sample_cols["y_star"]], dtype=np.int64)
    ps_cols = _read_columns(data["poststrat"])
    if "count" not in ps_cols:
        raise ConfigurationError("poststratification file lacks the count column")
    ps = _units(ps_cols, schema, data["poststrat"])
    weights = np.array([float(v) for v in ps_cols["count"]])

    try:
        ladder = build_model_ladder(schema, cfg.variants[0], _measurement(data))
    except SchemaError as err:
        raise ConfigurationError(str(err)) from None
    base.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in cfg.models:
        spec = ladder[m]
        scells = sample_cells(sample, spec)
        pcells = weighted_cell_table(ps, weights, spec)
        seed = derive_seed(cfg.seed, "real_data", cfg.variants[0], m, "mcmc")
        fit = fit_bayes(spec, scells, pcells, schema, cfg.mcmc_config(seed), cfg.interval)
        res = IterationResult(
            condition={"experiment": "real_data", "n": int(sample.n_units)}, model=m, iteration=0,
            pi_hat=fit.pi_hat, beta0_hat=fit.beta0_hat, variant=cfg.variants[0],
            pi_hat_mean=fit.pi_hat_mean, ppc_mean=fit.ppc_mean, test_positive_hat=fit.test_positive_hat,
            specificity_hat=fit.specificity_hat, sensitivity_hat=fit.sensitivity_hat,
            sample_test_mean=float(sample.y_star.mean()), warnings=fit.warnings,
        )
        row = result_row(f"real_model{m}", res)
        row["true_sensitivity"] = row["true_specificity"] = None
        for k in INTERVAL_FIELDS:
            lo, hi = fit.intervals.get(k, (math.nan, math.nan))
            row[f"{k}_lo"], row[f"{k}_hi"] = lo, hi
        row["divergences"] = fit.divergences
        rows.append(row)
        if cfg.save_draws:
            path = base / "draws" / f"real_model{m}.csv"
            path.parent.mkdir(exist_ok=True)
            fit.draws.to_csv(path, extra=fit.estimands.columns())
    write_csv(base / "results.csv", RESULT_COLUMNS, rows)
    return base
