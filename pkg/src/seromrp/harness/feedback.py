"""Model-feedback analysis: how priors and estimated specificity pull prevalence down."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..model import CovariateSchema, build_model_ladder, cell_table
from ..poststrat import prior_predictive
from ..seeds import derive_seed
from .config import ExperimentConfig

PRIOR_MODELS = (0, 5)
PRIOR_COLUMNS = ("model", "draw", "prevalence", "test_positive", "sensitivity", "specificity")
POSTERIOR_COLUMNS = (
    "model", "variant", "iteration", "interval",
    "pi_hat", "prevalence_lo", "prevalence_hi",
    "test_positive_hat", "test_positive_lo", "test_positive_hi",
    "sensitivity_hat", "sensitivity_lo", "sensitivity_hi",
    "specificity_hat", "specificity_lo", "specificity_hi",
)
WORKED_COLUMNS = ("sample_size", "positives", "sensitivity", "specificity",
                  "false_positives", "true_positives", "implied_prevalence")


def worked_table(sample_size: int, positives: int, specificities, sensitivity: float = 1.0) -> list[dict]:
    """Split observed positives into false and true positives under each specificity.

    Prevalence is first corrected for test error, the expected false positives
    among the implied negatives are rounded to a whole count, and the rest of
    the positives are taken as true.
    """
    if not 0 <= positives <= sample_size:
        raise ValueError("positives must lie in [0, sample_size]")
    rows = []
    raw = positives / sample_size
    for g in specificities:
        denom = sensitivity + g - 1.0
        if denom <= 0:
            raise ValueError("sensitivity + specificity must exceed 1")
        corrected = min(max((raw + g - 1.0) / denom, 0.0), 1.0)
        fp = int(round(sample_size * (1.0 - g) * (1.0 - corrected)))
        tp = positives - fp
        rows.append(dict(sample_size=sample_size, positives=positives, sensitivity=sensitivity,
                         specificity=g, false_positives=fp, true_positives=tp,
                         implied_prevalence=tp / sample_size))
    return rows


def prior_predictive_table(cfg: ExperimentConfig, models=PRIOR_MODELS) -> list[dict]:
    """Prior-predictive draws of prevalence and Pr(y*=1) on the condition's population."""
    from .runner import _population, conditions, measurement_for, task_seeds, tasks

    cond, variant = conditions(cfg)[0]
    t = tasks(cfg)[0]
    seeds = task_seeds(cfg, t)
    pop = _population(cfg.population_size, cfg.n_covariates, cond["levels"], cond["zeta1"],
                      cond["prevalence"], seeds["population"])
    schema = CovariateSchema.synthetic(cfg.n_covariates, cond["levels"])
    ladder = build_model_ladder(schema, variant, measurement_for(cfg, cond))
    rows = []
    for m in models:
        spec = ladder[m]
        seed = derive_seed(cfg.seed, cfg.experiment, "prior", m)
        est = prior_predictive(spec, cell_table(pop, spec), cfg.prior_draws, seed, schema)
        for i in range(len(est)):
            rows.append(dict(model=m, draw=i, prevalence=float(est.prevalence[i]),
                             test_positive=float(est.test_positive[i]),
                             sensitivity=float(est.sensitivity[i]), specificity=float(est.specificity[i])))
    return rows


def posterior_table(cfg: ExperimentConfig, rows: list[dict]) -> list[dict]:
    out = []
    for r in rows:
        if r["method"] != "bayes":
            continue
        d = {k: r.get(k) for k in POSTERIOR_COLUMNS}
        d["interval"] = cfg.interval
        out.append(d)
    return out


def run_feedback_analysis(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Prior-predictive draws, posterior summaries per model, and the worked table.

    Posterior fits go through the regular task grid, so this also writes
    ``results.csv`` and the manifest.
    """
    from .runner import collect_rows, run_experiment, tasks

    if cfg.experiment != "feedback":
        cfg = ExperimentConfig(**{**cfg.to_dict(), "experiment": "feedback"})
    out = run_experiment(cfg, out_dir)
    rows = collect_rows(out, tasks(cfg))
    return _tables(cfg, rows)


def _tables(cfg: ExperimentConfig, rows) -> dict:
    wt = cfg.worked_table
    return {
        "prior_predictive": prior_predictive_table(cfg),
        "posterior": posterior_table(cfg, rows),
        "worked_table": worked_table(wt["sample_size"], wt["positives"], wt["specificities"],
                                     wt.get("sensitivity", 1.0)),
    }


def write_feedback_tables(cfg: ExperimentConfig, out: Path, rows) -> dict:
    from .runner import write_csv

    tables = _tables(cfg, rows)
    write_csv(Path(out) / "prior_predictive.csv", PRIOR_COLUMNS, tables["prior_predictive"])
    write_csv(Path(out) / "posterior_summary.csv", POSTERIOR_COLUMNS, tables["posterior"])
    write_csv(Path(out) / "worked_table.csv", WORKED_COLUMNS, tables["worked_table"])
    return tables


def prior_mass_below(rows: list[dict], model: int, threshold: float = 0.001) -> float:
    x = np.array([r["prevalence"] for r in rows if r["model"] == model])
    return float(np.mean(x < threshold))
