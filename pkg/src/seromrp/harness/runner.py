"""Grid execution: (condition, iteration) tasks, a worker pool and one writer.

Output directory layout::

    manifest.json        config, config hash, code version, per-task seeds and status
    tasks/<task>.json    rows of one finished task (written atomically; drives resume)
    results.csv          iteration-level rows, RESULT_COLUMNS
    summary.csv/.json    aggregates, SUMMARY_COLUMNS
    draws/<task>_<method>_model<m>.csv   posterior and estimand draws (save_draws only)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import __version__
from ..metrics import IterationResult, aggregate
from ..model import (
    CovariateSchema,
    EstimatedBoth,
    EstimatedSpecificity,
    KnownErrorRates,
    build_model_ladder,
    cell_table,
)
from ..inference import sample_cells
from ..seeds import derive_seed
from ..synthpop import (
    ConfigurationError,
    PopulationConfig,
    calibration_counts,
    calibration_data,
    corrupt_measurements,
    draw_sample,
    generate_population,
)
from .config import ExperimentConfig
from .fitting import INTERVAL_FIELDS, fit_bayes, fit_mle

log = logging.getLogger(__name__)

WORKERS_ENV = "SEROMRP_WORKERS"

CONDITION_FIELDS = ("experiment", "n", "prevalence", "zeta1", "levels", "specificity", "m_gamma", "fp", "tn")
ESTIMATE_FIELDS = ("pi_hat", "pi_hat_mean", "beta0_hat", "ppc_mean", "test_positive_hat",
                   "specificity_hat", "sensitivity_hat", "sample_test_mean")
TRUTH_FIELDS = ("true_pi", "true_beta0", "true_sensitivity", "true_specificity", "true_test_positive")
INTERVAL_COLUMNS = tuple(f"{k}_{end}" for k in INTERVAL_FIELDS for end in ("lo", "hi"))
RESULT_COLUMNS = (
    ("task_id",) + CONDITION_FIELDS + ("variant", "method", "model", "iteration")
    + ESTIMATE_FIELDS + TRUTH_FIELDS + ("bias_pi", "bias_beta0", "delta_pi")
    + INTERVAL_COLUMNS + ("divergences", "warnings")
)
SUMMARY_COLUMNS = CONDITION_FIELDS + (
    "variant", "method", "model", "metric", "n_iterations", "median", "q1", "q3",
    "whisker_low", "whisker_high", "mean", "mcse", "n_outliers", "outliers",
)


# -- task enumeration ---------------------------------------------------------


@dataclass(frozen=True)
class Task:
    task_id: str
    condition: tuple  # (field, value) pairs in CONDITION_FIELDS order
    variant: str
    iteration: int

    @property
    def cond(self) -> dict:
        return dict(self.condition)


def conditions(cfg: ExperimentConfig) -> list[tuple[dict, str]]:
    """Grid points in a fixed order, each with its ladder variant."""
    exp = cfg.experiment
    measured = exp in ("exp2_1", "exp2_2", "exp3", "feedback")
    calibrated = exp in ("exp2_2", "exp3", "feedback")
    out = []
    for n in cfg.sample_sizes:
        for pi in cfg.prevalences:
            for z in cfg.zeta1:
                for L in cfg.levels:
                    for g in (cfg.specificities if measured else [None]):
                        for m in (cfg.m_gamma if calibrated else [None]):
                            fp, tn = calibration_counts(g, m) if calibrated else (None, None)
                            cond = dict(experiment=exp, n=n, prevalence=pi, zeta1=z, levels=L,
                                        specificity=g, m_gamma=m, fp=fp, tn=tn)
                            for v in (cfg.variants if exp == "exp3" else ["basic"]):
                                out.append((cond, v))
    return out


def tasks(cfg: ExperimentConfig) -> list[Task]:
    out = []
    for ci, (cond, variant) in enumerate(conditions(cfg)):
        for it in range(cfg.iterations):
            items = tuple((k, cond[k]) for k in CONDITION_FIELDS)
            out.append(Task(f"c{ci:04d}_i{it:04d}", items, variant, it))
    return out


# -- seeds ----------------------------------------------------------------------


def _population_key(cond: dict) -> tuple:
    return (cond["experiment"], "population", cond["prevalence"], cond["zeta1"], cond["levels"])


def _data_key(cond: dict, iteration: int) -> tuple:
    # calibration size and ladder variant are modelling choices: runs that differ only
    # in those see the same sample and test results, which pairs the comparisons
    return (cond["experiment"], cond["prevalence"], cond["zeta1"], cond["levels"], cond["n"],
            cond["specificity"], iteration)


def task_seeds(cfg: ExperimentConfig, task: Task) -> dict:
    cond = task.cond
    data = _data_key(cond, task.iteration)
    fits = {}
    for method in cfg.methods:
        for model in cfg.models:
            key = (*(cond[k] for k in CONDITION_FIELDS), task.variant, task.iteration, method, model, "mcmc")
            fits[f"{method}:{model}"] = derive_seed(cfg.seed, *key)
    return {
        "population": derive_seed(cfg.seed, *_population_key(cond)),
        "sample": derive_seed(cfg.seed, *data, "sample"),
        "tests": derive_seed(cfg.seed, *data, "tests"),
        "fits": fits,
    }


# -- per-task work (runs in workers) ----------------------------------------------


@lru_cache(maxsize=4)
def _population(N: int, K: int, levels: int, zeta1: float, prevalence: float, seed: int):
    return generate_population(PopulationConfig(N=N, K=K, levels=levels, zeta1=zeta1,
                                                prevalence=prevalence, seed=seed))


_POP_CELLS: dict = {}


def _pop_cells(pop_key: tuple, pop, spec):
    key = (pop_key, tuple(spec.covariates), tuple(spec.slopes))
    if key not in _POP_CELLS:
        if len(_POP_CELLS) > 32:
            _POP_CELLS.clear()
        _POP_CELLS[key] = cell_table(pop, spec)
    return _POP_CELLS[key]


def measurement_for(cfg: ExperimentConfig, cond: dict):
    exp = cond["experiment"]
    if exp in ("exp1_1", "exp1_2"):
        return None
    if exp == "exp2_1":
        return KnownErrorRates(sensitivity=cfg.sensitivity, specificity=cond["specificity"])
    if cfg.estimate_sensitivity:
        cal = calibration_data(cond["specificity"], cond["m_gamma"], **cfg.sensitivity_calibration)
        return EstimatedBoth(cal)
    return EstimatedSpecificity(calibration_data(cond["specificity"], cond["m_gamma"]),
                                sensitivity=cfg.sensitivity)


def run_task(cfg_doc: dict, task: Task, out_dir: str | None = None) -> list[dict]:
    """Fit every requested model to one simulated sample; returns result rows."""
    cfg = ExperimentConfig(**cfg_doc)
    cond = task.cond
    seeds = task_seeds(cfg, task)
    schema = CovariateSchema.synthetic(cfg.n_covariates, cond["levels"])
    pop_args = (cfg.population_size, cfg.n_covariates, cond["levels"], cond["zeta1"], cond["prevalence"],
                seeds["population"])
    pop = _population(*pop_args)
    sample = draw_sample(pop, cond["n"], seeds["sample"])
    gamma = 1.0 if cond["specificity"] is None else cond["specificity"]
    delta = cfg.sensitivity if cond["specificity"] is not None else 1.0
    sample = sample.with_tests(corrupt_measurements(sample.y, delta, gamma, seeds["tests"]))

    measurement = measurement_for(cfg, cond)
    ladder = build_model_ladder(schema, task.variant, measurement)
    rows = []
    for method in cfg.methods:
        for m in cfg.models:
            spec = ladder[m] if method == "bayes" else build_model_ladder(schema, task.variant)[m]
            scells = sample_cells(sample, spec)
            pcells = _pop_cells(pop_args, pop, spec)
            fit_seed = seeds["fits"][f"{method}:{m}"]
            try:
                if method == "mle":
                    fit = fit_mle(spec, scells, pcells, schema)
                else:
                    fit = fit_bayes(spec, scells, pcells, schema, cfg.mcmc_config(fit_seed), cfg.interval)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as err:
                log.warning("%s %s model %d failed: %s", task.task_id, method, m, err)
                rows.append(_failed_row(task, cond, method, m, sample, pop, gamma, delta, err))
                continue
            if cfg.save_draws and out_dir is not None and fit.draws is not None:
                path = Path(out_dir) / "draws" / f"{task.task_id}_{method}_model{m}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                fit.draws.to_csv(path, extra=fit.estimands.columns())
            res = IterationResult(
                condition=dict(cond), model=m, iteration=task.iteration, pi_hat=fit.pi_hat,
                beta0_hat=fit.beta0_hat, method=method, variant=task.variant, pi_hat_mean=fit.pi_hat_mean,
                ppc_mean=fit.ppc_mean, test_positive_hat=fit.test_positive_hat,
                specificity_hat=fit.specificity_hat, sensitivity_hat=fit.sensitivity_hat,
                sample_test_mean=float(np.mean(sample.y_star)), true_pi=pop.prevalence,
                true_beta0=pop.zeta0, true_sensitivity=delta, true_specificity=gamma,
                warnings=fit.warnings,
            )
            row = result_row(task.task_id, res)
            for k in INTERVAL_FIELDS:
                lo, hi = fit.intervals.get(k, (math.nan, math.nan))
                row[f"{k}_lo"], row[f"{k}_hi"] = lo, hi
            row["divergences"] = fit.divergences
            rows.append(row)
    return rows


def _failed_row(task, cond, method, m, sample, pop, gamma, delta, err) -> dict:
    nan = math.nan
    res = IterationResult(condition=dict(cond), model=m, iteration=task.iteration, pi_hat=nan,
                          beta0_hat=nan, method=method, variant=task.variant,
                          sample_test_mean=float(np.mean(sample.y_star)), true_pi=pop.prevalence,
                          true_beta0=pop.zeta0, true_sensitivity=delta, true_specificity=gamma,
                          warnings=[f"fit failed: {err}"])
    return result_row(task.task_id, res)


def result_row(task_id: str, res: IterationResult) -> dict:
    d = res.to_dict()
    row = {c: None for c in RESULT_COLUMNS}
    row.update({k: v for k, v in d.items() if k in row})
    row.update({k: res.condition.get(k) for k in CONDITION_FIELDS})
    row["task_id"] = task_id
    row["true_test_positive"] = res.true_test_positive
    row["warnings"] = "; ".join(res.warnings)
    row["divergences"] = 0
    return row


# -- persistence ------------------------------------------------------------------


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


_INT_FIELDS = {"n", "levels", "m_gamma", "fp", "tn", "model", "iteration", "divergences"}
_STR_FIELDS = {"task_id", "experiment", "variant", "method", "warnings", "metric", "outliers"}


def _parse(key: str, text: str):
    if text == "":
        return None
    if key in _STR_FIELDS:
        return text
    if key in _INT_FIELDS:
        return int(text)
    return float(text)


def read_results(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(k, v) for k, v in r.items()} for r in csv.DictReader(fh)]


def row_to_result(row: dict) -> IterationResult:
    return IterationResult(
        condition={k: row[k] for k in CONDITION_FIELDS}, model=row["model"], iteration=row["iteration"],
        pi_hat=_num(row["pi_hat"]), beta0_hat=_num(row["beta0_hat"]), method=row["method"],
        variant=row["variant"], pi_hat_mean=_num(row["pi_hat_mean"]), ppc_mean=_num(row["ppc_mean"]),
        test_positive_hat=_num(row["test_positive_hat"]), specificity_hat=_num(row["specificity_hat"]),
        sensitivity_hat=_num(row["sensitivity_hat"]), sample_test_mean=_num(row["sample_test_mean"]),
        true_pi=row["true_pi"], true_beta0=row["true_beta0"],
        true_sensitivity=_num(row["true_sensitivity"], 1.0), true_specificity=_num(row["true_specificity"], 1.0),
        warnings=[w for w in (row["warnings"] or "").split("; ") if w],
    )


def _num(v, default=math.nan) -> float:
    return default if v is None else float(v)


def summarize_rows(rows: list[dict]) -> list[dict]:
    return aggregate([row_to_result(r) for r in rows])


def write_summary(out_dir: Path, rows: list[dict]) -> list[dict]:
    summary = summarize_rows(rows)
    write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, summary)
    doc = [{c: s.get(c) for c in SUMMARY_COLUMNS} for s in summary]
    _atomic_write(out_dir / "summary.json", json.dumps(doc, indent=1, allow_nan=True) + "\n")
    return summary


# -- manifest ---------------------------------------------------------------------


def _manifest(cfg: ExperimentConfig, task_list, done: set) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash,
        "code_version": __version__,
        "tasks": [
            {
                "task_id": t.task_id,
                "condition": t.cond,
                "variant": t.variant,
                "iteration": t.iteration,
                "seeds": task_seeds(cfg, t),
                "status": "complete" if t.task_id in done else "pending",
            }
            for t in task_list
        ],
    }


def write_manifest(out_dir: Path, cfg, task_list, done) -> None:
    _atomic_write(out_dir / "manifest.json", json.dumps(_manifest(cfg, task_list, done), indent=1) + "\n")


def load_manifest(path) -> tuple[ExperimentConfig, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read manifest {path}: {err}") from None
    cfg = ExperimentConfig(**doc["config"])
    cfg.check()
    if cfg.config_hash != doc.get("config_hash"):
        raise ConfigurationError("manifest config does not match its recorded hash")
    return cfg, path.parent


def _completed(out_dir: Path) -> set:
    tdir = out_dir / "tasks"
    if not tdir.is_dir():
        return set()
    return {p.stem for p in tdir.glob("*.json")}


def worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be a positive integer") from None
        if n < 1:
            raise ConfigurationError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return cfg.workers


# -- driver -----------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None,
                   max_tasks: int | None = None) -> Path:
    """Run (or continue) the grid for ``cfg``; returns the output directory.

    Tasks already on disk are skipped, so calling this again on the same
    directory resumes an interrupted run. ``max_tasks`` stops after that many
    new tasks, leaving the grid incomplete (used to exercise resume).
    """
    if cfg.experiment == "real_data":
        from .realdata import run_real_data

        return run_real_data(cfg, out_dir)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = out / "manifest.json"
    if man.exists():
        prev = json.loads(man.read_text(encoding="utf-8"))
        if prev.get("config_hash") != cfg.config_hash:
            raise ConfigurationError(f"{out} holds a run with a different config")
    (out / "tasks").mkdir(exist_ok=True)

    task_list = tasks(cfg)
    done = _completed(out)
    todo = [t for t in task_list if t.task_id not in done]
    if max_tasks is not None:
        todo = todo[:max_tasks]
    write_manifest(out, cfg, task_list, done)

    n_workers = workers or worker_count(cfg)
    doc = cfg.to_dict()
    save_dir = str(out) if cfg.save_draws else None

    def finish(task, rows):
        _atomic_write(out / "tasks" / f"{task.task_id}.json",
                      json.dumps({"task_id": task.task_id, "rows": rows}, allow_nan=True))
        done.add(task.task_id)
        write_manifest(out, cfg, task_list, done)
        log.info("finished %s (%d/%d)", task.task_id, len(done), len(task_list))

    if n_workers <= 1 or len(todo) <= 1:
        for t in todo:
            finish(t, run_task(doc, t, save_dir))
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
            futures = {pool.submit(run_task, doc, t, save_dir): t for t in todo}
            for fut in as_completed(futures):
                finish(futures[fut], fut.result())

    if len(done) == len(task_list):
        rows = collect_rows(out, task_list)
        write_csv(out / "results.csv", RESULT_COLUMNS, rows)
        write_summary(out, rows)
        if cfg.experiment == "feedback":
            from .feedback import write_feedback_tables

            write_feedback_tables(cfg, out, rows)
    return out


def collect_rows(out: Path, task_list) -> list[dict]:
    rows = []
    for t in task_list:
        doc = json.loads((out / "tasks" / f"{t.task_id}.json").read_text(encoding="utf-8"))
        rows.extend(doc["rows"])
    return rows


def resume(manifest_path, workers: int | None = None) -> Path:
    cfg, out = load_manifest(manifest_path)
    return run_experiment(cfg, out, workers=workers)


def summarize_dir(results_dir) -> list[dict]:
    out = Path(results_dir)
    path = out / "results.csv"
    if not path.exists():
        raise FileNotFoundError(f"no results.csv in {out}")
    return write_summary(out, read_results(path))
