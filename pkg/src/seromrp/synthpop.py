"""Synthetic finite populations, simple random samples and imperfect tests."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .model import CalibrationData
from .seeds import rng

PREVALENCE_GRID = (0.001, 0.01, 0.1, 0.2)
LEVELS_GRID = (4, 10, 20, 40)
ZETA1_GRID = (0.0, 0.3)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PopulationConfig:
    N: int = 500_000
    K: int = 5
    levels: int = 20
    zeta1: float = 0.3
    prevalence: float = 0.01
    lower: float = -0.5
    upper: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.N <= 0:
            raise ConfigurationError("population size must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise ConfigurationError("target prevalence must lie in (0, 1)")
        if not self.lower < self.upper:
            raise ConfigurationError("uniform bounds need lower < upper")
        if self.levels < 2 or self.levels > self.N:
            raise ConfigurationError("levels must be in [2, N]")
        if self.K < 1:
            raise ConfigurationError("need at least one covariate")


@dataclass(frozen=True)
class Population:
    """A finite population; ``levels`` are 1-based bin indices."""

    continuous: dict
    levels: dict
    prob: np.ndarray
    y: np.ndarray
    zeta0: float
    config: PopulationConfig

    @property
    def n_units(self) -> int:
        return len(self.y)

    @property
    def prevalence(self) -> float:
        """Finite-population share of true positives."""
        return float(self.y.mean())

    @property
    def expected_prevalence(self) -> float:
        return float(self.prob.mean())

    def to_csv(self, path) -> None:
        path = Path(path)
        cont = sorted(self.continuous)
        levs = sorted(self.levels)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*cont, *(f"{k}_level" for k in levs), "prob", "y"])
            cols = [self.continuous[k] for k in cont] + [self.levels[k] for k in levs]
            for i in range(self.n_units):
                w.writerow([*(repr(float(c[i])) for c in cols[: len(cont)]),
                            *(int(c[i]) for c in cols[len(cont):]),
                            repr(float(self.prob[i])), int(self.y[i])])


@dataclass(frozen=True)
class Sample:
    """Units drawn without replacement; ``y_star`` holds observed test results."""

    indices: np.ndarray
    continuous: dict
    levels: dict
    y: np.ndarray
    y_star: np.ndarray

    @property
    def n_units(self) -> int:
        return len(self.indices)

    def with_tests(self, y_star: np.ndarray) -> "Sample":
        return Sample(self.indices, self.continuous, self.levels, self.y, np.asarray(y_star))


def solve_intercept(
    prevalence: float, zeta1: float, K: int, lower: float = -0.5, upper: float = 0.5
) -> float:
    """Intercept that centres the logit of the population prevalence on target."""
    if not 0.0 < prevalence < 1.0:
        raise ValueError("prevalence must lie in (0, 1)")
    return float(logit(prevalence) - zeta1 * K * (lower + upper) / 2.0)


def discretize(x, n_levels: int) -> np.ndarray:
    """Equal-count quantile bins, 1-based.

    Ties are broken by input order, so a constant vector is split by position.
    """
    x = np.asarray(x)
    if n_levels < 2:
        raise ValueError("need at least 2 levels")
    if len(x) < n_levels:
        raise ValueError("fewer values than levels")
    order = np.argsort(x, kind="stable")
    out = np.empty(len(x), dtype=np.int64)
    out[order] = np.arange(len(x)) * n_levels // len(x) + 1
    return out


def generate_population(config: PopulationConfig) -> Population:
    g = rng(config.seed)
    zeta0 = solve_intercept(config.prevalence, config.zeta1, config.K, config.lower, config.upper)
    X = g.uniform(config.lower, config.upper, size=(config.K, config.N))
    if config.zeta1 == 0:
        prob = np.full(config.N, config.prevalence)
    else:
        prob = expit(zeta0 + config.zeta1 * X.sum(axis=0))
    y = (g.random(config.N) < prob).astype(np.int8)

    continuous = {f"X{k + 1}": X[k] for k in range(config.K)}
    levels = {name: discretize(v, config.levels) for name, v in continuous.items()}
    if config.K >= 4:
        bin_level = discretize(continuous["X4"], 2)
        levels["X4_bin"] = bin_level
        continuous["X4_bin"] = (bin_level - 1).astype(float)
    return Population(continuous, levels, prob, y, zeta0, config)


def draw_sample(pop: Population, n: int, seed) -> Sample:
    """Simple random sample without replacement, sorted by unit index."""
    if not 1 <= n <= pop.n_units:
        raise ValueError(f"sample size {n} outside [1, {pop.n_units}]")
    idx = np.sort(rng(seed).choice(pop.n_units, size=n, replace=False))
    return Sample(
        idx,
        {k: v[idx] for k, v in pop.continuous.items()},
        {k: v[idx] for k, v in pop.levels.items()},
        pop.y[idx],
        pop.y[idx].copy(),
    )


def corrupt_measurements(y, sensitivity: float, specificity: float, seed) -> np.ndarray:
    """Observed test results: positives detected w.p. sensitivity, negatives
    falsely flagged w.p. 1 - specificity."""
    if not (0.0 <= sensitivity <= 1.0 and 0.0 <= specificity <= 1.0):
        raise ValueError("sensitivity and specificity must lie in [0, 1]")
    y = np.asarray(y)
    u = rng(seed).random(len(y))
    p_pos = np.where(y == 1, sensitivity, 1.0 - specificity)
    return (u < p_pos).astype(np.int8)


def positive_test_probability(prevalence, sensitivity: float, specificity: float):
    """Pr(y* = 1) given true prevalence."""
    prevalence = np.asarray(prevalence)
    return (1.0 - specificity) * (1.0 - prevalence) + sensitivity * prevalence


def observable_bounds(sensitivity: float, specificity: float, tol: float = 1e-12):
    """Interval that Pr(y* = 1) must lie in when prevalence ranges over [0, 1].

    Returns ``None`` when sensitivity equals 1 - specificity: the test is then
    uninformative and prevalence cannot be recovered.
    """
    false_pos = 1.0 - specificity
    if abs(sensitivity - false_pos) <= tol:
        return None
    if sensitivity > false_pos:
        return (false_pos, sensitivity)
    return (sensitivity, false_pos)


def calibration_counts(specificity: float, m_gamma: int) -> tuple[int, int]:
    """Expected (FP, TN) of a specificity study with ``m_gamma`` true negatives."""
    if m_gamma <= 0:
        raise ConfigurationError("calibration size must be positive")
    expected_fp = m_gamma * (1.0 - specificity)
    fp = round(expected_fp)
    if not math.isclose(expected_fp, fp, abs_tol=1e-6):
        raise ConfigurationError(
            f"m_gamma={m_gamma} with specificity={specificity} gives a non-integer "
            f"false-positive count {expected_fp:.4f}"
        )
    return int(fp), int(m_gamma - fp)


def calibration_data(specificity: float, m_gamma: int, tp: int = 0, fn: int = 0) -> CalibrationData:
    fp, tn = calibration_counts(specificity, m_gamma)
    return CalibrationData(tp=tp, fn=fn, tn=tn, fp=fp)
