"""Declarative model specifications and poststratification cell tables."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np


class SchemaError(ValueError):
    """A model specification refers to something the schema does not define."""


class EmptyTableError(ValueError):
    pass


@dataclass(frozen=True)
class Covariate:
    name: str
    levels: int
    has_continuous_version: bool = True


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate covariate names in {names}")
        for c in self.covariates:
            if c.levels < 2:
                raise SchemaError(f"covariate {c.name!r} needs at least 2 levels")

    @classmethod
    def synthetic(cls, n_covariates: int = 5, levels: int = 20) -> "CovariateSchema":
        """Schema of the simulated population: X1..XK plus the binarized X4."""
        covs = [Covariate(f"X{k}", levels) for k in range(1, n_covariates + 1)]
        if n_covariates >= 4:
            covs.append(Covariate("X4_bin", 2))
        return cls(tuple(covs))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def __getitem__(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise SchemaError(f"unknown covariate {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.covariates)


class TermType(enum.Enum):
    VARYING_INTERCEPT = "varying"
    OVERALL_SLOPE = "slope"
    BOTH = "both"

    @property
    def has_varying(self) -> bool:
        return self is not TermType.OVERALL_SLOPE

    @property
    def has_slope(self) -> bool:
        return self is not TermType.VARYING_INTERCEPT


@dataclass(frozen=True)
class Term:
    covariate: str
    kind: TermType


# -- measurement layers ------------------------------------------------------


@dataclass(frozen=True)
class CalibrationData:
    """Counts from an external assay validation study."""

    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ValueError("calibration counts must be nonnegative")

    @property
    def m_delta(self) -> int:
        return self.tp + self.fn

    @property
    def m_gamma(self) -> int:
        return self.tn + self.fp

    def specificity_prior(self) -> tuple[float, float]:
        """Beta shape parameters for specificity; zero counts are floored to 1."""
        if self.m_gamma == 0:
            raise ValueError("specificity prior needs TN + FP > 0")
        return float(max(self.tn, 1)), float(max(self.fp, 1))

    def sensitivity_prior(self) -> tuple[float, float]:
        if self.m_delta == 0:
            raise ValueError("sensitivity prior needs TP + FN > 0")
        return float(max(self.tp, 1)), float(max(self.fn, 1))


@dataclass(frozen=True)
class KnownErrorRates:
    sensitivity: float = 1.0
    specificity: float = 1.0

    def __post_init__(self):
        for v in (self.sensitivity, self.specificity):
            if not 0.0 <= v <= 1.0:
                raise ValueError("known error rates must lie in [0, 1]")


@dataclass(frozen=True)
class EstimatedSpecificity:
    calibration: CalibrationData
    sensitivity: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.sensitivity <= 1.0:
            raise ValueError("fixed sensitivity must lie in [0, 1]")
        self.calibration.specificity_prior()


@dataclass(frozen=True)
class EstimatedBoth:
    calibration: CalibrationData

    def __post_init__(self):
        self.calibration.specificity_prior()
        self.calibration.sensitivity_prior()


@dataclass(frozen=True)
class ModelSpec:
    model_index: int
    terms: tuple[Term, ...] = ()
    measurement: object = None
    variant: str = "basic"

    def __post_init__(self):
        if not 0 <= self.model_index <= 5:
            raise SchemaError("model_index must be in 0..5")
        if self.model_index == 0 and self.terms:
            raise SchemaError("model 0 is intercept-only")
        if self.measurement is not None and not isinstance(
            self.measurement, (KnownErrorRates, EstimatedSpecificity, EstimatedBoth)
        ):
            raise TypeError(f"unsupported measurement layer {self.measurement!r}")

    @property
    def varying(self) -> list[str]:
        return [t.covariate for t in self.terms if t.kind.has_varying]

    @property
    def slopes(self) -> list[str]:
        return [t.covariate for t in self.terms if t.kind.has_slope]

    @property
    def covariates(self) -> list[str]:
        """Every covariate that defines a cell, in term order."""
        return [t.covariate for t in self.terms]

    def validate(self, schema: CovariateSchema) -> None:
        seen = set()
        for t in self.terms:
            cov = schema[t.covariate]
            if t.covariate in seen:
                raise SchemaError(f"covariate {t.covariate!r} appears twice")
            seen.add(t.covariate)
            if t.kind is TermType.BOTH and not cov.has_continuous_version:
                raise SchemaError(f"{t.covariate!r} has no continuous version for a slope")
            if t.kind is TermType.OVERALL_SLOPE and not cov.has_continuous_version:
                raise SchemaError(f"{t.covariate!r} has no continuous version for a slope")

    def with_measurement(self, measurement) -> "ModelSpec":
        return ModelSpec(self.model_index, self.terms, measurement, self.variant)

    @property
    def label(self) -> str:
        return f"model{self.model_index}"


LADDER_VARIANTS = ("basic", "one_overall", "two_overall")


def build_model_ladder(
    schema: CovariateSchema, variant: str = "basic", measurement=None
) -> list[ModelSpec]:
    """Models 0-5 with covariates added one at a time.

    ``one_overall`` adds a slope on continuous X3 from model 3 on (X3 enters as
    both a varying intercept and a slope). ``two_overall`` further adds a slope
    on the binarized X4 at model 3, which replaces the X4 varying intercept in
    models 4 and 5.
    """
    if variant not in LADDER_VARIANTS:
        raise SchemaError(f"unknown ladder variant {variant!r}")
    base = [c.name for c in schema.covariates if c.name != "X4_bin"]
    if len(base) < 5:
        raise SchemaError("the model ladder needs at least 5 covariates")
    x1, x2, x3, x4, x5 = base[:5]
    if variant != "basic" and not schema[x3].has_continuous_version:
        raise SchemaError(f"{x3!r} has no continuous version")
    if variant == "two_overall" and "X4_bin" not in schema:
        raise SchemaError("two_overall needs the binarized X4 covariate 'X4_bin'")

    V, S, B = TermType.VARYING_INTERCEPT, TermType.OVERALL_SLOPE, TermType.BOTH
    x3_kind = V if variant == "basic" else B
    ladders = {
        0: [],
        1: [Term(x1, V)],
        2: [Term(x1, V), Term(x2, V)],
        3: [Term(x1, V), Term(x2, V), Term(x3, x3_kind)],
    }
    if variant == "two_overall":
        ladders[3] = ladders[3] + [Term("X4_bin", S)]
        ladders[4] = list(ladders[3])
    else:
        ladders[4] = ladders[3] + [Term(x4, V)]
    ladders[5] = ladders[4] + [Term(x5, V)]

    specs = [ModelSpec(m, tuple(ladders[m]), measurement, variant) for m in range(6)]
    for s in specs:
        s.validate(schema)
    return specs


# -- cell tables -------------------------------------------------------------


POPULATION_COUNTS = "population"
SAMPLE_COUNTS = "sample"


@dataclass(frozen=True)
class CellTable:
    """Sparse poststratification cells.

    ``levels`` holds 1-based level indices, one column per covariate in
    ``covariates``; ``slope_values`` the within-cell mean of each slope
    covariate. ``positives`` is the number of positive test results per cell
    and is only meaningful for sample tables.
    """

    covariates: tuple[str, ...]
    levels: np.ndarray
    slope_covariates: tuple[str, ...]
    slope_values: np.ndarray
    counts: np.ndarray
    count_kind: str = POPULATION_COUNTS
    positives: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def level_column(self, name: str) -> np.ndarray:
        return self.levels[:, self.covariates.index(name)]

    def slope_column(self, name: str) -> np.ndarray:
        return self.slope_values[:, self.slope_covariates.index(name)]


def cell_table(
    units,
    spec: ModelSpec,
    count_kind: str = POPULATION_COUNTS,
    outcome: np.ndarray | None = None,
) -> CellTable:
    """Group ``units`` into one cell per distinct level combination.

    ``units`` needs ``levels`` and ``continuous`` mappings of per-unit arrays
    (``Population`` and ``Sample`` both qualify). When ``outcome`` is given,
    its per-cell sums are stored as ``positives``.
    """
    levels_map: Mapping[str, np.ndarray] = units.levels
    continuous: Mapping[str, np.ndarray] = units.continuous
    n = _unit_count(units)
    if n == 0:
        raise EmptyTableError("cannot build a cell table from zero units")
    covs = tuple(spec.covariates)
    slopes = tuple(spec.slopes)
    for name in covs:
        if name not in levels_map:
            raise SchemaError(f"units carry no levels for {name!r}")

    if covs:
        lev = np.column_stack([np.asarray(levels_map[c], dtype=np.int64) for c in covs])
        uniq, inverse = np.unique(lev, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        uniq = np.empty((1, 0), dtype=np.int64)
        inverse = np.zeros(n, dtype=np.int64)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)

    slope_vals = np.empty((len(uniq), len(slopes)))
    for q, name in enumerate(slopes):
        sums = np.bincount(inverse, weights=np.asarray(continuous[name], float), minlength=len(uniq))
        slope_vals[:, q] = sums / counts

    positives = None
    if outcome is not None:
        outcome = np.asarray(outcome)
        if len(outcome) != n:
            raise ValueError("outcome length does not match the number of units")
        positives = np.bincount(inverse, weights=outcome, minlength=len(uniq)).astype(np.int64)

    return CellTable(covs, uniq, slopes, slope_vals, counts, count_kind, positives)


def _unit_count(units) -> int:
    if hasattr(units, "n_units"):
        return int(units.n_units)
    first = next(iter(units.levels.values()), None)
    return 0 if first is None else len(first)
