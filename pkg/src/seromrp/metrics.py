"""Per-iteration bias metrics and their aggregation across iterations."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

log = logging.getLogger(__name__)

METRICS = ("bias_pi", "bias_beta0", "delta_pi")


@dataclass
class IterationResult:
    """One fitted model on one simulated sample.

    ``condition`` holds the grid coordinates (experiment, n, prevalence, ...).
    Truth fields are ``None`` in real-data mode.
    """

    condition: dict
    model: int
    iteration: int
    pi_hat: float
    beta0_hat: float
    method: str = "bayes"
    variant: str = "basic"
    pi_hat_mean: float = float("nan")
    ppc_mean: float = float("nan")
    test_positive_hat: float = float("nan")
    specificity_hat: float = float("nan")
    sensitivity_hat: float = float("nan")
    sample_test_mean: float = float("nan")
    true_pi: float | None = None
    true_beta0: float | None = None
    true_sensitivity: float = 1.0
    true_specificity: float = 1.0
    warnings: list = field(default_factory=list)

    @property
    def group_key(self) -> tuple:
        return (tuple(sorted(self.condition.items())), self.variant, self.method, self.model)

    @property
    def true_test_positive(self) -> float | None:
        if self.true_pi is None:
            return None
        return (1.0 - self.true_specificity) * (1.0 - self.true_pi) + self.true_sensitivity * self.true_pi

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(compute_metrics(self))
        return d


def compute_metrics(result: IterationResult) -> dict:
    """bias_pi, bias_beta0 and delta_pi; ``None`` where the truth is unknown."""
    out = {m: None for m in METRICS}
    if result.true_pi is not None:
        out["bias_pi"] = result.pi_hat - result.true_pi
        out["delta_pi"] = result.pi_hat - result.true_test_positive
    if result.true_beta0 is not None:
        out["bias_beta0"] = result.beta0_hat - result.true_beta0
    return out


@dataclass(frozen=True)
class Summary:
    count: int
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple
    mean: float
    mcse: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize(values) -> Summary:
    """Box-plot statistics with 1.5 x IQR whiskers, plus mean and its standard error."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    lo_fence = q1 - 1.5 * (q3 - q1)
    hi_fence = q3 + 1.5 * (q3 - q1)
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = tuple(float(v) for v in x[(x < lo_fence) | (x > hi_fence)])
    mcse = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return Summary(
        int(x.size), float(med), float(q1), float(q3),
        float(inside.min()), float(inside.max()), outliers, float(x.mean()), mcse,
    )


SUMMARY_VALUES = METRICS + ("pi_hat", "beta0_hat", "test_positive_hat", "specificity_hat")


def aggregate(results, values=SUMMARY_VALUES) -> list[dict]:
    """One summary row per (condition, variant, method, model, metric)."""
    groups: dict = {}
    for r in results:
        groups.setdefault(r.group_key, []).append(r)
    rows = []
    for key in sorted(groups, key=repr):
        members = groups[key]
        cond, variant, method, model = key
        for name in values:
            vals = []
            for r in members:
                v = compute_metrics(r).get(name) if name in METRICS else getattr(r, name)
                if v is not None and np.isfinite(v):
                    vals.append(v)
            if not vals:
                log.warning("no finite %s values for %s; skipped", name, key)
                continue
            s = summarize(vals)
            row = dict(cond)
            row.update(variant=variant, method=method, model=model, metric=name)
            stats = {k: v for k, v in asdict(s).items() if k not in ("count", "outliers")}
            row.update(n_iterations=s.count, **stats)
            row["n_outliers"] = len(s.outliers)
            row["outliers"] = ";".join(repr(o) for o in s.outliers)
            rows.append(row)
    return rows
