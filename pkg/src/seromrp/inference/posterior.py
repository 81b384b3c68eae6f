"""Joint posterior of the multilevel logistic model with a test-error layer."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betaln, expit, gammaln, logit

from ..model import (
    SAMPLE_COUNTS,
    CellTable,
    CovariateSchema,
    EstimatedBoth,
    EstimatedSpecificity,
    KnownErrorRates,
    ModelSpec,
    SchemaError,
)
from ..seeds import rng
from . import kernels
from .kernels import PROB_EPS, T_NU, T_SCALE

DIVERGENCE_LIMIT = 0.01
RHAT_LIMIT = 1.01


def _t_log_norm(nu: float = T_NU, scale: float = T_SCALE) -> float:
    return float(gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi) - math.log(scale))


@dataclass
class ParameterVector:
    """Constrained parameters of one model.

    ``alpha`` maps each varying covariate to its level offsets; ``sigma`` to its
    group standard deviation. Fixed error rates are carried as plain values.
    """

    beta0: float
    beta: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)
    sigma: dict = field(default_factory=dict)
    sensitivity: float = 1.0
    specificity: float = 1.0


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    max_depth: int = 10
    seed: int = 1

    def __post_init__(self):
        if min(self.chains, self.warmup + 1, self.draws, self.max_depth) <= 0:
            raise ValueError("chains, draws and max_depth must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


class PosteriorModel:
    """A model specification bound to sample cells, ready for evaluation/sampling."""

    def __init__(self, spec: ModelSpec, cells: CellTable, schema: CovariateSchema):
        spec.validate(schema)
        if cells.positives is None:
            raise ValueError("sample cells need per-cell positive counts")
        if tuple(cells.covariates) != tuple(spec.covariates):
            raise SchemaError("cell table was built for a different model")
        self.spec = spec
        self.schema = schema
        self.cells = cells
        self.varying = spec.varying
        self.slopes = spec.slopes
        self.n_levels = np.array([schema[c].levels for c in self.varying], dtype=np.int64)

        lev_cols = [cells.level_column(c) - 1 for c in self.varying]
        self.lev = (np.column_stack(lev_cols) if lev_cols else np.zeros((len(cells), 0))).astype(np.int64)
        if self.lev.size and (self.lev.min() < 0 or np.any(self.lev.max(axis=0) >= self.n_levels)):
            raise SchemaError("cell level index outside the schema's range")
        self.xs = np.ascontiguousarray(
            np.column_stack([cells.slope_column(c) for c in self.slopes]) if self.slopes
            else np.zeros((len(cells), 0))
        )
        self.pos = cells.positives.astype(float)
        self.neg = (cells.counts - cells.positives).astype(float)

        Q, K = len(self.slopes), len(self.varying)
        self.zoff = (1 + Q + np.concatenate([[0], np.cumsum(self.n_levels)[:-1]])).astype(np.int64)
        self.soff = 1 + Q + int(self.n_levels.sum())
        dim = self.soff + K
        self.meas = np.array([-1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        m = spec.measurement
        self.gamma_free = isinstance(m, (EstimatedSpecificity, EstimatedBoth))
        self.delta_free = isinstance(m, EstimatedBoth)
        if isinstance(m, KnownErrorRates):
            self.meas[2], self.meas[3] = m.specificity, m.sensitivity
        if isinstance(m, EstimatedSpecificity):
            self.meas[3] = m.sensitivity
        if self.gamma_free:
            self.meas[0] = dim
            self.meas[4], self.meas[5] = m.calibration.specificity_prior()
            dim += 1
        if self.delta_free:
            self.meas[1] = dim
            self.meas[6], self.meas[7] = m.calibration.sensitivity_prior()
            dim += 1
        self.dim = dim
        self.log_norm = self._log_norm()

    # -- layout -------------------------------------------------------------

    def _log_norm(self) -> float:
        Q, K = len(self.slopes), len(self.varying)
        c = (1 + Q) * _t_log_norm()
        c += -0.5 * math.log(2 * math.pi) * int(self.n_levels.sum())
        c += K * (math.log(2.0) + _t_log_norm())
        if self.gamma_free:
            c -= betaln(self.meas[4], self.meas[5])
        if self.delta_free:
            c -= betaln(self.meas[6], self.meas[7])
        return float(c)

    @property
    def names(self) -> list[str]:
        """Names of the constrained parameters, in layout order."""
        out = ["beta0"] + [f"beta[{c}]" for c in self.slopes]
        for c, L in zip(self.varying, self.n_levels):
            out += [f"alpha[{c},{l + 1}]" for l in range(L)]
        out += [f"sigma[{c}]" for c in self.varying]
        if self.gamma_free:
            out.append("specificity")
        if self.delta_free:
            out.append("sensitivity")
        return out

    def pack(self, params: ParameterVector) -> np.ndarray:
        """Constrained parameters -> unconstrained vector."""
        theta = np.empty(self.dim)
        theta[0] = params.beta0
        for q, c in enumerate(self.slopes):
            theta[1 + q] = params.beta[c]
        for k, c in enumerate(self.varying):
            sig = float(params.sigma[c])
            if not sig > 0:
                raise ValueError("group standard deviations must be positive")
            a = np.asarray(params.alpha[c], dtype=float)
            if a.shape != (self.n_levels[k],):
                raise ValueError(f"alpha[{c}] needs {self.n_levels[k]} entries")
            theta[self.zoff[k]: self.zoff[k] + self.n_levels[k]] = a / sig
            theta[self.soff + k] = math.log(sig)
        if self.gamma_free:
            theta[int(self.meas[0])] = logit(params.specificity)
        if self.delta_free:
            theta[int(self.meas[1])] = logit(params.sensitivity)
        return theta

    def constrain(self, theta: np.ndarray) -> np.ndarray:
        """Unconstrained draws (..., dim) -> constrained values in ``names`` order."""
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for k in range(len(self.varying)):
            sig = np.exp(theta[..., self.soff + k])
            sl = slice(self.zoff[k], self.zoff[k] + self.n_levels[k])
            out[..., sl] = theta[..., sl] * sig[..., None]
            out[..., self.soff + k] = sig
        for idx in (self.meas[0], self.meas[1]):
            if idx >= 0:
                out[..., int(idx)] = expit(theta[..., int(idx)])
        return out

    def unpack(self, theta: np.ndarray) -> ParameterVector:
        c = self.constrain(theta)
        pv = ParameterVector(float(c[0]))
        pv.beta = {s: float(c[1 + q]) for q, s in enumerate(self.slopes)}
        for k, v in enumerate(self.varying):
            pv.alpha[v] = c[self.zoff[k]: self.zoff[k] + self.n_levels[k]].copy()
            pv.sigma[v] = float(c[self.soff + k])
        pv.specificity = float(c[int(self.meas[0])]) if self.gamma_free else float(self.meas[2])
        pv.sensitivity = float(c[int(self.meas[1])]) if self.delta_free else float(self.meas[3])
        return pv

    # -- evaluation ---------------------------------------------------------

    def logp_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Log posterior density of the unconstrained vector and its gradient."""
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape}")
        grad = np.empty(self.dim)
        lp = kernels.logp_grad(theta, self.pos, self.neg, self.lev, self.xs, self.n_levels, self.meas, grad)
        return lp + self.log_norm, grad

    def log_posterior(self, params) -> float:
        theta = self.pack(params) if isinstance(params, ParameterVector) else params
        return self.logp_grad(theta)[0]

    def initial_point(self, generator: np.random.Generator) -> np.ndarray:
        for _ in range(100):
            theta = generator.uniform(-2.0, 2.0, size=self.dim)
            lp, _ = self.logp_grad(theta)
            if np.isfinite(lp):
                return theta
        raise RuntimeError("could not find a finite initial point")


def log_likelihood_terms(prob, positives, trials, sensitivity: float = 1.0, specificity: float = 1.0):
    """Per-cell binomial log-likelihood (without the binomial coefficient).

    ``prob`` is the true-status probability; an observation that is impossible
    under the test model gives ``-inf``.
    """
    prob = np.asarray(prob, dtype=float)
    positives = np.asarray(positives, dtype=float)
    negatives = np.asarray(trials, dtype=float) - positives
    p = (1.0 - specificity) + prob * (sensitivity + specificity - 1.0)
    omp = specificity * (1.0 - prob) + (1.0 - sensitivity) * prob
    with np.errstate(divide="ignore", invalid="ignore"):
        lp_pos = np.where(p <= 0, -np.inf, np.log(np.clip(p, PROB_EPS, 1 - PROB_EPS)))
        lp_neg = np.where(omp <= 0, -np.inf, np.log(np.clip(omp, PROB_EPS, 1 - PROB_EPS)))
        return np.where(positives > 0, positives * lp_pos, 0.0) + np.where(negatives > 0, negatives * lp_neg, 0.0)


# -- sampling ---------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Posterior draws on the constrained scale, shape (chains, draws, params)."""

    names: list
    values: np.ndarray
    log_posterior: np.ndarray
    stats: np.ndarray
    step_size: np.ndarray
    warnings: list = field(default_factory=list)
    model: PosteriorModel | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_draws(self) -> int:
        return self.values.shape[1]

    @property
    def divergences(self) -> int:
        from .nuts import STAT_DIVERGENT

        return int(self.stats[..., STAT_DIVERGENT].sum())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[..., self.names.index(name)]

    def get(self, name: str, default=None):
        return self[name] if name in self.names else default

    def flat(self, name: str) -> np.ndarray:
        return self[name].reshape(-1)

    def metadata(self) -> dict:
        from .nuts import STAT_ACCEPT, STAT_DEPTH, STAT_LEAPFROG

        return {
            "chains": self.n_chains,
            "draws_per_chain": self.n_draws,
            "divergences": self.divergences,
            "step_size": [float(s) for s in self.step_size],
            "mean_accept_stat": float(self.stats[..., STAT_ACCEPT].mean()),
            "mean_tree_depth": float(self.stats[..., STAT_DEPTH].mean()),
            "total_leapfrog_steps": int(self.stats[..., STAT_LEAPFROG].sum()),
            "warnings": list(self.warnings),
        }

    def to_csv(self, path, extra: dict | None = None) -> None:
        """One row per draw: chain, iteration, parameters, log posterior, then any
        ``extra`` per-draw columns; plus a JSON sidecar."""
        path = Path(path)
        C, S, P = self.values.shape
        extra = extra or {}
        chain = np.repeat(np.arange(1, C + 1), S)
        it = np.tile(np.arange(1, S + 1), C)
        cols = [chain, it, self.values.reshape(C * S, P), self.log_posterior.reshape(-1)]
        cols += [np.asarray(v, float).reshape(C * S) for v in extra.values()]
        body = np.column_stack(cols)
        header = ",".join(["chain", "iteration", *self.names, "lp", *extra])
        fmt = ["%d", "%d"] + ["%.17g"] * (P + 1 + len(extra))
        np.savetxt(path, body, delimiter=",", header=header, comments="", fmt=fmt, encoding="utf-8")
        path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2), encoding="utf-8")


def sample_posterior(model: PosteriorModel, cfg: McmcConfig = McmcConfig(), check: bool = True) -> PosteriorDraws:
    """Run ``cfg.chains`` NUTS chains; chain ``c`` is seeded from (cfg.seed, c)."""
    from .diagnostics import diagnose
    from .nuts import STAT_STEPSIZE, run_chain

    values, lps, stats, steps = [], [], [], []
    for c in range(cfg.chains):
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(c,))
        g = rng(ss)
        theta0 = model.initial_point(g)
        chain_seed = int(g.integers(0, 2**31 - 1))
        draws, lp, st, _ = run_chain(
            theta0, chain_seed, cfg.warmup, cfg.draws, cfg.target_accept, cfg.max_depth,
            model.pos, model.neg, model.lev, model.xs, model.n_levels, model.meas,
        )
        values.append(model.constrain(draws))
        lps.append(lp + model.log_norm)
        stats.append(st)
        steps.append(st[0, STAT_STEPSIZE])
    out = PosteriorDraws(
        model.names, np.stack(values), np.stack(lps), np.stack(stats), np.array(steps), model=model
    )
    if check:
        div = out.divergences
        if div > DIVERGENCE_LIMIT * cfg.chains * cfg.draws:
            out.warnings.append(f"{div} divergent transitions after warmup")
        if cfg.chains >= 2 and cfg.draws >= 4:
            diag = diagnose(out, min_draws=4)
            worst = np.nanmax(diag.rhat) if np.any(np.isfinite(diag.rhat)) else np.nan
            if worst > RHAT_LIMIT:
                out.warnings.append(f"max split R-hat {worst:.3f} exceeds {RHAT_LIMIT}")
        for w in out.warnings:
            warnings.warn(w, RuntimeWarning, stacklevel=2)
    return out


def sample_cells(sample, spec: ModelSpec) -> CellTable:
    from ..model import cell_table

    return cell_table(sample, spec, SAMPLE_COUNTS, outcome=sample.y_star)
