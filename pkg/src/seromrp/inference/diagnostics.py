"""Rank-normalised split R-hat and bulk effective sample size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


class DiagnosticError(ValueError):
    pass


@dataclass(frozen=True)
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergences: int

    def as_dict(self) -> dict:
        return {
            n: {"rhat": float(r), "ess_bulk": float(e)}
            for n, r, e in zip(self.names, self.rhat, self.ess_bulk)
        }

    @property
    def max_rhat(self) -> float:
        return float(np.nanmax(self.rhat)) if np.any(np.isfinite(self.rhat)) else float("nan")


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if not W > 0:
        return float("nan")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def _ess(x: np.ndarray) -> float:
    """Geyer initial-monotone-sequence ESS over (chains, draws)."""
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return float("nan")
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # sum consecutive pairs while positive, enforcing monotone decrease
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        if pair_sums and s > pair_sums[-1]:
            s = pair_sums[-1]
        pair_sums.append(s)
        t += 2
    tau = -1.0 + 2.0 * sum(pair_sums)
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def split_rhat(x: np.ndarray) -> float:
    """Rank-normalised split R-hat for one scalar, ``x`` of shape (chains, draws).

    Values are floored at 1: anything below is sampling noise around perfect
    mixing. A constant quantity gives NaN.
    """
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return float("nan")
    xs = _split(x)
    r = max(_rhat(_rank_normalize(xs)), _rhat(_rank_normalize(np.abs(xs - np.median(xs)))))
    return max(r, 1.0)


def ess_bulk(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return float("nan")
    return _ess(_rank_normalize(_split(x)))


def diagnose(draws, min_draws: int = 100) -> Diagnostics:
    """Split R-hat and bulk ESS for every scalar parameter of ``draws``."""
    values = draws.values
    if values.shape[0] < 2:
        raise DiagnosticError("need at least 2 chains")
    if values.shape[1] < min_draws:
        raise DiagnosticError(f"need at least {min_draws} draws per chain")
    rhat = np.array([split_rhat(values[..., i]) for i in range(values.shape[-1])])
    ess = np.array([ess_bulk(values[..., i]) for i in range(values.shape[-1])])
    return Diagnostics(list(draws.names), rhat, ess, int(getattr(draws, "divergences", 0)))
