"""Compiled log-posterior and gradient.

Unconstrained parameter layout::

    [beta0, beta_1..beta_Q, z^(1) (L_1), ..., z^(K) (L_K), log sigma_1..K,
     logit gamma (if free), logit delta (if free)]

with varying intercepts alpha^(k) = sigma_k * z^(k) (non-centred). ``meas``
packs the measurement layer: ``[gamma_idx, delta_idx, gamma_fixed,
delta_fixed, a_gamma, b_gamma, a_delta, b_delta]``; an index of -1 means the
rate is fixed. Normalising constants are left out here and added by the
Python wrapper.
"""

import math

import numpy as np
from numba import njit

PROB_EPS = 1e-12
T_NU = 3.0
T_SCALE = 2.5
_T_DENOM = T_NU * T_SCALE * T_SCALE
_T_POW = 0.5 * (T_NU + 1.0)


@njit(cache=True, inline="always")
def _log1p_exp(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def logp_grad(theta, pos, neg, lev, xs, nlev, meas, grad):
    """Unnormalised log posterior at ``theta``; the gradient is written into ``grad``."""
    P = theta.shape[0]
    J = pos.shape[0]
    Q = xs.shape[1]
    K = lev.shape[1]
    for i in range(P):
        grad[i] = 0.0
        if not math.isfinite(theta[i]):
            return -np.inf

    zoff = np.empty(K, dtype=np.int64)
    o = 1 + Q
    for k in range(K):
        zoff[k] = o
        o += nlev[k]
    soff = o

    sigma = np.empty(K)
    for k in range(K):
        sigma[k] = math.exp(theta[soff + k])

    gidx = int(meas[0])
    didx = int(meas[1])
    if gidx >= 0:
        u = theta[gidx]
        gamma = 1.0 / (1.0 + math.exp(-u))
    else:
        gamma = meas[2]
    if didx >= 0:
        u = theta[didx]
        delta = 1.0 / (1.0 + math.exp(-u))
    else:
        delta = meas[3]
    fpr = 1.0 - gamma
    slope = delta + gamma - 1.0
    miss = 1.0 - delta

    # varying intercepts per level, and per-level gradient accumulators
    alpha = np.empty(P)
    for k in range(K):
        for l in range(nlev[k]):
            alpha[zoff[k] + l] = sigma[k] * theta[zoff[k] + l]
    g_lev = np.zeros(P)

    log_eps = math.log(PROB_EPS)
    log_1m_eps = math.log1p(-PROB_EPS)
    lp = 0.0
    d_gamma = 0.0
    d_delta = 0.0
    for j in range(J):
        eta = theta[0]
        for q in range(Q):
            eta += theta[1 + q] * xs[j, q]
        for k in range(K):
            eta += alpha[zoff[k] + lev[j, k]]
        e = math.exp(-abs(eta))
        inv = 1.0 / (1.0 + e)
        if eta >= 0.0:
            pi = inv
            qi = e * inv
        else:
            pi = e * inv
            qi = inv
        p = fpr + pi * slope
        omp = gamma * qi + miss * pi

        dldp = 0.0
        if pos[j] > 0.0:
            if p <= 0.0:
                return -np.inf
            if p < PROB_EPS:
                lp += pos[j] * log_eps
            elif p > 1.0 - PROB_EPS:
                lp += pos[j] * log_1m_eps
            else:
                lp += pos[j] * math.log(p)
                dldp += pos[j] / p
        if neg[j] > 0.0:
            if omp <= 0.0:
                return -np.inf
            if omp < PROB_EPS:
                lp += neg[j] * log_eps
            elif omp > 1.0 - PROB_EPS:
                lp += neg[j] * log_1m_eps
            else:
                lp += neg[j] * math.log(omp)
                dldp -= neg[j] / omp

        g = dldp * slope * pi * qi
        grad[0] += g
        for q in range(Q):
            grad[1 + q] += g * xs[j, q]
        for k in range(K):
            g_lev[zoff[k] + lev[j, k]] += g
        d_gamma -= dldp * qi
        d_delta += dldp * pi

    for k in range(K):
        acc = 0.0
        for l in range(nlev[k]):
            i = zoff[k] + l
            grad[i] += sigma[k] * g_lev[i]
            acc += g_lev[i] * alpha[i]
        grad[soff + k] += acc

    # Student-t(3, 0, 2.5) on intercept and slopes
    for i in range(1 + Q):
        x = theta[i]
        lp -= _T_POW * math.log1p(x * x / _T_DENOM)
        grad[i] -= 2.0 * _T_POW * x / (_T_DENOM + x * x)
    # standard normal on the non-centred offsets
    for i in range(1 + Q, soff):
        lp -= 0.5 * theta[i] * theta[i]
        grad[i] -= theta[i]
    # half-t on sigma, with log-Jacobian of sigma = exp(w)
    for k in range(K):
        s = sigma[k]
        lp -= _T_POW * math.log1p(s * s / _T_DENOM)
        lp += theta[soff + k]
        grad[soff + k] += 1.0 - 2.0 * _T_POW * s * s / (_T_DENOM + s * s)
    # beta priors with the logit Jacobian folded in
    if gidx >= 0:
        u = theta[gidx]
        a = meas[4]
        b = meas[5]
        lp += -a * _log1p_exp(-u) - b * _log1p_exp(u)
        grad[gidx] += d_gamma * gamma * (1.0 - gamma) + a * (1.0 - gamma) - b * gamma
    if didx >= 0:
        u = theta[didx]
        a = meas[6]
        b = meas[7]
        lp += -a * _log1p_exp(-u) - b * _log1p_exp(u)
        grad[didx] += d_delta * delta * (1.0 - delta) + a * (1.0 - delta) - b * delta
    if not math.isfinite(lp):
        return -np.inf
    return lp


@njit(cache=True)
def cell_eta(beta0, beta, alpha_flat, zoff, lev, xs):
    """Linear predictor per cell for a batch of draws.

    ``beta0`` (B,), ``beta`` (B, Q), ``alpha_flat`` (B, sum L) with level blocks
    starting at ``zoff``; returns (B, J).
    """
    B = beta0.shape[0]
    J = lev.shape[0]
    Q = xs.shape[1]
    K = lev.shape[1]
    out = np.empty((B, J))
    for b in range(B):
        for j in range(J):
            eta = beta0[b]
            for q in range(Q):
                eta += beta[b, q] * xs[j, q]
            for k in range(K):
                eta += alpha_flat[b, zoff[k] + lev[j, k]]
            out[b, j] = eta
    return out


@njit(cache=True)
def weighted_prevalence(beta0, beta, alpha_flat, zoff, lev, xs, weights):
    """Count-weighted mean of inverse-logit cell predictions, one per draw.

    Avoids materialising the (draws x cells) matrix for large population tables.
    When the linear predictor is bounded well inside the exp range, exp(-eta)
    is built from per-level factors so the cell loop needs no exp call.
    """
    B = beta0.shape[0]
    J = lev.shape[0]
    Q = xs.shape[1]
    K = lev.shape[1]
    A = alpha_flat.shape[1]
    total = 0.0
    for j in range(J):
        total += weights[j]
    flat = np.empty((J, K), dtype=np.int64)
    for j in range(J):
        for k in range(K):
            flat[j, k] = zoff[k] + lev[j, k]
    xmax = 0.0
    for q in range(Q):
        for j in range(J):
            xmax = max(xmax, abs(xs[j, q]))
    out = np.empty(B)
    ea = np.empty(A)
    for b in range(B):
        bound = abs(beta0[b])
        for q in range(Q):
            bound += abs(beta[b, q]) * xmax
        for k in range(K):
            hi = zoff[k + 1] if k + 1 < K else A
            m = 0.0
            for i in range(zoff[k], hi):
                m = max(m, abs(alpha_flat[b, i]))
            bound += m
        acc = 0.0
        if bound < 700.0:
            for i in range(A):
                ea[i] = math.exp(-alpha_flat[b, i])
            e0 = math.exp(-beta0[b])
            for j in range(J):
                p = e0
                if Q > 0:
                    s = 0.0
                    for q in range(Q):
                        s += beta[b, q] * xs[j, q]
                    p *= math.exp(-s)
                for k in range(K):
                    p *= ea[flat[j, k]]
                acc += weights[j] / (1.0 + p)
        else:
            # 1 / (1 + inf) is 0, so the direct form needs no branch
            for j in range(J):
                eta = beta0[b]
                for q in range(Q):
                    eta += beta[b, q] * xs[j, q]
                for k in range(K):
                    eta += alpha_flat[b, flat[j, k]]
                acc += weights[j] / (1.0 + math.exp(-eta))
        out[b] = acc / total
    return out
