"""No-U-turn sampler with multinomial trajectory sampling.

Trees are built iteratively: a subtree of 2^depth leapfrog steps is grown one
step at a time and every aligned power-of-two segment is checked for a U-turn
as soon as it closes, which reproduces the checks of the recursive
formulation. Warmup follows the usual windowed scheme: dual-averaging step
size adaptation throughout, diagonal metric estimated over doubling windows.
"""

import math

import numpy as np
from numba import njit

from .kernels import logp_grad

MAX_DELTA_H = 1000.0

# per-iteration statistics columns
STAT_ACCEPT, STAT_DEPTH, STAT_LEAPFROG, STAT_DIVERGENT, STAT_STEPSIZE, STAT_ENERGY = range(6)
N_STATS = 6


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _kinetic(p, inv_metric):
    s = 0.0
    for i in range(p.shape[0]):
        s += inv_metric[i] * p[i] * p[i]
    return 0.5 * s


@njit(cache=True)
def _leapfrog(theta, p, grad, eps, inv_metric, pos, neg, lev, xs, nlev, meas):
    P = theta.shape[0]
    for i in range(P):
        p[i] += 0.5 * eps * grad[i]
    for i in range(P):
        theta[i] += eps * inv_metric[i] * p[i]
    lp = logp_grad(theta, pos, neg, lev, xs, nlev, meas, grad)
    for i in range(P):
        p[i] += 0.5 * eps * grad[i]
    return lp


@njit(cache=True)
def _no_uturn(p_start, p_end, rho, inv_metric):
    a = 0.0
    b = 0.0
    for i in range(rho.shape[0]):
        a += inv_metric[i] * p_start[i] * rho[i]
        b += inv_metric[i] * p_end[i] * rho[i]
    return a > 0.0 and b > 0.0


@njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@njit(cache=True)
def nuts_transition(theta, lp, grad, eps, inv_metric, max_depth, pos, neg, lev, xs, nlev, meas):
    """One NUTS transition from ``theta``.

    Returns (theta', lp', grad', mean accept prob, depth, n_leapfrog, divergent, energy).
    """
    P = theta.shape[0]
    p0 = np.empty(P)
    for i in range(P):
        p0[i] = np.random.normal() / math.sqrt(inv_metric[i])
    H0 = -lp + _kinetic(p0, inv_metric)

    th_l = theta.copy()
    p_l = p0.copy()
    g_l = grad.copy()
    th_r = theta.copy()
    p_r = p0.copy()
    g_r = grad.copy()
    rho = p0.copy()

    sample = theta.copy()
    sample_lp = lp
    sample_grad = grad.copy()
    log_w = 0.0

    # per-level U-turn checkpoints inside a subtree
    seg_p = np.empty((max_depth + 1, P))
    seg_rho = np.empty((max_depth + 1, P))

    th = np.empty(P)
    pp = np.empty(P)
    gg = np.empty(P)
    cand = np.empty(P)
    cand_grad = np.empty(P)
    rho_sub = np.empty(P)

    accept_sum = 0.0
    n_leap = 0
    divergent = False
    depth = 0
    while depth < max_depth:
        forward = np.random.random() < 0.5
        if forward:
            th[:] = th_r
            pp[:] = p_r
            gg[:] = g_r
            step = eps
        else:
            th[:] = th_l
            pp[:] = p_l
            gg[:] = g_l
            step = -eps

        n_steps = 1 << depth
        log_w_sub = -np.inf
        cand_lp = -np.inf
        rho_sub[:] = 0.0
        valid = True
        for i in range(n_steps):
            cur_lp = _leapfrog(th, pp, gg, step, inv_metric, pos, neg, lev, xs, nlev, meas)
            n_leap += 1
            H = -cur_lp + _kinetic(pp, inv_metric)
            if not math.isfinite(H):
                H = np.inf
            if H - H0 > MAX_DELTA_H:
                divergent = True
                valid = False
                break
            d = H0 - H
            accept_sum += 1.0 if d > 0.0 else math.exp(d)
            log_w_sub = _logaddexp(log_w_sub, d)
            if np.random.random() < math.exp(d - log_w_sub):
                cand[:] = th
                cand_grad[:] = gg
                cand_lp = cur_lp

            for lvl in range(1, depth + 1):
                if i % (1 << lvl) == 0:
                    seg_p[lvl, :] = pp
                    seg_rho[lvl, :] = rho_sub
            for k in range(P):
                rho_sub[k] += pp[k]
            for lvl in range(1, depth + 1):
                if (i + 1) % (1 << lvl) == 0:
                    seg = rho_sub - seg_rho[lvl]
                    if not _no_uturn(seg_p[lvl], pp, seg, inv_metric):
                        valid = False
                        break
            if not valid:
                break

        if not valid:
            break

        if np.random.random() < math.exp(log_w_sub - log_w):
            sample[:] = cand
            sample_grad[:] = cand_grad
            sample_lp = cand_lp
        log_w = _logaddexp(log_w, log_w_sub)

        if forward:
            th_r[:] = th
            p_r[:] = pp
            g_r[:] = gg
        else:
            th_l[:] = th
            p_l[:] = pp
            g_l[:] = gg
        for k in range(P):
            rho[k] += rho_sub[k]
        depth += 1
        if not _no_uturn(p_l, p_r, rho, inv_metric):
            break

    mean_accept = accept_sum / max(n_leap, 1)
    return sample, sample_lp, sample_grad, mean_accept, depth, n_leap, divergent, H0


@njit(cache=True)
def find_reasonable_step(theta, lp, grad, eps, inv_metric, pos, neg, lev, xs, nlev, meas):
    """Double or halve the step until one leapfrog crosses acceptance 0.8."""
    P = theta.shape[0]
    th = np.empty(P)
    g = np.empty(P)
    p = np.empty(P)
    direction = 0
    for _ in range(100):
        for i in range(P):
            p[i] = np.random.normal() / math.sqrt(inv_metric[i])
        H0 = -lp + _kinetic(p, inv_metric)
        th[:] = theta
        g[:] = grad
        new_lp = _leapfrog(th, p, g, eps, inv_metric, pos, neg, lev, xs, nlev, meas)
        H = -new_lp + _kinetic(p, inv_metric)
        delta_h = H0 - H
        if not math.isfinite(delta_h):
            delta_h = -np.inf
        d = 1 if delta_h > math.log(0.8) else -1
        if direction == 0:
            direction = d
        elif d != direction:
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7 or eps < 1e-10:
            break
    return eps


@njit(cache=True)
def _window_ends(n_warmup):
    """Ends (exclusive) of the metric adaptation windows, plus the buffers."""
    if n_warmup < 20:
        return np.zeros(0, dtype=np.int64), n_warmup, n_warmup
    init_buf = 75
    term_buf = 50
    base = 25
    if init_buf + term_buf + base > n_warmup:
        init_buf = int(0.15 * n_warmup)
        term_buf = int(0.1 * n_warmup)
        base = n_warmup - init_buf - term_buf
    ends = []
    start = init_buf
    size = base
    last = n_warmup - term_buf
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start = end
        size *= 2
    out = np.empty(len(ends), dtype=np.int64)
    for i in range(len(ends)):
        out[i] = ends[i]
    return out, init_buf, last


@njit(cache=True)
def run_chain(theta0, seed, n_warmup, n_draws, target_accept, max_depth, pos, neg, lev, xs, nlev, meas):
    """Warmup and sampling for one chain.

    Returns (draws (n_draws, P) unconstrained, log posterior per draw, stats
    (n_draws, N_STATS), final inverse metric).
    """
    _seed(seed)
    P = theta0.shape[0]
    theta = theta0.copy()
    grad = np.empty(P)
    lp = logp_grad(theta, pos, neg, lev, xs, nlev, meas, grad)
    inv_metric = np.ones(P)

    eps = find_reasonable_step(theta, lp, grad, 1.0, inv_metric, pos, neg, lev, xs, nlev, meas)
    mu = math.log(10.0 * eps)
    log_eps_bar = 0.0
    h_bar = 0.0
    da_t = 0
    da_gamma, da_t0, da_kappa = 0.05, 10.0, 0.75

    ends, window_start, window_last = _window_ends(n_warmup)
    w_idx = 0
    w_n = 0
    w_mean = np.zeros(P)
    w_m2 = np.zeros(P)

    draws = np.empty((n_draws, P))
    lps = np.empty(n_draws)
    stats = np.empty((n_draws, N_STATS))

    for it in range(n_warmup + n_draws):
        theta, lp, grad, acc, depth, n_leap, div, energy = nuts_transition(
            theta, lp, grad, eps, inv_metric, max_depth, pos, neg, lev, xs, nlev, meas
        )
        if it < n_warmup:
            da_t += 1
            h_bar = (1.0 - 1.0 / (da_t + da_t0)) * h_bar + (target_accept - acc) / (da_t + da_t0)
            log_eps = mu - math.sqrt(da_t) / da_gamma * h_bar
            w = da_t ** (-da_kappa)
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
            eps = math.exp(log_eps)

            if w_idx < ends.shape[0] and window_start <= it < window_last:
                w_n += 1
                for i in range(P):
                    dlt = theta[i] - w_mean[i]
                    w_mean[i] += dlt / w_n
                    w_m2[i] += dlt * (theta[i] - w_mean[i])
                if it + 1 == ends[w_idx]:
                    for i in range(P):
                        var = w_m2[i] / (w_n - 1) if w_n > 1 else 1.0
                        inv_metric[i] = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                    w_idx += 1
                    w_n = 0
                    w_mean[:] = 0.0
                    w_m2[:] = 0.0
                    eps = find_reasonable_step(theta, lp, grad, eps, inv_metric, pos, neg, lev, xs, nlev, meas)
                    mu = math.log(10.0 * eps)
                    log_eps_bar = 0.0
                    h_bar = 0.0
                    da_t = 0
            if it == n_warmup - 1:
                eps = math.exp(log_eps_bar)
        else:
            d = it - n_warmup
            draws[d, :] = theta
            lps[d] = lp
            stats[d, STAT_ACCEPT] = acc
            stats[d, STAT_DEPTH] = depth
            stats[d, STAT_LEAPFROG] = n_leap
            stats[d, STAT_DIVERGENT] = 1.0 if div else 0.0
            stats[d, STAT_STEPSIZE] = eps
            stats[d, STAT_ENERGY] = energy
    return draws, lps, stats, inv_metric
