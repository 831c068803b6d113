"""Compiled inner loops for the particle filter.

Kernels take a ``numpy.random.Generator`` and draw from it directly, so the
streams are the same PCG64 streams used everywhere else.

Multinomial resampling uses sorted uniforms built from exponential spacings
(the normalised partial sums of m + 1 standard exponentials are the order
statistics of m iid uniforms), which turns the inverse-CDF lookup into a
single linear merge.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _weigh(prev, rng, r_obs, beta_star, decay, vol_sd, rho, r, dt, sqdt, scale, log_scale,
           conditional, prop, innov, logw):
    """Propagate one cloud and fill log-weights; returns (max, sum) of log-weights."""
    m = prev.shape[0]
    mx = -np.inf
    lw_sum = 0.0
    for i in range(m):
        zz = rng.standard_normal()
        y = beta_star + decay * (prev[i] - beta_star) + vol_sd * zz
        prop[i] = y
        innov[i] = zz
        sig2 = math.exp(2.0 * y)
        mean = (r - 0.5 * sig2) * dt
        if conditional:
            mean += math.sqrt(sig2) * sqdt * rho * zz
        var = sig2 * scale
        if var > 0.0:
            d = r_obs - mean
            lw = -0.5 * (LOG_2PI + 2.0 * y + log_scale) - 0.5 * d * d / var
        else:
            lw = -np.inf
        logw[i] = lw
        lw_sum += lw
        if lw > mx:
            mx = lw
    return mx, lw_sum


@njit(cache=True)
def _resample(rng, logw, mx, prop, innov, cum, out_p, out_z):
    """Multinomial resampling; returns (sum of shifted weights, sum of squares)."""
    m = prop.shape[0]
    total = 0.0
    sq = 0.0
    for i in range(m):
        w = math.exp(logw[i] - mx)
        total += w
        sq += w * w
        cum[i] = total
    # sorted uniforms from exponential spacings
    e_total = 0.0
    for i in range(m + 1):
        e = rng.standard_exponential()
        e_total += e
        if i < m:
            out_z[i] = e_total  # scratch: running sums
    factor = total / e_total
    j = 0
    for i in range(m):
        target = out_z[i] * factor
        while j < m - 1 and cum[j] <= target:
            j += 1
        k = j
        if k == m - 1:
            # rounding can land on a trailing zero-weight particle
            while k > 0 and cum[k] == cum[k - 1]:
                k -= 1
        out_p[i] = prop[k]
        out_z[i] = innov[k]
    return total, sq


@njit(cache=True)
def filter_step_batch(
    particles, rng, r_obs,
    beta_star, decay, vol_sd, rho, r, dt, conditional,
    propagated, logw, out_particles, out_innov, stats,
):
    """Advance every row of ``particles`` by one observation.

    ``stats[b]`` receives (mu, zeta, log mean weight, mean log weight, ess,
    ok).  ``ok`` is 0.0 when the row's weights were all zero or non-finite.
    """
    B, m = particles.shape
    sqdt = math.sqrt(dt)
    scale = dt * (1.0 - rho * rho) if conditional else dt
    log_scale = math.log(scale) if scale > 0.0 else -np.inf
    cum = np.empty(m)
    innov = np.empty(m)
    for b in range(B):
        mx, lw_sum = _weigh(particles[b], rng, r_obs[b], beta_star, decay, vol_sd, rho, r, dt,
                            sqdt, scale, log_scale, conditional, propagated[b], innov, logw[b])
        if not (mx > -np.inf and mx < np.inf):
            stats[b, 5] = 0.0
            continue
        total, sq = _resample(rng, logw[b], mx, propagated[b], innov, cum,
                              out_particles[b], out_innov[b])
        stats[b, 2] = mx + math.log(total / m)
        stats[b, 3] = lw_sum / m
        stats[b, 4] = total * total / sq
        stats[b, 5] = 1.0
        acc = 0.0
        for i in range(m):
            acc += out_particles[b, i]
        mu = acc / m
        ss = 0.0
        for i in range(m):
            d = out_particles[b, i] - mu
            ss += d * d
        stats[b, 0] = mu
        stats[b, 1] = math.sqrt(ss / m)


@njit(cache=True)
def row_moments(x, out):
    B, m = x.shape
    for b in range(B):
        acc = 0.0
        for i in range(m):
            acc += x[b, i]
        mu = acc / m
        ss = 0.0
        for i in range(m):
            d = x[b, i] - mu
            ss += d * d
        out[b, 0] = mu
        out[b, 1] = math.sqrt(ss / m)


@njit(cache=True)
def log_likelihood_kernel(
    returns, init, rng,
    beta_star, decay, vol_sd, rho, r, dt, conditional, log_of_mean,
):
    """Kitagawa log-likelihood of one return series in a single compiled pass.

    ``init`` holds the initial particles.  Returns (loglik, failed_step),
    where ``failed_step`` is -1 unless the weights degenerated at that index.
    """
    m = init.shape[0]
    n = returns.shape[0]
    particles = init.copy()
    nxt = np.empty(m)
    prop = np.empty(m)
    innov = np.empty(m)
    logw = np.empty(m)
    cum = np.empty(m)
    scratch = np.empty(m)
    sqdt = math.sqrt(dt)
    scale = dt * (1.0 - rho * rho) if conditional else dt
    if not scale > 0.0:
        return -np.inf, 0
    log_scale = math.log(scale)
    total_ll = 0.0
    for t in range(n):
        mx, lw_sum = _weigh(particles, rng, returns[t], beta_star, decay, vol_sd, rho, r, dt,
                            sqdt, scale, log_scale, conditional, prop, innov, logw)
        if not (mx > -np.inf and mx < np.inf):
            return -np.inf, t
        total, _ = _resample(rng, logw, mx, prop, innov, cum, nxt, scratch)
        if log_of_mean:
            total_ll += mx + math.log(total / m)
        else:
            total_ll += lw_sum / m
        particles, nxt = nxt, particles
    return total_ll, -1
