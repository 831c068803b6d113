"""Compiled node evaluation for the grid pricer.

All random numbers for a time slice are drawn up front and shared by every
node, so neighbouring nodes see common random numbers and the result does not
depend on how nodes are scheduled.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _locate(axis, x):
    """Cell index and weight of ``x`` on ``axis`` with clamping."""
    n = axis.shape[0]
    if n == 1:
        return 0, 0.0
    if x <= axis[0]:
        return 0, 0.0
    if x >= axis[n - 1]:
        return n - 2, 1.0
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if axis[mid] <= x:
            lo = mid
        else:
            hi = mid
    return lo, (x - axis[lo]) / (axis[lo + 1] - axis[lo])


@njit(cache=True)
def trilinear(a0, a1, a2, values, x0, x1, x2):
    i, wi = _locate(a0, x0)
    j, wj = _locate(a1, x1)
    k, wk = _locate(a2, x2)
    i1 = min(i + 1, a0.shape[0] - 1)
    j1 = min(j + 1, a1.shape[0] - 1)
    k1 = min(k + 1, a2.shape[0] - 1)
    c00 = values[i, j, k] * (1.0 - wi) + values[i1, j, k] * wi
    c01 = values[i, j, k1] * (1.0 - wi) + values[i1, j, k1] * wi
    c10 = values[i, j1, k] * (1.0 - wi) + values[i1, j1, k] * wi
    c11 = values[i, j1, k1] * (1.0 - wi) + values[i1, j1, k1] * wi
    c0 = c00 * (1.0 - wj) + c10 * wj
    c1 = c01 * (1.0 - wj) + c11 * wj
    return c0 * (1.0 - wk) + c1 * wk


@njit(cache=True)
def trilinear_many(a0, a1, a2, values, pts, out):
    for n in range(pts.shape[0]):
        out[n] = trilinear(a0, a1, a2, values, pts[n, 0], pts[n, 1], pts[n, 2])


@njit(cache=True)
def _inner_filter(mu, zeta, r_sim, eps, pz, expo, beta_star, decay, vol_sd, rho, r, dt,
                  conditional, prop, logw, cum):
    """Reweight and resample the N(mu, zeta^2) cloud against one simulated
    return; returns (mean, sd, ok) of the resampled cloud."""
    m = eps.shape[0]
    sqdt = math.sqrt(dt)
    scale = dt * (1.0 - rho * rho) if conditional else dt
    log_scale = math.log(scale)
    mx = -np.inf
    for i in range(m):
        zz = pz[i]
        y = beta_star + decay * (mu + zeta * eps[i] - beta_star) + vol_sd * zz
        prop[i] = y
        sig2 = math.exp(2.0 * y)
        mean = (r - 0.5 * sig2) * dt
        if conditional:
            mean += math.sqrt(sig2) * sqdt * rho * zz
        d = r_sim - mean
        lw = -0.5 * (LOG_2PI + 2.0 * y + log_scale) - 0.5 * d * d / (sig2 * scale)
        logw[i] = lw
        if lw > mx:
            mx = lw
    if not (mx > -np.inf and mx < np.inf):
        return 0.0, 0.0, False
    total = 0.0
    for i in range(m):
        total += math.exp(logw[i] - mx)
        cum[i] = total
    e_total = 0.0
    for i in range(m + 1):
        e_total += expo[i]
    factor = total / e_total
    j = 0
    run = 0.0
    acc = 0.0
    acc2 = 0.0
    for i in range(m):
        run += expo[i]
        target = run * factor
        while j < m - 1 and cum[j] <= target:
            j += 1
        k = j
        if k == m - 1:
            while k > 0 and cum[k] == cum[k - 1]:
                k -= 1
        acc += prop[k]
        acc2 += prop[k] * prop[k]
    mean = acc / m
    var = acc2 / m - mean * mean
    return mean, math.sqrt(var) if var > 0.0 else 0.0, True


@njit(cache=True)
def _column_continuation(s_nodes, mu, zeta, eps, idx, z1, z2, pz, expo,
                         beta_star, decay, vol_sd, rho, r, dt, conditional,
                         a0, a1, a2, values, out):
    """Mean next-slice value, undiscounted, for every price in ``s_nodes`` at
    one (mu, zeta).

    The simulated log-return does not depend on the current price, so each
    inner filter runs once and serves the whole price column.  Returns the
    number of inner draws whose filter degenerated twice (the retry borrows
    the next draw's propagation noise); those draws are skipped.
    """
    m = eps.shape[0]
    n_inner = idx.shape[0]
    ns = s_nodes.shape[0]
    prop = np.empty(m)
    logw = np.empty(m)
    cum = np.empty(m)
    rho_c = math.sqrt(1.0 - rho * rho)
    sqdt = math.sqrt(dt)
    for k in range(ns):
        out[k] = 0.0
    failed = 0
    for j in range(n_inner):
        y0 = mu + zeta * eps[idx[j]]
        y1 = beta_star + decay * (y0 - beta_star) + vol_sd * z2[j]
        sig = math.exp(y1)
        r_sim = (r - 0.5 * sig * sig) * dt + sig * sqdt * (rho_c * z1[j] + rho * z2[j])
        growth = math.exp(r_sim)
        mu1, zeta1, ok = _inner_filter(mu, zeta, r_sim, eps, pz[j], expo[j], beta_star, decay,
                                       vol_sd, rho, r, dt, conditional, prop, logw, cum)
        if not ok:
            alt = (j + 1) % n_inner
            mu1, zeta1, ok = _inner_filter(mu, zeta, r_sim, eps, pz[alt], expo[alt], beta_star,
                                           decay, vol_sd, rho, r, dt, conditional, prop, logw, cum)
        if not ok:
            failed += 1
            continue
        for k in range(ns):
            out[k] += trilinear(a0, a1, a2, values, s_nodes[k] * growth, mu1, zeta1)
    for k in range(ns):
        out[k] /= n_inner
    return failed


@njit(cache=True, parallel=True)
def slice_continuation(s_nodes, mu_nodes, zeta_nodes, eps, idx, z1, z2, pz, expo,
                       beta_star, decay, vol_sd, rho, r, dt, conditional,
                       a0, a1, a2, values, out, failed):
    """Fill ``out[:, i, k]`` for every (mu_nodes[i], zeta_nodes[k])."""
    nmu = mu_nodes.shape[0]
    nz = zeta_nodes.shape[0]
    for c in prange(nmu * nz):
        i = c // nz
        k = c % nz
        col = np.empty(s_nodes.shape[0])
        failed[i, k] = _column_continuation(s_nodes, mu_nodes[i], zeta_nodes[k], eps, idx, z1, z2,
                                            pz, expo, beta_star, decay, vol_sd, rho, r, dt,
                                            conditional, a0, a1, a2, values, col)
        out[:, i, k] = col
