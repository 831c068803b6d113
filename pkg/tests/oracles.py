"""Independent reference computations shared by unit and acceptance tests."""
from __future__ import annotations

import numpy as np
from scipy import stats

from latent_sv.model import OptionContract, SVParams, simulate_paths, stationary_initial


def grid_bayes_filter(returns, params: SVParams, n_nodes: int = 501, width: float = 7.0):
    """Posterior mean of Y_t on a fixed grid, rho = 0, stationary prior.

    Returns an array of length T + 1 (entry 0 is the prior mean).
    """
    mean0, var0 = stationary_initial(params)
    sd0 = np.sqrt(var0)
    y = np.linspace(mean0 - width * sd0, mean0 + width * sd0, n_nodes)
    h = y[1] - y[0]
    p = stats.norm.pdf(y, mean0, sd0)
    p /= p.sum()
    cond_mean = params.beta_star + params.decay * (y - params.beta_star)
    # kernel[j, i] = P(next = y_j | now = y_i), normalised per column
    kernel = stats.norm.pdf(y[:, None], cond_mean[None, :], params.vol_step_sd) * h
    kernel /= kernel.sum(axis=0, keepdims=True)
    sig2 = np.exp(2.0 * y)
    out = [float(p @ y)]
    for r_obs in returns:
        p = kernel @ p
        loglik = stats.norm.logpdf(r_obs, (params.r - 0.5 * sig2) * params.delta, np.sqrt(sig2 * params.delta))
        w = p * np.exp(loglik - loglik.max())
        p = w / w.sum()
        out.append(float(p @ y))
    return np.array(out)


def synthetic_returns(params: SVParams, n: int, seed: int, s0: float = 100.0):
    """One simulated log-return series of length n started from the stationary law."""
    contract = OptionContract(strike=s0, steps=n, s0=s0)
    panel = simulate_paths(params, contract, 1, seed=seed)
    return panel.log_returns[0], panel.y[0]


def gaussian_loglik(returns, sigma: float, r: float, delta: float) -> float:
    """Exact log-likelihood of iid N((r - sigma^2/2) delta, sigma^2 delta) returns."""
    returns = np.asarray(returns, dtype=float)
    mean = (r - 0.5 * sigma ** 2) * delta
    sd = sigma * np.sqrt(delta)
    return float(np.sum(-0.5 * np.log(2 * np.pi) - np.log(sd) - 0.5 * ((returns - mean) / sd) ** 2))
