"""Bootstrap particle filter for the latent log-volatility.

Each step propagates particles through the AR(1) transition, weights them by
the density of the observed log-return and resamples multinomially.  The
mean and standard deviation of the particle cloud are the summary vector
used by the pricers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from latent_sv import _kernels
from latent_sv.model import SVParams, stationary_initial
from latent_sv.rng import generator

InitMode = Literal["point", "stationary", "historical"]

DEFAULT_PARTICLES_LIKELIHOOD = 500
DEFAULT_PARTICLES_PRICING = 1000


class ParticleDegeneracyError(RuntimeError):
    def __init__(self, t, r_obs=None):
        msg = f"all particle weights vanished at t={t}"
        if r_obs is not None:
            msg += f" (r_obs={r_obs!r})"
        super().__init__(msg)
        self.t = t
        self.r_obs = r_obs


@dataclass(frozen=True)
class SummaryVector:
    mu: float
    zeta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.zeta])


@dataclass
class FilterState:
    t: int
    particles: np.ndarray
    innovations: np.ndarray
    weights: np.ndarray
    propagated: Optional[np.ndarray] = None
    conditional: bool = False
    ess: float = field(default=float("nan"))

    def __post_init__(self):
        if self.particles.ndim != 1 or self.particles.size < 2:
            raise ValueError("a filter needs at least 2 particles")
        if not np.all(np.isfinite(self.particles)):
            raise ValueError("particles must be finite")

    @property
    def m(self) -> int:
        return self.particles.size


def default_conditional(params: SVParams) -> bool:
    """Weight on the volatility innovation too whenever it carries information."""
    return params.rho != 0.0


def summarize(state: FilterState) -> SummaryVector:
    x = state.particles
    if x.min() == x.max():
        # exact for a point mass; the floating mean can be off by an ulp
        return SummaryVector(float(x[0]), 0.0)
    mu = float(x.mean())
    return SummaryVector(mu, float(np.sqrt(np.mean((x - mu) ** 2))))


def filter_init(
    params: SVParams,
    m: int,
    mode: InitMode = "stationary",
    sigma0: Optional[float] = None,
    history: Optional[Sequence[float]] = None,
    rng: Optional[np.random.Generator] = None,
    conditional: Optional[bool] = None,
) -> FilterState:
    if m < 2:
        raise ValueError("m must be >= 2")
    rng = rng if rng is not None else np.random.default_rng(0)
    cond = default_conditional(params) if conditional is None else conditional
    if mode == "point":
        if sigma0 is None:
            raise ValueError("point initialisation needs sigma0")
        particles = np.full(m, np.log(sigma0))
    elif mode in ("stationary", "historical"):
        mean, var = stationary_initial(params)
        particles = mean + np.sqrt(var) * rng.standard_normal(m)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    state = FilterState(0, particles, np.zeros(m), np.ones(m), conditional=cond)
    if mode == "historical":
        if history is None or len(history) == 0:
            raise ValueError("historical initialisation needs prior returns")
        for r_obs in history:
            state = filter_step(state, r_obs, params, rng)
        state.t = 0
    return state


def _step_arrays(particles, rng, r_obs, params: SVParams, conditional: bool):
    B, m = particles.shape
    propagated = np.empty((B, m))
    logw = np.empty((B, m))
    out_p = np.empty((B, m))
    out_z = np.empty((B, m))
    stats = np.zeros((B, 6))
    _kernels.filter_step_batch(
        particles, rng, np.ascontiguousarray(r_obs, dtype=float),
        params.beta_star, params.decay, params.vol_step_sd, params.rho, params.r, params.delta,
        conditional, propagated, logw, out_p, out_z, stats,
    )
    return propagated, logw, out_p, out_z, stats


def filter_step(state: FilterState, r_obs: float, params: SVParams, rng: np.random.Generator) -> FilterState:
    propagated, logw, out_p, out_z, stats = _step_arrays(
        np.ascontiguousarray(state.particles[None, :]), rng, np.array([r_obs]), params, state.conditional
    )
    if stats[0, 5] == 0.0:
        raise ParticleDegeneracyError(state.t + 1, r_obs)
    w = np.exp(logw[0] - logw[0].max())
    return FilterState(
        t=state.t + 1,
        particles=out_p[0],
        innovations=out_z[0],
        weights=w,
        propagated=propagated[0],
        conditional=state.conditional,
        ess=float(stats[0, 4]),
    )


def filter_run(
    returns: Sequence[float],
    params: SVParams,
    m: int = DEFAULT_PARTICLES_PRICING,
    init: InitMode = "stationary",
    sigma0: Optional[float] = None,
    history: Optional[Sequence[float]] = None,
    seed: Optional[int] = 0,
    conditional: Optional[bool] = None,
) -> list[tuple[FilterState, SummaryVector]]:
    """Filter a whole return series; element 0 is the initial state."""
    returns = np.asarray(returns, dtype=float)
    if not np.all(np.isfinite(returns)):
        raise ValueError("returns must be finite")
    rng = generator(seed)
    state = filter_init(params, m, init, sigma0=sigma0, history=history, rng=rng, conditional=conditional)
    out = [(state, summarize(state))]
    for r_obs in returns:
        state = filter_step(state, r_obs, params, rng)
        out.append((state, summarize(state)))
    return out


def run_filter_batch(
    returns: np.ndarray,
    params: SVParams,
    init_particles: np.ndarray,
    rng: np.random.Generator,
    conditional: Optional[bool] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one filter per row of ``returns`` (shape (B, T)).

    ``init_particles`` is (B, m).  Returns (mu, zeta), each (B, T + 1).
    Rows are independent; each sees only its own returns.
    """
    cond = default_conditional(params) if conditional is None else conditional
    particles = np.array(init_particles, dtype=float, order="C")
    B, m = particles.shape
    T = returns.shape[1]
    mu = np.empty((B, T + 1))
    zeta = np.empty((B, T + 1))
    mom = np.empty((B, 2))
    _kernels.row_moments(particles, mom)
    mu[:, 0], zeta[:, 0] = mom[:, 0], mom[:, 1]
    propagated = np.empty((B, m))
    logw = np.empty((B, m))
    out_p = np.empty((B, m))
    out_z = np.empty((B, m))
    stats = np.zeros((B, 6))
    for t in range(T):
        _kernels.filter_step_batch(
            particles, rng, np.ascontiguousarray(returns[:, t]),
            params.beta_star, params.decay, params.vol_step_sd, params.rho, params.r, params.delta,
            cond, propagated, logw, out_p, out_z, stats,
        )
        bad = stats[:, 5] == 0.0
        if bad.any():
            raise ParticleDegeneracyError(t + 1, float(returns[np.argmax(bad), t]))
        particles, out_p = out_p, particles
        mu[:, t + 1], zeta[:, t + 1] = stats[:, 0], stats[:, 1]
    return mu, zeta


def log_likelihood(
    returns: Sequence[float],
    params: SVParams,
    m: int = DEFAULT_PARTICLES_LIKELIHOOD,
    seed: Optional[int] = 0,
    init: InitMode = "stationary",
    sigma0: Optional[float] = None,
    estimator: Literal["log_mean", "mean_log"] = "log_mean",
    conditional: Optional[bool] = None,
) -> float:
    """Particle estimate of log p(r_1, ..., r_n | params).

    ``log_mean`` sums log((1/m) sum_i w_i) over time, the usual Kitagawa
    estimator.  ``mean_log`` sums (1/m) sum_i log w_i instead.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    returns = np.ascontiguousarray(returns, dtype=float)
    cond = default_conditional(params) if conditional is None else conditional
    rng = generator(seed)
    if init == "point":
        if sigma0 is None:
            raise ValueError("point initialisation needs sigma0")
        init_p = np.full(m, np.log(sigma0))
    elif init == "stationary":
        mean, var = stationary_initial(params)
        init_p = mean + np.sqrt(var) * rng.standard_normal(m)
    else:
        raise ValueError(f"unsupported init mode {init!r} for the likelihood")
    ll, failed = _kernels.log_likelihood_kernel(
        returns, init_p, rng,
        params.beta_star, params.decay, params.vol_step_sd, params.rho, params.r, params.delta,
        cond, estimator == "log_mean",
    )
    if failed >= 0:
        raise ParticleDegeneracyError(failed + 1, float(returns[failed]))
    return float(ll)


def gaussian_normality_score(particles: np.ndarray) -> dict:
    """How close a particle cloud is to its moment-matched Gaussian.

    Reports skewness, excess kurtosis and the Kolmogorov-Smirnov distance;
    meant as a diagnostic, not a test.
    """
    from scipy import stats

    x = np.asarray(particles, dtype=float)
    sd = x.std()
    if sd == 0:
        return {"skew": 0.0, "excess_kurtosis": 0.0, "ks": 0.0}
    ks = stats.kstest((x - x.mean()) / sd, "norm").statistic
    return {"skew": float(stats.skew(x)), "excess_kurtosis": float(stats.kurtosis(x)), "ks": float(ks)}


def dump_particles(history: Sequence[tuple[FilterState, SummaryVector]], path) -> Path:
    """Write particle clouds as CSV rows (t, particle_index, y)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "particle_index", "y"])
        for state, _ in history:
            for i, y in enumerate(state.particles):
                w.writerow([state.t, i, repr(float(y))])
    return path
