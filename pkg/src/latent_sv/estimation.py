"""Bayesian estimation of the volatility model and its risk premium.

Share returns inform (rho, alpha, beta, gamma) through a random-walk
Metropolis chain driven by the particle-filter likelihood.  Option quotes then
inform lambda through the sum of squared pricing errors S(lambda), whose
posterior is proportional to S(lambda)^(-L/2) and is summarised by a Laplace
approximation at the grid minimiser.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from latent_sv.filter import DEFAULT_PARTICLES_LIKELIHOOD, ParticleDegeneracyError, log_likelihood
from latent_sv.model import TRADING_DAY, InvalidParameterError, OptionContract, SVParams
from latent_sv.rng import derive_seed, generator

PROPOSAL_VARIANCES = (0.001, 0.005, 0.0025, 0.001)
DEFAULT_DRAWS = 50_000
DEFAULT_BURN_IN = 5_000
PARAM_NAMES = ("rho", "alpha", "beta", "gamma")
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class CurvatureError(ValueError):
    pass


class InconclusiveGridError(ValueError):
    pass


class QuotePricingError(RuntimeError):
    pass


# ---------------------------------------------------------------- transforms

@dataclass(frozen=True)
class ThetaTilde:
    """Unconstrained coordinates (tan(rho pi / 2), log alpha, beta, log gamma)."""

    rho_t: float
    alpha_t: float
    beta: float
    gamma_t: float

    def __post_init__(self):
        if not all(np.isfinite(self.as_array())):
            raise InvalidParameterError("transformed parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_t, self.alpha_t, self.beta, self.gamma_t])

    @classmethod
    def from_array(cls, x) -> "ThetaTilde":
        return cls(*(float(v) for v in x))


def transform(theta) -> ThetaTilde:
    """Map (rho, alpha, beta, gamma) to the unconstrained scale."""
    rho, alpha, beta, gamma = theta
    if not -1.0 < rho < 1.0:
        raise InvalidParameterError(f"rho={rho} must lie strictly inside (-1, 1)")
    if not (alpha > 0 and gamma > 0):
        raise InvalidParameterError("alpha and gamma must be > 0")
    return ThetaTilde(math.tan(rho * math.pi / 2.0), math.log(alpha), float(beta), math.log(gamma))


def inverse_transform(tt: ThetaTilde) -> tuple:
    return (2.0 / math.pi * math.atan(tt.rho_t), math.exp(tt.alpha_t), tt.beta, math.exp(tt.gamma_t))


def log_prior(tt) -> float:
    """Independent standard normals on the four unconstrained coordinates."""
    x = tt.as_array() if isinstance(tt, ThetaTilde) else np.asarray(tt, dtype=float)
    return float(-4.0 * LOG_SQRT_2PI - 0.5 * np.dot(x, x))


def log_prior_grad(tt) -> np.ndarray:
    x = tt.as_array() if isinstance(tt, ThetaTilde) else np.asarray(tt, dtype=float)
    return -x


def log_jacobian(tt: ThetaTilde) -> float:
    """log |d theta / d theta_tilde|."""
    return math.log(2.0 / math.pi) - math.log1p(tt.rho_t ** 2) + tt.alpha_t + tt.gamma_t


# ---------------------------------------------------------------------- MCMC

def drift_estimate(returns, delta: float = TRADING_DAY) -> float:
    """Moment estimate of the physical drift: E r = (mu - E sigma^2 / 2) delta."""
    r = np.asarray(returns, dtype=float)
    return float(r.mean() / delta + r.var() / (2.0 * delta))


@dataclass
class McmcTrace:
    draws: np.ndarray       # (B, 4) on the original scale
    log_posts: np.ndarray   # (B,)
    acceptance_rate: float
    seed: Optional[int]
    burn_in: int
    drift: float = 0.0
    runtime: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance rate must lie in [0, 1]")

    @property
    def kept(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    def posterior_mean(self) -> np.ndarray:
        return self.kept.mean(axis=0)

    def posterior_median(self) -> np.ndarray:
        return np.median(self.kept, axis=0)

    def credible_interval(self, level: float = 0.95) -> np.ndarray:
        """Equal-tailed intervals, one (lo, hi) row per parameter."""
        a = (1.0 - level) / 2.0
        return np.quantile(self.kept, [a, 1.0 - a], axis=0).T

    def summary(self, which: str = "mean") -> tuple:
        v = self.posterior_mean() if which == "mean" else self.posterior_median()
        return tuple(float(x) for x in v)

    def to_csv(self, path) -> Path:
        """Every draw with its log-posterior; burn-in rows flagged."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *PARAM_NAMES, "log_post", "burn_in"])
            for b, (row, lp) in enumerate(zip(self.draws, self.log_posts)):
                w.writerow([b, *(repr(float(x)) for x in row), repr(float(lp)), int(b < self.burn_in)])
        return path


def _params_from(theta, drift: float, delta: float) -> SVParams:
    rho, alpha, beta, gamma = theta
    return SVParams(rho=rho, alpha=alpha, beta=beta, gamma=gamma, lam=0.0, r=drift, delta=delta)


def log_posterior(
    tt: ThetaTilde,
    returns,
    drift: float,
    m: int = DEFAULT_PARTICLES_LIKELIHOOD,
    seed: Optional[int] = 0,
    delta: float = TRADING_DAY,
    jacobian: bool = False,
) -> float:
    """Particle log-likelihood plus log-prior; -inf when the filter collapses.

    With ``jacobian`` the standard normal priors sit on the original
    parameters and the change-of-variables term is added.
    """
    theta = inverse_transform(tt)
    try:
        params = _params_from(theta, drift, delta)
        ll = log_likelihood(returns, params, m=m, seed=seed)
    except (ParticleDegeneracyError, InvalidParameterError):
        return -math.inf
    if jacobian:
        return ll + log_prior(np.asarray(theta)) + log_jacobian(tt)
    return ll + log_prior(tt)


def mcmc_run(
    returns,
    m: int = DEFAULT_PARTICLES_LIKELIHOOD,
    B: int = DEFAULT_DRAWS,
    burn_in: int = DEFAULT_BURN_IN,
    proposal_variances: Sequence[float] = PROPOSAL_VARIANCES,
    init=(0.0, 1.0, 0.0, 1.0),
    seed: Optional[int] = 0,
    delta: float = TRADING_DAY,
    drift: Optional[float] = None,
    jacobian: bool = False,
    refresh_current: bool = False,
    log_target: Optional[Callable[[np.ndarray], float]] = None,
    progress: Optional[Callable[[int], None]] = None,
) -> McmcTrace:
    """Random-walk Metropolis on the unconstrained scale.

    The current log-posterior is stored and reused until a proposal is
    accepted; ``refresh_current`` re-estimates it every iteration instead.
    Likelihood seeds are derived from ``seed`` and the iteration number.
    ``log_target`` replaces the particle posterior (on the unconstrained
    vector), which is how toy targets are checked.
    """
    t0 = time.perf_counter()
    if B <= burn_in:
        raise ValueError("B must exceed burn_in")
    returns = np.asarray(returns, dtype=float)
    mu = drift_estimate(returns, delta) if drift is None and log_target is None else (drift or 0.0)
    sd = np.sqrt(np.asarray(proposal_variances, dtype=float))
    rng = generator(seed, 0)

    def target(x: np.ndarray, it: int) -> float:
        if log_target is not None:
            return float(log_target(x))
        return log_posterior(ThetaTilde.from_array(x), returns, mu, m=m,
                             seed=derive_seed(seed, 1, it), delta=delta, jacobian=jacobian)

    x = np.atleast_1d(np.asarray(init, dtype=float)) if log_target is not None else transform(init).as_array()
    if sd.size != x.size:
        raise ValueError("one proposal variance per coordinate is required")
    lp = target(x, 0)
    if not np.isfinite(lp):
        raise ValueError("initial log-posterior is not finite")
    draws = np.empty((B, x.size))
    lps = np.empty(B)
    accepted = 0
    for b in range(B):
        if refresh_current and b > 0:
            lp_now = target(x, 2 * b + 1)
            lp = lp_now if np.isfinite(lp_now) else lp
        prop = x + sd * rng.standard_normal(x.size)
        lp_prop = target(prop, 2 * b + 2)
        if np.log(rng.random()) <= lp_prop - lp:
            x, lp = prop, lp_prop
            accepted += 1
        draws[b] = x
        lps[b] = lp
        if progress is not None:
            progress(b)
    if log_target is None:
        draws = np.array([inverse_transform(ThetaTilde.from_array(d)) for d in draws])
    return McmcTrace(draws=draws, log_posts=lps, acceptance_rate=accepted / B, seed=seed,
                     burn_in=burn_in, drift=mu, runtime=time.perf_counter() - t0)


# ------------------------------------------------------------- risk premium

@dataclass(frozen=True)
class OptionQuote:
    """An observed American put price with the inputs needed to price it."""

    price: float
    strike: float
    steps: int
    s0: float
    sigma0: float
    r: float = 0.0
    quote_id: str = ""

    def contract(self) -> OptionContract:
        return OptionContract(strike=self.strike, steps=self.steps, s0=self.s0, sigma0=self.sigma0)


def historical_sigma0(returns, window: int = 10, delta: float = TRADING_DAY) -> float:
    """Annualised root-mean-square of the last ``window`` log-returns."""
    r = np.asarray(returns, dtype=float)[-window:]
    if r.size == 0:
        raise ValueError("need at least one return")
    v = float(np.sqrt(np.mean(r ** 2) / delta))
    if not v > 0:
        raise ValueError("historical volatility is zero")
    return v


@dataclass(frozen=True)
class PricingConfig:
    """Method C settings used to price quotes; seeds are shared across lambda."""

    M: int = 15_000
    m: int = 1_000
    seed: Optional[int] = 0
    scaling: str = "standardize"


Pricer = Callable[[OptionQuote, SVParams, int], float]


def method_c_pricer(config: PricingConfig) -> Pricer:
    from latent_sv.lsm import lsm_price, simulate_augmented_paths

    def price(quote: OptionQuote, params: SVParams, i: int) -> float:
        contract = quote.contract()
        panel = simulate_augmented_paths(params, contract, "C", M=config.M, m_particles=config.m,
                                         seed=derive_seed(config.seed, i))
        est, _ = lsm_price(panel, contract, params, scaling=config.scaling)
        return est.price

    return price


def sse_lambda(
    lam: float,
    theta_star: SVParams,
    quotes: Sequence[OptionQuote],
    config: PricingConfig = PricingConfig(),
    pricer: Optional[Pricer] = None,
) -> float:
    """S(lambda): squared pricing errors summed over the quotes.

    Quote i is always priced with the seed derived from (config.seed, i), so
    S is a smooth-ish deterministic function of lambda.
    """
    if len(quotes) == 0:
        raise ValueError("need at least one quote")
    pricer = pricer if pricer is not None else method_c_pricer(config)
    total = 0.0
    for i, q in enumerate(quotes):
        params = theta_star.with_(lam=float(lam), r=q.r)
        try:
            p = pricer(q, params, i)
        except Exception as exc:
            raise QuotePricingError(f"pricing failed for quote {q.quote_id or i}: {exc}") from exc
        total += (q.price - p) ** 2
    return float(total)


@dataclass
class LambdaPosterior:
    lambda_star: float
    v_star: float
    ci95: tuple
    grid: list            # (lambda_j, S(lambda_j)) pairs
    L: int
    delta_g: float

    def __post_init__(self):
        if not self.v_star > 0:
            raise CurvatureError("posterior variance must be positive")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "sse", "is_mode"])
            for lam, s in self.grid:
                w.writerow([repr(float(lam)), repr(float(s)), int(lam == self.lambda_star)])
        return path


def laplace_from_sse(lams: Sequence[float], sse: Sequence[float], L: int) -> LambdaPosterior:
    """Gaussian summary of p(lambda | quotes) proportional to S^(-L/2).

    The mode is the grid minimiser of S; the curvature comes from central
    differences over the (uniform) grid spacing.
    """
    lams = np.asarray(lams, dtype=float)
    S = np.asarray(sse, dtype=float)
    if lams.size < 3 or lams.shape != S.shape:
        raise ValueError("need at least three matching (lambda, S) points")
    steps = np.diff(lams)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("lambda grid must be uniform and increasing")
    dg = float(steps[0])
    j = int(np.argmin(S))
    if j == 0 or j == lams.size - 1:
        raise InconclusiveGridError(f"S is smallest at the grid end lambda={lams[j]}; widen the grid")
    s_m, s_0, s_p = S[j - 1], S[j], S[j + 1]
    if not s_0 > 0:
        raise CurvatureError(f"S vanishes at lambda={lams[j]}; the posterior is degenerate")
    d1 = (s_p - s_m) / (2.0 * dg)
    d2 = (s_p - 2.0 * s_0 + s_m) / dg ** 2
    precision = 0.5 * L * (d2 * s_0 - d1 ** 2) / s_0 ** 2
    if not precision > 0:
        raise CurvatureError(f"S is not locally convex at lambda={lams[j]}")
    v = 1.0 / precision
    half = 1.96 * math.sqrt(v)
    lam_star = float(lams[j])
    return LambdaPosterior(lambda_star=lam_star, v_star=v, ci95=(lam_star - half, lam_star + half),
                           grid=list(zip(lams.tolist(), S.tolist())), L=int(L), delta_g=dg)


def lambda_grid(center: float, half_width: float, delta_g: float = 0.05) -> np.ndarray:
    n = int(round(half_width / delta_g))
    return center + delta_g * np.arange(-n, n + 1)


def lambda_posterior(
    theta_star: SVParams,
    quotes: Sequence[OptionQuote],
    grid: Sequence[float],
    config: PricingConfig = PricingConfig(),
    pricer: Optional[Pricer] = None,
) -> LambdaPosterior:
    pricer = pricer if pricer is not None else method_c_pricer(config)
    sse = [sse_lambda(lam, theta_star, quotes, config, pricer) for lam in grid]
    return laplace_from_sse(grid, sse, len(quotes))


def synthetic_quotes(
    theta: SVParams,
    lam_true: float,
    contracts: Sequence[tuple],
    noise_sd: float,
    config: PricingConfig,
    seed: Optional[int] = 0,
) -> list:
    """Quotes priced by Method C at ``lam_true`` plus Gaussian noise.

    ``contracts`` holds (strike, steps, s0, sigma0, r) tuples.  Paths come
    from seeds unrelated to ``config.seed`` so fitting never sees the
    generating panels.
    """
    gen_config = PricingConfig(M=config.M, m=config.m, seed=derive_seed(seed, 99), scaling=config.scaling)
    pricer = method_c_pricer(gen_config)
    rng = generator(seed, 98)
    out = []
    for i, (strike, steps, s0, sigma0, r) in enumerate(contracts):
        q = OptionQuote(price=0.0, strike=strike, steps=int(steps), s0=s0, sigma0=sigma0, r=r, quote_id=f"q{i}")
        p = pricer(q, theta.with_(lam=lam_true, r=r), i) + noise_sd * rng.standard_normal()
        out.append(OptionQuote(price=float(p), strike=strike, steps=int(steps), s0=s0, sigma0=sigma0,
                               r=r, quote_id=q.quote_id))
    return out
