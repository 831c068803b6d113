"""Log-normal stochastic volatility model under the risk-neutral measure.

Price and log-volatility follow

    S_{t+1} = S_t exp((r - s^2/2) D + s sqrt(D) (sqrt(1-rho^2) Z1 + rho Z2)),  s = exp(Y_{t+1})
    Y_{t+1} = b* + exp(-a D) (Y_t - b*) + g sqrt((1 - exp(-2 a D)) / (2 a)) Z2

with b* = beta - lambda * gamma / alpha.  The volatility draw always comes
first and the price step uses the *new* volatility, in both schemes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np

from latent_sv.rng import block_generators

TRADING_DAY = 1.0 / 252.0
PATH_BLOCK = 1024

Scheme = Literal["exact", "euler"]


class InvalidParameterError(ValueError):
    pass


class DegenerateDensityError(ValueError):
    pass


@dataclass(frozen=True)
class SVParams:
    rho: float
    alpha: float
    beta: float
    gamma: float
    lam: float = 0.0
    r: float = 0.0
    delta: float = TRADING_DAY
    # gamma == 0 is only meaningful for degenerate (constant-vol) test cases
    allow_degenerate: bool = False

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidParameterError(f"rho={self.rho} outside [-1, 1]")
        if not self.alpha > 0:
            raise InvalidParameterError(f"alpha={self.alpha} must be > 0")
        if self.gamma < 0 or (self.gamma == 0 and not self.allow_degenerate):
            raise InvalidParameterError(f"gamma={self.gamma} must be > 0")
        if not self.delta > 0:
            raise InvalidParameterError(f"delta={self.delta} must be > 0")
        if not np.isfinite(self.beta_star):
            raise InvalidParameterError("beta_star is not finite")

    @property
    def beta_star(self) -> float:
        return self.beta - self.lam * self.gamma / self.alpha

    @property
    def decay(self) -> float:
        """AR(1) coefficient exp(-alpha * delta) of the log-volatility."""
        return float(np.exp(-self.alpha * self.delta))

    @property
    def vol_step_sd(self) -> float:
        return float(self.gamma * np.sqrt(-np.expm1(-2.0 * self.alpha * self.delta) / (2.0 * self.alpha)))

    def with_(self, **changes) -> "SVParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "rho": self.rho, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "lam": self.lam, "r": self.r, "delta": self.delta,
        }


@dataclass(frozen=True)
class MarketState:
    s: float
    y: float

    def __post_init__(self):
        if not self.s > 0:
            raise InvalidParameterError(f"share price must be positive, got {self.s}")

    @property
    def sigma(self) -> float:
        return float(np.exp(self.y))


@dataclass(frozen=True)
class OptionContract:
    strike: float
    steps: int
    s0: float
    sigma0: Optional[float] = None
    kind: Literal["put", "call"] = "put"

    def __post_init__(self):
        if not self.strike > 0:
            raise InvalidParameterError("strike must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParameterError("steps must be a positive integer")
        if not self.s0 > 0:
            raise InvalidParameterError("s0 must be > 0")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise InvalidParameterError("sigma0 must be > 0 when given")
        if self.kind not in ("put", "call"):
            raise InvalidParameterError(f"unknown payoff kind {self.kind!r}")

    def payoff(self, s):
        return payoff(s, self)


def payoff(s, contract: OptionContract):
    """Exercise value.  Calls are supported but only puts are exercised by the experiments."""
    s = np.asarray(s, dtype=float)
    if contract.kind == "put":
        out = np.maximum(contract.strike - s, 0.0)
    else:
        out = np.maximum(s - contract.strike, 0.0)
    return out if out.ndim else float(out)


def _shock(params: SVParams, z1, z2):
    return np.sqrt(1.0 - params.rho ** 2) * z1 + params.rho * z2


def exact_transition(s, y, z1, z2, params: SVParams):
    """Vectorised exact step; returns (s_next, y_next)."""
    y_next = params.beta_star + params.decay * (y - params.beta_star) + params.vol_step_sd * z2
    sig = np.exp(y_next)
    dt = params.delta
    s_next = s * np.exp((params.r - 0.5 * sig ** 2) * dt + sig * np.sqrt(dt) * _shock(params, z1, z2))
    return s_next, y_next


def euler_transition(s, y, z1, z2, params: SVParams):
    """Vectorised first-order Euler-Maruyama step; s_next may be <= 0."""
    dt = params.delta
    y_next = y + params.alpha * (params.beta_star - y) * dt + params.gamma * np.sqrt(dt) * z2
    sig = np.exp(y_next)
    s_next = s + params.r * s * dt + sig * s * np.sqrt(dt) * _shock(params, z1, z2)
    return s_next, y_next


def step_exact(state: MarketState, params: SVParams, z1: float, z2: float) -> MarketState:
    s, y = exact_transition(state.s, state.y, z1, z2, params)
    if not (np.isfinite(s) and np.isfinite(y) and s > 0):
        raise InvalidParameterError(f"non-finite exact step from {state} with z=({z1}, {z2})")
    return MarketState(float(s), float(y))


def step_euler(state: MarketState, params: SVParams, z1: float, z2: float) -> tuple[float, float]:
    """Euler step on scalars.

    Returns a bare ``(s, y)`` pair rather than a MarketState because the new
    price may be non-positive; the caller decides whether to discard the path.
    """
    s, y = euler_transition(state.s, state.y, z1, z2, params)
    if not (np.isfinite(s) and np.isfinite(y)):
        raise InvalidParameterError(f"non-finite Euler step from {state}")
    return float(s), float(y)


def stationary_initial(params: SVParams) -> tuple[float, float]:
    """Mean and variance of the stationary law of Y."""
    return params.beta_star, params.gamma ** 2 / (2.0 * params.alpha)


def log_return_density(r_obs, y, params: SVParams, z2=None, log: bool = False):
    """Density of a log-return given the new log-volatility.

    With ``z2`` the density is conditional on the volatility innovation as
    well (exact when rho != 0); without it the marginal form is used.
    """
    r_obs = np.asarray(r_obs, dtype=float)
    y = np.asarray(y, dtype=float)
    sig = np.exp(y)
    dt = params.delta
    mean = (params.r - 0.5 * sig ** 2) * dt
    if z2 is None:
        var = sig ** 2 * dt
    else:
        mean = mean + sig * np.sqrt(dt) * params.rho * np.asarray(z2, dtype=float)
        var = sig ** 2 * dt * (1.0 - params.rho ** 2)
    if np.any(var <= 0):
        raise DegenerateDensityError("log-return density has zero variance")
    logpdf = -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (r_obs - mean) ** 2 / var
    out = logpdf if log else np.exp(logpdf)
    return out if np.ndim(out) else float(out)


@dataclass
class PathPanel:
    """Simulated trajectories, one row per path, ``steps + 1`` columns."""

    s: np.ndarray
    y: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    scheme: str
    seed: Optional[int]
    valid: np.ndarray  # False where a path is excluded (non-finite, or non-positive under "reject")
    absorbed: Optional[np.ndarray] = None  # True where an Euler price hit zero and stayed there

    def __post_init__(self):
        if self.absorbed is None:
            self.absorbed = np.zeros(self.s.shape[0], dtype=bool)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.y)

    @property
    def log_returns(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diff(np.log(self.s), axis=1)

    @property
    def n_rejected(self) -> int:
        return int((~self.valid).sum())

    @property
    def n_absorbed(self) -> int:
        return int(self.absorbed.sum())


def initial_log_vol(params: SVParams, contract: OptionContract, n: int, rng: np.random.Generator) -> np.ndarray:
    if contract.sigma0 is not None:
        return np.full(n, np.log(contract.sigma0))
    mean, var = stationary_initial(params)
    return mean + np.sqrt(var) * rng.standard_normal(n)


def simulate_paths(
    params: SVParams,
    contract: OptionContract,
    n_paths: int,
    scheme: Scheme = "exact",
    seed: Optional[int] = 0,
    innovations: Optional[tuple[np.ndarray, np.ndarray]] = None,
    nonpositive: str = "absorb",
) -> PathPanel:
    """Simulate ``n_paths`` independent (S, Y) trajectories.

    Paths are generated in fixed-size blocks, each from its own spawned
    stream, so a path's draws depend only on the seed and its block index.
    ``innovations`` (z1, z2 arrays of shape (n_paths, steps)) bypasses the RNG.

    An Euler step can take the price to zero or below.  With
    ``nonpositive="absorb"`` the share is then worthless and stays at 0;
    with ``"reject"`` the path is kept as simulated and flagged invalid, so
    pricing drops it.  Dropping such paths removes exactly the ones where a
    put pays almost the full strike, which biases prices down noticeably
    when volatility of volatility is large.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if scheme not in ("exact", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if nonpositive not in ("absorb", "reject"):
        raise ValueError(f"unknown nonpositive policy {nonpositive!r}")
    absorb = nonpositive == "absorb"
    T = contract.steps
    transition = exact_transition if scheme == "exact" else euler_transition

    y0 = np.empty(n_paths)
    if innovations is None:
        z1 = np.empty((n_paths, T))
        z2 = np.empty((n_paths, T))
        for sl, rng in block_generators(seed, n_paths, PATH_BLOCK):
            n = sl.stop - sl.start
            y0[sl] = initial_log_vol(params, contract, n, rng)
            z1[sl] = rng.standard_normal((n, T))
            z2[sl] = rng.standard_normal((n, T))
    else:
        z1, z2 = (np.asarray(a, dtype=float) for a in innovations)
        if z1.shape != (n_paths, T) or z2.shape != (n_paths, T):
            raise ValueError("innovations must have shape (n_paths, steps)")
        if contract.sigma0 is None:
            raise ValueError("forced innovations require sigma0")
        y0[:] = np.log(contract.sigma0)

    s = np.empty((n_paths, T + 1))
    y = np.empty((n_paths, T + 1))
    s[:, 0] = contract.s0
    y[:, 0] = y0
    with np.errstate(invalid="ignore"):
        for t in range(T):
            s[:, t + 1], y[:, t + 1] = transition(s[:, t], y[:, t], z1[:, t], z2[:, t], params)
            if absorb:
                s[:, t + 1] = np.where(s[:, t + 1] > 0, s[:, t + 1], 0.0)
    finite = np.all(np.isfinite(s), axis=1)
    absorbed = np.any(s <= 0, axis=1) & finite if absorb else None
    valid = finite if absorb else finite & np.all(s > 0, axis=1)
    return PathPanel(s=s, y=y, z1=z1, z2=z2, scheme=scheme, seed=seed, valid=valid, absorbed=absorbed)
