"""Least-squares Monte Carlo with volatility-aware regressors.

Four ways of describing volatility to the regression:

* ``A``: two lagged share prices
* ``B``: realized volatility (running mean of squared log-returns)
* ``C``: mean and standard deviation of the particle filter's cloud, the
  filter having seen only the simulated path's own returns; the mean enters
  the basis as exp(mu + zeta^2 / 2), on the same scale as ``D``
* ``D``: the true (simulated) volatility

Every method regresses on Laguerre functions of the share price and its
volatility features, plus cross terms.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import scipy.linalg

from latent_sv.filter import DEFAULT_PARTICLES_PRICING, run_filter_batch
from latent_sv.model import OptionContract, PathPanel, SVParams, payoff, simulate_paths, stationary_initial
from latent_sv.rng import block_generators

Method = Literal["A", "B", "C", "D"]
Scaling = Literal["standardize", "none"]

METHODS = ("A", "B", "C", "D")
FEATURE_NAMES = {
    "A": ("s", "s_lag1", "s_lag2"),
    "B": ("s", "rv"),
    "C": ("s", "mu", "zeta"),
    "D": ("s", "sigma"),
}
DEFAULT_PATHS = 15_000
FILTER_BLOCK = 512
RULE_VERSION = 2  # 2: Method C location enters on the volatility scale


class DegenerateRegressionError(RuntimeError):
    pass


class BasisMismatchError(ValueError):
    pass


def laguerre(n: int, x):
    """Laguerre functions exp(-x/2) L_n(x) for n = 0, 1."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        out = np.exp(-0.5 * x)
    elif n == 1:
        out = np.exp(-0.5 * x) * (1.0 - x)
    else:
        raise ValueError(f"unsupported Laguerre order {n}")
    return out if out.ndim else float(out)


def basis_terms(n_vars: int) -> list[str]:
    """Column labels, in design-matrix order, for 2 or 3 variables.

    Three variables (x, u, v) give the 12-term set
    L0x L1x L0u L1u L0v L1v, L0x*L0u L0x*L0v L1x*L1u L1x*L1v L0u*L0v L1u*L1v.
    Two variables (x, u) give L0x L1x L0u L1u and all four products
    L0x*L0u L0x*L1u L1x*L0u L1x*L1u.
    """
    if n_vars == 3:
        return ["1", "L0(x)", "L1(x)", "L0(u)", "L1(u)", "L0(v)", "L1(v)",
                "L0(x)L0(u)", "L0(x)L0(v)", "L1(x)L1(u)", "L1(x)L1(v)", "L0(u)L0(v)", "L1(u)L1(v)"]
    if n_vars == 2:
        return ["1", "L0(x)", "L1(x)", "L0(u)", "L1(u)",
                "L0(x)L0(u)", "L0(x)L1(u)", "L1(x)L0(u)", "L1(x)L1(u)"]
    raise ValueError("basis is defined for 2 or 3 variables")


def design_matrix(x: np.ndarray) -> np.ndarray:
    """Rows of regressors for features ``x`` of shape (n, 2) or (n, 3)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, k = x.shape
    l0 = np.exp(-0.5 * x)
    l1 = l0 * (1.0 - x)
    one = np.ones(n)
    if k == 3:
        cols = [one, l0[:, 0], l1[:, 0], l0[:, 1], l1[:, 1], l0[:, 2], l1[:, 2],
                l0[:, 0] * l0[:, 1], l0[:, 0] * l0[:, 2], l1[:, 0] * l1[:, 1],
                l1[:, 0] * l1[:, 2], l0[:, 1] * l0[:, 2], l1[:, 1] * l1[:, 2]]
    elif k == 2:
        cols = [one, l0[:, 0], l1[:, 0], l0[:, 1], l1[:, 1],
                l0[:, 0] * l0[:, 1], l0[:, 0] * l1[:, 1], l1[:, 0] * l0[:, 1], l1[:, 0] * l1[:, 1]]
    else:
        raise ValueError("basis is defined for 2 or 3 variables")
    return np.column_stack(cols)


def build_design_row(s: float, q) -> np.ndarray:
    """Method C regressors for one (share price, summary vector) pair."""
    mu, zeta = (q.mu, q.zeta) if hasattr(q, "mu") else q
    return design_matrix(np.array([[s, mu, zeta]]))[0]


def fit_cross_section(rows: np.ndarray, targets: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Least squares through a column-pivoted QR.

    Columns are scaled to unit norm first, so a tiny but independent column
    is kept; columns found dependent at ``rtol`` get coefficient zero.
    """
    X = np.asarray(rows, dtype=float)
    y = np.asarray(targets, dtype=float)
    n, p = X.shape
    if n < 2:
        raise DegenerateRegressionError("need at least 2 rows to regress")
    norms = np.linalg.norm(X, axis=0)
    live = norms > 0
    coef = np.zeros(p)
    if not live.any():
        return coef
    Xs = X[:, live] / norms[live]
    Q, R, piv = scipy.linalg.qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0]))
    sol = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ y)
    scaled = np.zeros(Xs.shape[1])
    scaled[piv[:rank]] = sol
    coef[live] = scaled / norms[live]
    return coef


def realized_volatility(returns) -> float:
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise ValueError("realized volatility needs at least one return")
    return float(np.mean(r ** 2))


def running_realized_volatility(log_returns: np.ndarray) -> np.ndarray:
    """RV at every t for a (n, T) return panel; column 0 (no returns yet) is 0."""
    n, T = log_returns.shape
    out = np.zeros((n, T + 1))
    out[:, 1:] = np.cumsum(log_returns ** 2, axis=1) / np.arange(1, T + 1)
    return out


@dataclass
class AugmentedPanel:
    """Share prices plus per-time volatility features for one method."""

    method: str
    s: np.ndarray          # (M, T + 1)
    features: np.ndarray   # (M, T + 1, k) volatility features, share price excluded
    seed: Optional[int]
    n_rejected: int = 0

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def steps(self) -> int:
        return self.s.shape[1] - 1

    def inputs(self, t: int) -> np.ndarray:
        """Volatility inputs to the basis at time ``t``.

        Method C puts the filtered location on the volatility scale,
        exp(mu + zeta^2 / 2) (the filtered mean of sigma if log-volatility is
        normal), so it is regressed like Method D's sigma; zeta is kept.
        """
        f = self.features[:, t, :]
        if self.method == "C":
            return np.column_stack([np.exp(f[:, 0] + 0.5 * f[:, 1] ** 2), f[:, 1]])
        return f

    def regressors(self, t: int) -> np.ndarray:
        return np.column_stack([self.s[:, t], self.inputs(t)])


def _live_returns(s: np.ndarray) -> np.ndarray:
    """Log-returns with the steps into and after absorption at zero set to 0.

    An absorbed path is exercised at its absorption date, so features from
    then on never enter a decision; they only have to stay finite.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.diff(np.log(s), axis=1)
    return np.where(np.isfinite(r), r, 0.0)


def attach_features(
    paths: PathPanel,
    method: str,
    params: SVParams,
    contract: OptionContract,
    m_particles: int = DEFAULT_PARTICLES_PRICING,
    seed: Optional[int] = 0,
) -> AugmentedPanel:
    """Turn simulated (S, Y) paths into the regression panel for ``method``."""
    s = paths.s[paths.valid]
    n_rejected = paths.n_rejected
    M, T1 = s.shape
    if method == "A":
        lag1 = np.empty_like(s)
        lag2 = np.empty_like(s)
        lag1[:, 0] = contract.s0
        lag1[:, 1:] = s[:, :-1]
        lag2[:, :2] = contract.s0
        lag2[:, 2:] = s[:, :-2]
        feats = np.stack([lag1, lag2], axis=2)
    elif method == "B":
        feats = running_realized_volatility(_live_returns(s))[:, :, None]
    elif method == "D":
        feats = np.exp(paths.y[paths.valid])[:, :, None]
    elif method == "C":
        if m_particles < 2:
            raise ValueError("method C needs at least 2 particles")
        returns = _live_returns(s)
        mu = np.empty((M, T1))
        zeta = np.empty((M, T1))
        for sl, rng in block_generators(seed, M, FILTER_BLOCK, 7):
            n = sl.stop - sl.start
            if contract.sigma0 is not None:
                init = np.full((n, m_particles), np.log(contract.sigma0))
            else:
                mean, var = stationary_initial(params)
                init = mean + np.sqrt(var) * rng.standard_normal((n, m_particles))
            mu[sl], zeta[sl] = run_filter_batch(returns[sl], params, init, rng)
        feats = np.stack([mu, zeta], axis=2)
    else:
        raise ValueError(f"unknown method {method!r}")
    return AugmentedPanel(method=method, s=s, features=feats, seed=paths.seed, n_rejected=n_rejected)


def simulate_augmented_paths(
    params: SVParams,
    contract: OptionContract,
    method: str,
    M: int = DEFAULT_PATHS,
    m_particles: int = DEFAULT_PARTICLES_PRICING,
    scheme: str = "exact",
    seed: Optional[int] = 0,
) -> AugmentedPanel:
    """Simulate M paths and attach the method's features.

    The same seed yields the same share-price paths for every method.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    paths = simulate_paths(params, contract, M, scheme=scheme, seed=seed)
    return attach_features(paths, method, params, contract, m_particles, seed)


@dataclass
class PriceEstimate:
    price: float
    std_error: float
    n_paths: int
    method: str
    seed: Optional[int]
    runtime: float = 0.0
    n_rejected: int = 0


@dataclass
class ExerciseRule:
    """Frozen regression coefficients, one vector per decision time 1..T-1."""

    method: str
    basis: list
    scaling: str
    s_scale: float
    feature_scales: list      # per t, one scale per volatility feature
    coefficients: list        # per t, len(basis) floats, or None where no fit was made
    exercise_needs_payoff: bool = True
    version: int = RULE_VERSION

    def __post_init__(self):
        for c in self.coefficients:
            if c is not None and len(c) != len(self.basis):
                raise BasisMismatchError("coefficient count does not match the basis")

    def continuation(self, t: int, regressors: np.ndarray) -> np.ndarray:
        x = scale_regressors(regressors, self.s_scale, np.asarray(self.feature_scales[t]))
        return design_matrix(x) @ np.asarray(self.coefficients[t])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExerciseRule":
        d = json.loads(text)
        if d.get("version") != RULE_VERSION:
            raise ValueError(f"unsupported rule version {d.get('version')}")
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "ExerciseRule":
        return cls.from_json(Path(path).read_text())


def scale_regressors(regressors: np.ndarray, s_scale: float, feature_scales: np.ndarray) -> np.ndarray:
    x = np.array(regressors, dtype=float)
    x[:, 0] /= s_scale
    x[:, 1:] /= feature_scales
    return x


def _feature_scales(panel: AugmentedPanel, scaling: str, s0: float) -> tuple[float, list]:
    k = panel.features.shape[2]
    if scaling == "none":
        return 1.0, [[1.0] * k for _ in range(panel.steps + 1)]
    if scaling != "standardize":
        raise ValueError(f"unknown scaling {scaling!r}")
    scales = []
    for t in range(panel.steps + 1):
        a = np.mean(np.abs(panel.inputs(t)), axis=0)
        a = np.where(a > 0, a, 1.0)
        scales.append([float(v) for v in a])
    if panel.method == "A":
        # lagged prices share the price scale
        scales = [[float(s0)] * k for _ in range(panel.steps + 1)]
    return float(s0), scales


def _decide(g: np.ndarray, cont: np.ndarray, needs_payoff: bool) -> np.ndarray:
    ex = g >= cont
    if needs_payoff:
        ex &= g > 0
    return ex


def lsm_price(
    panel: AugmentedPanel,
    contract: OptionContract,
    params: SVParams,
    scaling: Scaling = "standardize",
    itm_only: bool = False,
) -> tuple[PriceEstimate, ExerciseRule]:
    """Backward induction with realized (not fitted) continuation values."""
    t0 = time.perf_counter()
    T = panel.steps
    M = panel.n_paths
    disc = np.exp(-params.r * params.delta)
    k = panel.features.shape[2] + 1
    basis = basis_terms(k)
    s_scale, fscales = _feature_scales(panel, scaling, contract.s0)
    coefs: list = [None] * (T + 1)

    values = payoff(panel.s[:, T], contract)
    for t in range(T - 1, 0, -1):
        target = disc * values
        g = payoff(panel.s[:, t], contract)
        x = scale_regressors(panel.regressors(t), s_scale, np.asarray(fscales[t]))
        X = design_matrix(x)
        dead = panel.s[:, t] <= 0  # absorbed: the put pays the full strike, exercise now
        rows = (g > 0 if itm_only else np.ones(M, dtype=bool)) & ~dead
        if rows.sum() < 2:
            values = np.where(dead, g, target)
            continue
        try:
            beta = fit_cross_section(X[rows], target[rows])
        except DegenerateRegressionError as exc:
            raise DegenerateRegressionError(f"t={t}: {exc}") from exc
        coefs[t] = [float(b) for b in beta]
        ex = (_decide(g, X @ beta, True) & rows) | dead
        values = np.where(ex, g, target)

    pv = disc * values
    hold = float(pv.mean())
    se = float(pv.std(ddof=1) / np.sqrt(M))
    g0 = float(payoff(contract.s0, contract))
    if g0 > 0 and g0 >= hold:
        price, se = g0, 0.0
    else:
        price = hold
    rule = ExerciseRule(method=panel.method, basis=basis, scaling=scaling, s_scale=s_scale,
                        feature_scales=fscales, coefficients=coefs)
    est = PriceEstimate(price=price, std_error=se, n_paths=M, method=panel.method, seed=panel.seed,
                        runtime=time.perf_counter() - t0, n_rejected=panel.n_rejected)
    return est, rule


def revalue_with_rule(
    rule: ExerciseRule,
    panel: AugmentedPanel,
    contract: OptionContract,
    params: SVParams,
) -> PriceEstimate:
    """Price ``panel`` with frozen exercise decisions; no refitting."""
    t0 = time.perf_counter()
    if rule.method != panel.method:
        raise BasisMismatchError(f"rule is for method {rule.method}, panel is {panel.method}")
    if len(rule.basis) != len(basis_terms(panel.features.shape[2] + 1)):
        raise BasisMismatchError("rule basis does not fit the panel's features")
    T = panel.steps
    if len(rule.coefficients) != T + 1:
        raise BasisMismatchError("rule and panel have different maturities")
    disc = np.exp(-params.r * params.delta)
    values = payoff(panel.s[:, T], contract)
    for t in range(T - 1, 0, -1):
        target = disc * values
        g = payoff(panel.s[:, t], contract)
        dead = panel.s[:, t] <= 0
        if rule.coefficients[t] is None:
            values = np.where(dead, g, target)
            continue
        ex = _decide(g, rule.continuation(t, panel.regressors(t)), rule.exercise_needs_payoff) | dead
        values = np.where(ex, g, target)
    pv = disc * values
    hold = float(pv.mean())
    se = float(pv.std(ddof=1) / np.sqrt(panel.n_paths))
    g0 = float(payoff(contract.s0, contract))
    if g0 > 0 and g0 >= hold:
        hold, se = g0, 0.0
    return PriceEstimate(price=hold, std_error=se, n_paths=panel.n_paths, method=panel.method,
                         seed=panel.seed, runtime=time.perf_counter() - t0, n_rejected=panel.n_rejected)
