import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from latent_sv.model import (
    DegenerateDensityError,
    InvalidParameterError,
    MarketState,
    OptionContract,
    SVParams,
    euler_transition,
    exact_transition,
    log_return_density,
    payoff,
    simulate_paths,
    stationary_initial,
    step_euler,
    step_exact,
)

EXP1 = SVParams(rho=-0.055, alpha=3.30, beta=math.log(0.55), gamma=0.50, lam=-0.10, r=0.055)

params_st = st.builds(
    SVParams,
    rho=st.floats(-0.99, 0.99),
    alpha=st.floats(0.01, 10.0),
    beta=st.floats(-3.0, 1.0),
    gamma=st.floats(0.01, 5.0),
    lam=st.floats(-1.0, 1.0),
    r=st.floats(0.0, 0.1),
)


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        SVParams(rho=1.5, alpha=1, beta=0, gamma=1)
    with pytest.raises(InvalidParameterError):
        SVParams(rho=0, alpha=0, beta=0, gamma=1)
    with pytest.raises(InvalidParameterError):
        SVParams(rho=0, alpha=1, beta=0, gamma=0)
    assert SVParams(rho=0, alpha=1, beta=0, gamma=0, allow_degenerate=True).vol_step_sd == 0.0


def test_beta_star_shift():
    p = SVParams(rho=0, alpha=1, beta=0, gamma=1, lam=1)
    assert p.beta_star == -1.0
    assert stationary_initial(p) == (-1.0, 0.5)


def test_stationary_law_direct():
    b = math.log(0.3)
    assert stationary_initial(SVParams(rho=0, alpha=2, beta=b, gamma=1)) == (b, 0.25)


def test_deterministic_exact_step():
    b = math.log(0.4)
    p = SVParams(rho=0, alpha=1, beta=b, gamma=0, r=0.05, allow_degenerate=True)
    out = step_exact(MarketState(100.0, b), p, 0.0, 0.0)
    assert out.y == pytest.approx(b, abs=1e-15)
    assert out.s == pytest.approx(100 * math.exp((0.05 - math.exp(2 * b) / 2) / 252), rel=1e-14)


def test_decay_factor_experiment1():
    assert EXP1.decay == pytest.approx(math.exp(-3.30 / 252), rel=1e-15)


def test_euler_drift_only_step():
    b = math.log(0.4)
    p = SVParams(rho=0, alpha=1, beta=b, gamma=0, r=0.05, allow_degenerate=True)
    s, y = step_euler(MarketState(50.0, b), p, 0.0, 0.0)
    assert s == pytest.approx(50 * (1 + 0.05 / 252), rel=1e-14)
    assert y == pytest.approx(b)


def test_price_step_uses_new_volatility():
    # with a huge vol-of-vol one step separates sigma_t from sigma_{t+1}
    p = SVParams(rho=0.0, alpha=1.0, beta=0.0, gamma=50.0, r=0.0)
    s1, y1 = exact_transition(10.0, 0.0, 1.0, 1.0, p)
    sig_new = math.exp(y1)
    expect = 10.0 * math.exp(-0.5 * sig_new ** 2 / 252 + sig_new * math.sqrt(1 / 252))
    assert s1 == pytest.approx(expect, rel=1e-12)
    sig_old = 1.0
    assert abs(s1 - 10.0 * math.exp(-0.5 / 252 + sig_old * math.sqrt(1 / 252))) > 1e-3


def test_conditional_mean_of_log_vol():
    rng = np.random.default_rng(1)
    y0 = -0.3
    z2 = rng.standard_normal(10 ** 6)
    _, y1 = exact_transition(np.full(z2.size, 20.0), y0, np.zeros_like(z2), z2, EXP1)
    expect = EXP1.beta_star + EXP1.decay * (y0 - EXP1.beta_star)
    se = y1.std() / math.sqrt(y1.size)
    assert abs(y1.mean() - expect) < 4 * se


def test_stationary_histogram_matches_law():
    p = SVParams(rho=0, alpha=20.0, beta=-1.0, gamma=1.0)
    rng = np.random.default_rng(2)
    n = 100_000
    y = np.empty(n)
    y_t = p.beta_star
    z = rng.standard_normal(n)
    for t in range(n):
        y_t = p.beta_star + p.decay * (y_t - p.beta_star) + p.vol_step_sd * z[t]
        y[t] = y_t
    mean, var = stationary_initial(p)
    # thin to roughly independent draws before the KS test
    lag = int(5 / (p.alpha * p.delta))
    thin = y[::lag]
    assert stats.kstest(thin, "norm", args=(mean, math.sqrt(var))).pvalue > 0.05


def test_log_vol_autocorrelation():
    p = SVParams(rho=0, alpha=50.0, beta=-1.0, gamma=1.0)
    rng = np.random.default_rng(3)
    n = 200_000
    z = rng.standard_normal(n)
    y = np.empty(n)
    y_t = p.beta_star
    for t in range(n):
        y_t = p.beta_star + p.decay * (y_t - p.beta_star) + p.vol_step_sd * z[t]
        y[t] = y_t
    for k in (1, 5, 20):
        c = np.corrcoef(y[:-k], y[k:])[0, 1]
        assert c == pytest.approx(math.exp(-p.alpha * p.delta * k), abs=0.02)


def test_density_forms_coincide_at_rho_zero():
    p = SVParams(rho=0.0, alpha=1, beta=-1, gamma=1, r=0.03)
    r_obs = np.linspace(-0.05, 0.05, 7)
    a = log_return_density(r_obs, -1.2, p)
    b = log_return_density(r_obs, -1.2, p, z2=0.7)
    np.testing.assert_allclose(a, b, rtol=1e-14)
    sig = math.exp(-1.2)
    np.testing.assert_allclose(a, stats.norm.pdf(r_obs, (0.03 - sig ** 2 / 2) / 252, sig / math.sqrt(252)), rtol=1e-12)


def test_density_at_mode():
    p = SVParams(rho=0.6, alpha=1, beta=-1, gamma=1, r=0.0)
    y, z2 = -0.5, 0.3
    sig = math.exp(y)
    mean = -0.5 * sig ** 2 / 252 + sig * math.sqrt(1 / 252) * 0.6 * z2
    d = log_return_density(mean, y, p, z2=z2)
    assert d == pytest.approx(1 / math.sqrt(2 * math.pi * sig ** 2 / 252 * (1 - 0.36)), rel=1e-12)


@pytest.mark.parametrize("z2", [None, 1.3])
def test_density_integrates_to_one(z2):
    p = SVParams(rho=-0.4, alpha=1, beta=-1, gamma=1, r=0.02)
    val, _ = integrate.quad(lambda x: log_return_density(x, -1.0, p, z2=z2), -1, 1, epsabs=1e-12, limit=200)
    assert abs(val - 1) < 1e-8


def test_degenerate_density():
    p = SVParams(rho=1.0, alpha=1, beta=-1, gamma=1)
    with pytest.raises(DegenerateDensityError):
        log_return_density(0.0, -1.0, p, z2=0.0)


def test_payoff_examples():
    c = OptionContract(strike=23, steps=10, s0=20)
    assert payoff(20, c) == 3
    assert payoff(23, c) == 0
    assert payoff(30, c) == 0
    call = OptionContract(strike=23, steps=10, s0=20, kind="call")
    assert payoff(30, call) == 7


@given(st.floats(0, 200), st.floats(0, 200))
def test_put_payoff_lipschitz_and_monotone(a, b):
    c = OptionContract(strike=100, steps=1, s0=100)
    assert abs(payoff(a, c) - payoff(b, c)) <= abs(a - b) + 1e-12
    lo, hi = min(a, b), max(a, b)
    assert payoff(lo, c) >= payoff(hi, c)


def test_contract_validation():
    with pytest.raises(InvalidParameterError):
        OptionContract(strike=0, steps=1, s0=1)
    with pytest.raises(InvalidParameterError):
        OptionContract(strike=1, steps=0, s0=1)
    with pytest.raises(InvalidParameterError):
        OptionContract(strike=1, steps=1, s0=1, sigma0=-1)


def test_forced_zero_innovations_path():
    b = math.log(0.2)
    p = SVParams(rho=0, alpha=1, beta=b, gamma=0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=10, steps=5, s0=10, sigma0=0.2)
    z = np.zeros((1, 5))
    panel = simulate_paths(p, c, 1, innovations=(z, z))
    growth = math.exp((0.05 - 0.02) / 252)
    np.testing.assert_allclose(panel.s[0], 10 * growth ** np.arange(6), rtol=1e-13)


def _crash_innovations(n_paths, steps, crash_at):
    z1 = np.zeros((n_paths, steps))
    z1[0, crash_at] = -10.0  # sigma 2: 1 + r D - 2 sqrt(D) 10 < 0
    return z1, np.zeros((n_paths, steps))


def test_euler_nonpositive_price_is_absorbed():
    p = SVParams(rho=0, alpha=1, beta=math.log(2.0), gamma=0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=10, steps=5, s0=10, sigma0=2.0)
    panel = simulate_paths(p, c, 2, scheme="euler", innovations=_crash_innovations(2, 5, 1))
    assert panel.s[0, 1] > 0 and np.all(panel.s[0, 2:] == 0.0)
    assert panel.absorbed.tolist() == [True, False] and panel.n_absorbed == 1
    assert panel.valid.all() and panel.n_rejected == 0


def test_euler_nonpositive_price_can_be_rejected():
    p = SVParams(rho=0, alpha=1, beta=math.log(2.0), gamma=0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=10, steps=5, s0=10, sigma0=2.0)
    panel = simulate_paths(p, c, 2, scheme="euler", innovations=_crash_innovations(2, 5, 1), nonpositive="reject")
    assert panel.s[0, 2] < 0
    assert panel.valid.tolist() == [False, True] and panel.n_rejected == 1 and panel.n_absorbed == 0
    with pytest.raises(ValueError):
        simulate_paths(p, c, 2, nonpositive="clamp")


def test_same_seed_same_panel():
    c = OptionContract(strike=23, steps=10, s0=20, sigma0=0.5)
    a = simulate_paths(EXP1, c, 300, seed=5)
    b = simulate_paths(EXP1, c, 300, seed=5)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.y, b.y)
    d = simulate_paths(EXP1, c, 300, seed=6)
    assert not np.array_equal(a.s, d.s)


def test_unknown_scheme():
    c = OptionContract(strike=23, steps=10, s0=20, sigma0=0.5)
    with pytest.raises(ValueError):
        simulate_paths(EXP1, c, 2, scheme="milstein")


def test_terminal_mean_is_forward():
    c = OptionContract(strike=23, steps=10, s0=20, sigma0=0.5)
    panel = simulate_paths(EXP1, c, 100_000, seed=11)
    st_ = panel.s[:, -1]
    fwd = 20 * math.exp(EXP1.r * 10 / 252)
    assert abs(st_.mean() - fwd) < 4 * st_.std() / math.sqrt(st_.size)


def test_one_step_martingale():
    rng = np.random.default_rng(4)
    n = 400_000
    s1, _ = exact_transition(np.full(n, 20.0), -0.6, rng.standard_normal(n), rng.standard_normal(n), EXP1)
    disc = math.exp(-EXP1.r / 252) * s1
    assert abs(disc.mean() - 20.0) < 4 * disc.std() / math.sqrt(n)


def test_euler_converges_to_exact():
    p = SVParams(rho=-0.3, alpha=2.0, beta=-1.0, gamma=1.0, r=0.03)
    rng = np.random.default_rng(5)
    horizon = 0.25
    # one Brownian path per row, sampled at successively finer steps
    n_fine = 800
    dW1 = rng.standard_normal((500, n_fine)) * math.sqrt(horizon / n_fine)
    dW2 = rng.standard_normal((500, n_fine)) * math.sqrt(horizon / n_fine)
    errs = []
    for n in (100, 200, 400, 800):
        k = n_fine // n
        d = horizon / n
        q = p.with_(delta=d)
        z1 = dW1.reshape(500, n, k).sum(axis=2) / math.sqrt(d)
        z2 = dW2.reshape(500, n, k).sum(axis=2) / math.sqrt(d)
        se, ye = np.full(500, 10.0), np.full(500, -1.0)
        sx, yx = se.copy(), ye.copy()
        for t in range(n):
            se, ye = euler_transition(se, ye, z1[:, t], z2[:, t], q)
            sx, yx = exact_transition(sx, yx, z1[:, t], z2[:, t], q)
        errs.append(np.mean(np.abs(se - sx)))
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    # the per-step gap is the mean-zero sigma^2 D (Z^2 - 1) / 2 term, so the
    # accumulated pathwise gap is O(sqrt(D)): each halving divides it by ~1.41
    assert all(1.25 < r < 1.7 for r in ratios), (errs, ratios)


@given(params_st)
@settings(max_examples=50, deadline=None)
def test_params_invariants(p):
    assert 0 < p.decay < 1
    assert p.vol_step_sd > 0
    assert math.isfinite(p.beta_star)
    mean, var = stationary_initial(p)
    assert var == pytest.approx(p.gamma ** 2 / (2 * p.alpha))


@given(params_st, st.floats(-3, 1), st.floats(-4, 4), st.floats(-4, 4))
@settings(max_examples=100, deadline=None)
def test_exact_step_keeps_price_positive(p, y, z1, z2):
    s1, y1 = exact_transition(20.0, y, z1, z2, p)
    assert s1 > 0 and math.isfinite(y1)
