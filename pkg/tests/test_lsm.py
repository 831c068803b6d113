import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latent_sv.experiments import builtin_spec
from latent_sv.lsm import (
    AugmentedPanel,
    BasisMismatchError,
    DegenerateRegressionError,
    ExerciseRule,
    attach_features,
    basis_terms,
    build_design_row,
    design_matrix,
    fit_cross_section,
    laguerre,
    lsm_price,
    realized_volatility,
    revalue_with_rule,
    simulate_augmented_paths,
)
from latent_sv.model import OptionContract, SVParams, simulate_paths

SPEC3 = builtin_spec(3)
P3, C3 = SPEC3.params, SPEC3.contract


def test_laguerre_values():
    assert laguerre(0, 0.0) == 1.0 and laguerre(1, 0.0) == 1.0
    assert laguerre(1, 1.0) == 0.0
    assert laguerre(0, 2.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    with pytest.raises(ValueError):
        laguerre(2, 0.0)


def test_design_row_at_origin_is_all_ones():
    row = build_design_row(0.0, (0.0, 0.0))
    assert row.shape == (13,)
    assert np.all(row == 1.0)


def test_zeta_one_zeroes_l1_zeta_terms():
    row = build_design_row(0.7, (0.3, 1.0))
    terms = basis_terms(3)
    for name, v in zip(terms, row):
        if "L1(v)" in name:
            assert v == 0.0
        else:
            assert v != 0.0


def test_basis_lengths():
    assert len(basis_terms(3)) == 13
    assert len(basis_terms(2)) == 9
    assert design_matrix(np.zeros((4, 2))).shape == (4, 9)
    with pytest.raises(ValueError):
        basis_terms(4)


def test_fit_exact_linear_targets():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 6))
    beta = rng.normal(size=6)
    y = X @ beta
    coef = fit_cross_section(X, y)
    assert np.linalg.norm(X @ coef - y) <= 1e-10 * np.linalg.norm(y)


def test_fit_duplicate_column_same_fit():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 4))
    y = rng.normal(size=100)
    base = X @ fit_cross_section(X, y)
    Xd = np.column_stack([X, X[:, 2]])
    coef = fit_cross_section(Xd, y)
    assert np.allclose(Xd @ coef, base, atol=1e-10)
    assert np.count_nonzero(coef) == 4


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(500, 7))
    y = rng.normal(size=500)
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(fit_cross_section(X, y), oracle, rtol=1e-8, atol=0)


def test_fit_needs_two_rows():
    with pytest.raises(DegenerateRegressionError):
        fit_cross_section(np.ones((1, 3)), np.ones(1))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (30, 3), elements=st.floats(-10, 10)), arrays(float, 30, elements=st.floats(-10, 10)))
def test_fit_residual_orthogonal(X, y):
    coef = fit_cross_section(X, y)
    resid = y - X @ coef
    scale = max(1.0, np.abs(X).max() * np.abs(y).max() * 30)
    assert np.all(np.abs(X.T @ resid) <= 1e-7 * scale)


def test_realized_volatility_examples():
    assert realized_volatility([0.03] * 7) == pytest.approx(0.0009, abs=1e-18)
    assert realized_volatility([0.1, -0.1]) == pytest.approx(0.01, abs=1e-17)
    with pytest.raises(ValueError):
        realized_volatility([])
    v = 0.0004
    r = np.random.default_rng(0).normal(0, math.sqrt(v), 100000)
    assert abs(realized_volatility(r) - v) < 4 * v * math.sqrt(2 / r.size)


@pytest.fixture(scope="module")
def paths3():
    return simulate_paths(P3, C3, 2000, seed=5)


def test_method_features(paths3):
    d = attach_features(paths3, "D", P3, C3)
    assert np.array_equal(d.features[:, :, 0], np.exp(paths3.y))
    b = attach_features(paths3, "B", P3, C3)
    lr = paths3.log_returns
    for t in (1, 5, C3.steps):
        assert np.allclose(b.features[:, t, 0], [realized_volatility(row[:t]) for row in lr])
    a = attach_features(paths3, "A", P3, C3)
    assert np.all(a.features[:, 0, :] == C3.s0)
    assert np.array_equal(a.features[:, 3, 0], paths3.s[:, 2])
    assert np.array_equal(a.features[:, 3, 1], paths3.s[:, 1])
    with pytest.raises(ValueError):
        attach_features(paths3, "E", P3, C3)


def test_method_c_starts_at_point_mass():
    c = simulate_augmented_paths(P3, C3, "C", M=64, m_particles=50, seed=1)
    assert C3.sigma0 is not None
    assert np.all(c.features[:, 0, 0] == math.log(C3.sigma0))
    assert np.all(c.features[:, 0, 1] == 0.0)
    assert np.all(c.features[:, 1:, 1] > 0.0)


def test_method_c_filter_does_not_see_latent_volatility():
    # same prices, different latent paths: identical features
    paths = simulate_paths(P3, C3, 16, seed=3)
    a = attach_features(paths, "C", P3, C3, m_particles=64, seed=2)
    shuffled = type(paths)(**{**paths.__dict__, "y": paths.y[::-1].copy()})
    b = attach_features(shuffled, "C", P3, C3, m_particles=64, seed=2)
    assert np.array_equal(a.features, b.features)


def test_rule_round_trip_and_replay(tmp_path, paths3):
    panel = attach_features(paths3, "D", P3, C3)
    est, rule = lsm_price(panel, C3, P3)
    again = ExerciseRule.load(rule.save(tmp_path / "rule.json"))
    assert again == rule
    replay = revalue_with_rule(again, panel, C3, P3)
    assert replay.price == est.price
    assert replay.std_error == est.std_error


def test_rule_mismatch_errors(paths3):
    panel_d = attach_features(paths3, "D", P3, C3)
    panel_a = attach_features(paths3, "A", P3, C3)
    _, rule = lsm_price(panel_d, C3, P3)
    with pytest.raises(BasisMismatchError):
        revalue_with_rule(rule, panel_a, C3, P3)
    with pytest.raises(BasisMismatchError):
        ExerciseRule(method="D", basis=basis_terms(2), scaling="none", s_scale=1.0,
                     feature_scales=[[1.0]], coefficients=[[0.0] * 13])
    with pytest.raises(ValueError):
        ExerciseRule.from_json(rule.to_json().replace('"version": 2', '"version": 99'))


def test_zero_vol_deep_itm_exercises_now():
    p = SVParams(rho=0.0, alpha=1.0, beta=math.log(1e-6), gamma=0.0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=100.0, steps=20, s0=80.0, sigma0=1e-6)
    panel = simulate_augmented_paths(p, c, "D", M=200, seed=0)
    est, _ = lsm_price(panel, c, p)
    assert est.price == 20.0


def test_zero_vol_otm_is_worthless():
    p = SVParams(rho=0.0, alpha=1.0, beta=math.log(1e-6), gamma=0.0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=100.0, steps=20, s0=120.0, sigma0=1e-6)
    est, _ = lsm_price(simulate_augmented_paths(p, c, "D", M=50, seed=0), c, p)
    assert est.price == 0.0


def _price(method, strike=None, s0=None, M=4000, seed=7, itm_only=False):
    c = OptionContract(strike=strike or C3.strike, steps=C3.steps, s0=s0 or C3.s0, sigma0=C3.sigma0)
    panel = simulate_augmented_paths(P3, c, method, M=M, seed=seed)
    return lsm_price(panel, c, P3, itm_only=itm_only)[0], c


def test_price_at_least_intrinsic_and_monotone():
    prices = []
    for k in (14.0, 16.0, 18.0):
        est, c = _price("D", strike=k)
        assert est.price >= c.payoff(c.s0) - 3 * est.std_error
        prices.append(est)
    for lo, hi in zip(prices, prices[1:]):
        assert hi.price >= lo.price - 3 * math.hypot(lo.std_error, hi.std_error)
    by_s = [_price("D", s0=s)[0] for s in (13.0, 15.0, 17.0)]
    for lo, hi in zip(by_s, by_s[1:]):
        assert hi.price <= lo.price + 3 * math.hypot(lo.std_error, hi.std_error)


def test_itm_only_regression_agrees():
    a, _ = _price("D", M=8000)
    b, _ = _price("D", M=8000, itm_only=True)
    assert abs(a.price - b.price) <= 3 * math.hypot(a.std_error, b.std_error)


def test_revaluation_not_above_in_sample():
    est, rule = lsm_price(simulate_augmented_paths(P3, C3, "B", M=4000, seed=1), C3, P3)
    fresh = revalue_with_rule(rule, simulate_augmented_paths(P3, C3, "B", M=4000, seed=2), C3, P3)
    assert fresh.price <= est.price + 3 * math.hypot(est.std_error, fresh.std_error)


def test_price_is_deterministic():
    a, _ = _price("A", M=1000)
    b, _ = _price("A", M=1000)
    assert a.price == b.price


def test_no_regression_when_nothing_in_the_money():
    c = OptionContract(strike=1.0, steps=5, s0=100.0, sigma0=0.3)
    panel = simulate_augmented_paths(P3, c, "D", M=100, seed=0)
    est, rule = lsm_price(panel, c, P3, itm_only=True)
    assert est.price == 0.0
    assert all(x is None for x in rule.coefficients)


def test_panel_shapes():
    panel = AugmentedPanel("D", np.ones((3, 5)), np.ones((3, 5, 1)), seed=0)
    assert panel.n_paths == 3 and panel.steps == 4
    assert panel.regressors(2).shape == (3, 2)


def test_absorbed_paths_are_exercised_at_absorption():
    p = SVParams(rho=0, alpha=1, beta=math.log(2.0), gamma=0, r=0.05, allow_degenerate=True)
    c = OptionContract(strike=10, steps=4, s0=10, sigma0=2.0)
    z1 = np.random.default_rng(3).normal(0.0, 0.3, (60, 4))
    z1[:10, 1] = -10.0  # ten paths hit zero at t = 2
    paths = simulate_paths(p, c, 60, scheme="euler", innovations=(z1, np.zeros((60, 4))))
    assert paths.n_absorbed == 10
    for method in "ABCD":
        panel = attach_features(paths, method, p, c, m_particles=8, seed=0)
        assert np.all(np.isfinite(panel.features)) and panel.n_paths == 60
        est, rule = lsm_price(panel, c, p)
        # replay the frozen rule on the absorbed paths only: each is worth K two steps out
        crashed = AugmentedPanel(method, panel.s[:10], panel.features[:10], seed=None)
        got = revalue_with_rule(rule, crashed, c, p)
        assert got.price == pytest.approx(10.0 * math.exp(-2 * p.r * p.delta), rel=1e-12)
    rejected = simulate_paths(p, c, 60, scheme="euler", innovations=(z1, np.zeros((60, 4))), nonpositive="reject")
    assert attach_features(rejected, "D", p, c).n_paths == 50


def test_method_c_location_enters_on_the_volatility_scale():
    mu, zeta = np.array([[-1.0, 0.2], [0.5, 0.0]]).T
    feats = np.stack([mu, zeta], axis=1)[:, None, :]
    panel = AugmentedPanel("C", np.array([[10.0], [11.0]]), feats, seed=None)
    np.testing.assert_allclose(panel.inputs(0), np.column_stack([np.exp(mu + zeta ** 2 / 2), zeta]), rtol=1e-15)
    np.testing.assert_array_equal(panel.regressors(0)[:, 0], [10.0, 11.0])
    d = AugmentedPanel("D", np.array([[10.0], [11.0]]), np.array([[[0.3]], [[0.4]]]), seed=None)
    np.testing.assert_array_equal(d.inputs(0), [[0.3], [0.4]])
