import numpy as np
import pytest

from powerlag import (
    BiasReport,
    DataError,
    ExposurePanel,
    GroupMapping,
    LagEffect,
    ValidationData,
    bl_bias_approx,
    calib_bias_approx,
    compose_ce,
    lambda_linear,
    mb_bias,
    mc_attenuation,
    poly_bias_factor,
    theta_eq19,
    theta_eq20,
)
from powerlag.bias import eq19_report, eq20_report, fit_calibration

THETA = LagEffect.from_theta((0.001, 0.0024, 0.0006))


def test_lambda_examples():
    assert lambda_linear(1.0, 4.0, 1.0) == pytest.approx(0.8)
    assert lambda_linear(0.5, 4.0, 0.0) == pytest.approx(2.0)
    assert lambda_linear(0.88, 10.0, 1.0) == pytest.approx(8.8 / 8.744, rel=1e-12)
    assert lambda_linear(0.88, 10.0, 1.0) == pytest.approx(1.0064, abs=1e-4)


def test_lambda_scale_invariant():
    assert lambda_linear(0.7, 3.0, 2.0) == pytest.approx(lambda_linear(0.7, 30.0, 20.0), rel=1e-14)


def test_lag_bound_examples():
    assert theta_eq19(THETA, 0.919, 0.88, "plus", 0) == pytest.approx(1.298e-3, abs=5e-7)
    assert theta_eq19(THETA, 0.919, 0.88, "minus", 0) == pytest.approx(7.91e-4, abs=5e-7)
    for sign in ("plus", "minus"):
        assert theta_eq19(THETA, 1.0, 0.88, sign, 1) == pytest.approx(0.0024 / 0.88)


def test_lag_bound_sign_order():
    for l in range(3):
        assert theta_eq19(THETA, 0.6, 0.9, "plus", l) >= theta_eq19(THETA, 0.6, 0.9, "minus", l)


def test_lag_bound_errors():
    with pytest.raises(DataError):
        theta_eq19(THETA, 0.0, 1.0, "plus", 0)
    with pytest.raises(DataError):
        theta_eq19(THETA, 0.5, 1.0, "both", 0)
    with pytest.raises(DataError):
        theta_eq19(THETA, 0.5, 1.0, "plus", 3)


def test_cumulative_bound_examples():
    assert theta_eq20(0.004, 0.919, 0.88) == pytest.approx(4.177e-3, abs=5e-7)
    assert theta_eq20(0.004, 0.919, 0.88) / 0.004 == pytest.approx(1.0443, abs=1e-4)
    assert theta_eq20(0.02, 0.7, 0.7) == pytest.approx(0.02)
    assert theta_eq20(0.01, 0.5, 1.0) == pytest.approx(0.005)


def test_reports_sum():
    for rep in (eq19_report(THETA, 0.8, 0.9, "plus"), eq20_report(THETA, 0.8, 0.9)):
        assert rep.theta_bar_biased == pytest.approx(sum(rep.theta_biased), rel=1e-14)


def _ar1(rng, n, rho):
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for t in range(1, n):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * e[t]
    return x


def _lag_matrix(x, L):
    return np.column_stack([x[L - l : x.size - l] for l in range(L + 1)])


def test_calibration_perfect_measurement(rng):
    X = _lag_matrix(_ar1(rng, 3000, 0.7), 2)
    rep = calib_bias_approx(ValidationData(X, X), THETA)
    np.testing.assert_allclose(rep.inputs["eta_star"], np.eye(3), atol=1e-8)
    np.testing.assert_allclose(rep.theta_biased, THETA.theta, rtol=1e-8)


def test_calibration_classical_uncorrelated_lags(rng):
    n = 200_000
    V, Vu = 4.0, 1.0
    x = rng.normal(0, np.sqrt(V), size=n)
    w = x + rng.normal(0, np.sqrt(Vu), size=n)
    T, M = _lag_matrix(x, 2), _lag_matrix(w, 2)
    rep = calib_bias_approx(ValidationData(T, M), THETA)
    lam = lambda_linear(1.0, V, Vu)
    np.testing.assert_allclose(rep.theta_biased, lam * np.array(THETA.theta), rtol=0.02, atol=2e-5)


def test_calibration_in_sample_residual_terms_vanish(rng):
    x = _ar1(rng, 5000, 0.8)
    w = 0.9 * x + 0.5 * _ar1(rng, 5000, 0.5) + 1.0
    cal = fit_calibration(ValidationData(_lag_matrix(x, 2), _lag_matrix(w, 2)))
    assert np.max(np.abs(cal.resid_coefs)) <= 1e-8
    rep = calib_bias_approx(ValidationData(_lag_matrix(x, 2), _lag_matrix(w, 2)), THETA)
    np.testing.assert_allclose(rep.theta_biased, np.array(THETA.theta) @ cal.eta_star, rtol=1e-10)
    assert rep.notes


def test_calibration_holdout_residuals_informative(rng):
    def draw(shift):
        x = _ar1(rng, 4000, 0.8)
        w = 0.9 * x + 0.5 * _ar1(rng, 4000, 0.5) + shift * x
        return ValidationData(_lag_matrix(x, 2), _lag_matrix(w, 2))

    cal = fit_calibration(draw(0.0), holdout=draw(0.5))
    assert cal.out_of_sample
    assert np.max(np.abs(cal.resid_coefs)) > 1e-3


def test_calibration_rejects_tiny_sample():
    X = np.arange(30.0).reshape(10, 3)
    with pytest.raises(DataError):
        calib_bias_approx(ValidationData(X, X), THETA)


def _panel(values, ids=None):
    ids = ids or tuple(f"u{i}" for i in range(values.shape[0]))
    return ExposurePanel(ids, 738000 + np.arange(values.shape[1]), values)


def test_bl_pure_berkson_is_unbiased(rng):
    units, days = 40, 400
    g = np.repeat(rng.normal(10, 2, size=(4, days)), 10, axis=0)
    truth = g + rng.normal(0, 1, size=(units, days))
    ids = tuple(f"u{i}" for i in range(units))
    mapping = GroupMapping(ids, tuple(f"g{i // 10}" for i in range(units)), (1.0,) * units)
    group_panel = ExposurePanel(("g0", "g1", "g2", "g3"), 738000 + np.arange(days), g[::10], "measured")
    rep = bl_bias_approx(_panel(truth, ids), group_panel, mapping, THETA)
    np.testing.assert_allclose(rep.corrections, 0.0, atol=1e-4)
    np.testing.assert_allclose(rep.theta_biased, THETA.theta, atol=1e-4)


def test_bl_planted_coefficient(rng):
    units, days = 5, 600
    g = rng.normal(10, 2, size=(units, days))
    truth = 1.1 * g  # u = 0.1 * x_g
    ids = tuple(f"u{i}" for i in range(units))
    mapping = GroupMapping(ids, ids, (1.0,) * units)
    eff = LagEffect((0.002,))
    rep = bl_bias_approx(_panel(truth, ids), ExposurePanel(ids, 738000 + np.arange(days), g, "measured"), mapping, eff)
    assert rep.theta_biased[0] == pytest.approx(0.0022, rel=1e-10)


def test_bl_unmapped_unit(rng):
    ids = ("a", "b")
    mapping = GroupMapping(("a",), ("g",), (1.0,))
    p = _panel(rng.normal(size=(2, 30)), ids)
    with pytest.raises(DataError):
        bl_bias_approx(p, ExposurePanel(("g",), p.times, p.values[:1], "measured"), mapping, THETA)


def test_mb_examples():
    assert mb_bias(0.01, 1.0) == 0.01
    assert mb_bias(0.0, 1.3) == 0.0
    rng = np.random.default_rng(3)
    u = rng.normal(0.0, np.sqrt(0.1), size=1_000_000)
    m = np.exp(u).mean()
    se = np.exp(u).std() / 1000.0
    assert m == pytest.approx(np.exp(0.05), abs=3 * se)
    assert mb_bias(1.0, np.exp(0.05)) == pytest.approx(1.05127, abs=1e-5)


def test_mc_examples():
    assert mc_attenuation(0.3, 2.0, 5.0, 0.0) == pytest.approx(0.3)
    assert mc_attenuation(1.0, 1.0, 2.0, 0.25) == pytest.approx(4.0 / 9.0)
    assert abs(mc_attenuation(-0.5, 1.0, 2.0, 0.1)) < 0.5


def test_linear_in_theta():
    assert mc_attenuation(2.0, 1.0, 2.0, 0.25) == pytest.approx(2 * mc_attenuation(1.0, 1.0, 2.0, 0.25))
    assert mb_bias(3.0, 1.2) == pytest.approx(3 * mb_bias(1.0, 1.2))


def test_poly_factor():
    assert poly_bias_factor(1.0, 1.0) == 1.0
    assert poly_bias_factor(0.9, 0.9) == pytest.approx(1.0, abs=1e-15)


def test_poly_factor_monte_carlo():
    # quadratic model with classical error; R^2 = V / (V + Vu) and gamma1 = 1
    rng = np.random.default_rng(11)
    n = 400_000
    V, Vu, b2 = 1.0, 0.15, 0.5
    x = rng.normal(0, np.sqrt(V), size=n)
    w = x + rng.normal(0, np.sqrt(Vu), size=n)
    y = 0.3 * x + b2 * x**2 + rng.normal(0, 0.5, size=n)
    coef = np.linalg.lstsq(np.column_stack([np.ones(n), w, w**2]), y, rcond=None)[0]
    factor = poly_bias_factor(V / (V + Vu), 1.0)
    assert coef[2] / b2 == pytest.approx(factor, rel=0.15)


def test_compose_ce():
    ll = BiasReport.from_values((0.001, 0.002), "calibration")
    zero = BiasReport.from_values((0.001, 0.002), "bl", corrections=(0.0, 0.0))
    assert compose_ce(ll, zero).theta_biased == ll.theta_biased
    bl = BiasReport.from_values((0.0011, 0.0018), "bl", corrections=(0.0001, -0.0002))
    ident = BiasReport.from_values((0.001, 0.002), "none")
    assert compose_ce(ident, bl).theta_biased == pytest.approx(bl.theta_biased)
    with pytest.raises(DataError):
        compose_ce(ll, ll)
    with pytest.raises(DataError):
        compose_ce(BiasReport.from_values((1.0,), "x"), bl)
