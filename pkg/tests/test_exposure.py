import datetime as dt

import numpy as np
import pytest

from powerlag import DataError, ErrorSpec, ExposurePanel, GroupMapping
from powerlag.exposure import (
    aggregate_groups,
    apply_error,
    berkson_like_truth,
    expand_groups,
    gen_exposure_panel,
    gen_noise_field,
    inject_error,
)


def _lag1_corr(a, axis):
    a = np.moveaxis(a, axis, 0)
    return np.corrcoef(a[1:].ravel(), a[:-1].ravel())[0, 1]


def test_noise_field_moments():
    f = gen_noise_field(200, 2000, 0.8, 0.5, 4.0, seed=1)
    assert f.values.var() == pytest.approx(4.0, rel=0.05)
    assert _lag1_corr(f.values, 1) == pytest.approx(0.8, abs=0.02)
    assert _lag1_corr(f.values, 0) == pytest.approx(0.5, abs=0.02)


def test_noise_field_stationary_start():
    # the first time point has the same variance as the rest
    vals = np.stack([gen_noise_field(1, 5, 0.95, 0.0, 1.0, seed=s).values[0] for s in range(4000)])
    np.testing.assert_allclose(vals.var(axis=0), 1.0, atol=0.08)


def test_noise_field_deterministic():
    a = gen_noise_field(5, 10, 0.5, 0.5, 1.0, seed=42).values
    b = gen_noise_field(5, 10, 0.5, 0.5, 1.0, seed=42).values
    np.testing.assert_array_equal(a, b)


def test_noise_field_rejects_bad_rho():
    with pytest.raises(DataError):
        gen_noise_field(2, 2, 1.0, 0.0, 1.0, seed=0)


def test_exposure_panel_dates_and_floor():
    p = gen_exposure_panel(3, 40, 1.0, 25.0, 0.5, 0.0, seed=0, start_date="2021-03-01")
    assert p.times[0] == dt.date(2021, 3, 1).toordinal()
    assert np.all(np.diff(p.times) == 1)
    assert p.values.min() >= 0.0


def test_group_blocks():
    g = GroupMapping.blocks([f"u{i}" for i in range(10)], 3)
    assert g.group_ids == ("g0", "g1", "g2")
    assert g.groups.count("g0") in (3, 4)
    with pytest.raises(DataError):
        GroupMapping.blocks(["a"], 2)


def test_aggregate_weighted_means():
    p = ExposurePanel(("a", "b", "c"), [1, 2], np.array([[1.0, 4.0], [3.0, 8.0], [5.0, 5.0]]))
    m = GroupMapping(("a", "b", "c"), ("g", "g", "h"), (1.0, 3.0, 1.0))
    agg = aggregate_groups(p, m)
    np.testing.assert_allclose(agg.values, [[2.5, 7.0], [5.0, 5.0]])
    geo = aggregate_groups(p, m, "multiplicative")
    np.testing.assert_allclose(geo.values[0], [3.0**0.75, np.exp((np.log(4) + 3 * np.log(8)) / 4)])
    back = expand_groups(agg, m)
    np.testing.assert_allclose(back.values, [[2.5, 7.0], [2.5, 7.0], [5.0, 5.0]])


def test_linear_error_is_linear():
    truth = gen_exposure_panel(4, 50, 10.0, 4.0, 0.5, 0.3, seed=2)
    out = apply_error(truth, ErrorSpec("AdditiveLinear", gamma0=2.0, gamma1=0.5), seed=0)
    np.testing.assert_allclose(out.values, 2.0 + 0.5 * truth.values)
    assert out.kind == "measured"


def test_linear_like_noise_variance():
    truth = gen_exposure_panel(50, 2000, 10.0, 4.0, 0.5, 0.3, seed=2)
    spec = ErrorSpec("AdditiveLinearLike", gamma1=0.9, noise_scale=1.5, rho_time=0.6)
    out = apply_error(truth, spec, seed=4)
    resid = out.values - 0.9 * truth.values
    assert resid.var() == pytest.approx(2.25, rel=0.05)
    assert _lag1_corr(resid, 1) == pytest.approx(0.6, abs=0.03)


def test_mult_classical_preserves_mean():
    truth = ExposurePanel(("a",), np.arange(200_000), np.full((1, 200_000), 7.0))
    out = apply_error(truth, ErrorSpec("MultClassical", iid_noise_var=0.2), seed=5)
    assert out.values.mean() == pytest.approx(7.0, rel=0.01)


def test_mult_linear_like_log_slope():
    truth = gen_exposure_panel(20, 2000, 30.0, 25.0, 0.3, 0.0, seed=6)
    spec = ErrorSpec("MultLinearLike", gamma_m0=0.2, gamma_m1=0.8, gamma_shape=4, gamma_rate=40)
    out = apply_error(truth, spec, seed=7)
    lx, lw = np.log(truth.values.ravel()), np.log(out.values.ravel())
    slope = np.polyfit(lx, lw, 1)[0]
    assert slope == pytest.approx(0.8, abs=0.01)


def test_berkson_needs_mapping():
    truth = gen_exposure_panel(4, 10, 10.0, 4.0, 0.5, 0.3, seed=2)
    with pytest.raises(DataError):
        apply_error(truth, ErrorSpec("AdditiveBerkson"), seed=0)


def test_berkson_like_truth_keeps_mean():
    base = gen_exposure_panel(10, 300, 20.0, 9.0, 0.5, 0.5, seed=8)
    spec = ErrorSpec("AdditiveBerksonLike", gamma1=0.25, noise_scale=0.1, gamma_shape=16, gamma_rate=80)
    t = berkson_like_truth(base, spec, seed=9)
    assert t.values.mean() == pytest.approx(base.values.mean(), rel=1e-12)
    assert t.values.min() > 0


def test_inject_error_pairs():
    base = gen_exposure_panel(10, 60, 20.0, 9.0, 0.5, 0.5, seed=8)
    m = GroupMapping.blocks(base.unit_ids, 2)
    t, w = inject_error(base, None, seed=0)
    np.testing.assert_array_equal(t.values, w.values)
    spec = ErrorSpec("AdditiveBerksonLike", gamma1=0.25, noise_scale=0.1, gamma_shape=16, gamma_rate=80)
    t, w = inject_error(base, spec, seed=3, mapping=m)
    # every unit in a group sees the same measured series
    np.testing.assert_array_equal(w.values[0], w.values[4])
    assert not np.array_equal(t.values[0], t.values[4])
    t2, w2 = inject_error(base, spec, seed=3, mapping=m)
    np.testing.assert_array_equal(w.values, w2.values)
