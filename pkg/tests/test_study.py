import datetime as dt
import math

import numpy as np
import pytest

from powerlag import (
    DataError,
    ErrorSpec,
    ExposurePanel,
    LagEffect,
    ScenarioConfig,
    SimSettings,
    TestSpec,
)
from powerlag.study import (
    EventTable,
    OutcomeModel,
    PowerPoint,
    gen_outcomes,
    match_case_crossover,
    pilot_inputs,
    power_curve_points,
    replicate_rng,
    run_replicates,
    simulate_replicate,
    stratum_keys,
    summarize,
)

THETA = (0.01, 0.02, 0.005)


def small_scenario(**sim):
    kw = dict(units=20, days=150, K=0.3, replicates=6, exposure_mean=12.0, exposure_var=13.8)
    kw.update(sim)
    return ScenarioConfig(TestSpec(), LagEffect.from_theta(THETA), sim=SimSettings(**kw), sim_enabled=True)


def test_replicate_streams():
    a = replicate_rng(1, 0).random(4)
    np.testing.assert_array_equal(a, replicate_rng(1, 0).random(4))
    assert not np.allclose(a, replicate_rng(1, 1).random(4))
    assert not np.allclose(a, replicate_rng(2, 0).random(4))


def test_stratum_keys():
    d = dt.date(2021, 3, 1)  # a Monday
    times = [(d + dt.timedelta(days=k)).toordinal() for k in (0, 7, 14, 1, 31)]
    k = stratum_keys(times)
    assert k[0] == k[1] == k[2]
    assert k[3] != k[0]
    assert k[4] != k[0]  # April 1 is a Thursday in another month


def _panel(days=60, units=2, start="2021-03-01"):
    t0 = dt.date.fromisoformat(start).toordinal()
    vals = np.arange(units * days, dtype=float).reshape(units, days)
    return ExposurePanel(tuple(f"u{i}" for i in range(units)), t0 + np.arange(days), vals)


def test_case_crossover_referents():
    p = _panel()
    # unit 1, 2021-03-10 (a Wednesday): referents are Mar 3, 17, 24, 31
    ev = EventTable(np.array([1]), np.array([9]), p.times, 0.0)
    d = match_case_crossover(ev, p, L=2)
    assert d.n_strata == 1 and d.sizes[0] == 5
    rows = d.lags[0, :5]
    days = rows[:, 0] - 60  # unit 1 value equals 60 + day index
    assert days[0] == 9
    assert sorted(days[1:]) == [2, 16, 23, 30]
    # lag columns step back one day
    np.testing.assert_allclose(rows[:, 1], rows[:, 0] - 1)
    np.testing.assert_allclose(rows[:, 2], rows[:, 0] - 2)
    cells = d.cells[0, :5]
    np.testing.assert_array_equal(cells % 60, days)


def test_case_crossover_burn_in_excludes_referents():
    p = _panel()
    # 2021-03-17; the Mar 3 referent has no lag-3 history
    ev = EventTable(np.array([0]), np.array([16]), p.times, 0.0)
    d = match_case_crossover(ev, p, L=3)
    assert sorted(d.lags[0, : d.sizes[0], 0]) == [9, 16, 23, 30]


def test_case_crossover_rejects_event_in_burn_in():
    p = _panel()
    with pytest.raises(DataError):
        match_case_crossover(EventTable(np.array([0]), np.array([1]), p.times, 0.0), p, L=2)


def test_gen_outcomes_rate_and_guard():
    p = _panel(days=400, units=50)
    flat = p.with_values(np.zeros(p.shape))
    model = OutcomeModel(1.0, (0.05, 0.0, 0.0), {"pm": (0.0,)})
    ev = gen_outcomes({"pm": flat}, model, seed=3)
    assert ev.n_events / flat.values.size == pytest.approx(0.05, rel=0.05)
    hot = OutcomeModel(30.0, (0.05, 0.0, 0.0), {"pm": (0.0,)})
    with pytest.raises(DataError, match="unit 'u0'"):
        gen_outcomes({"pm": flat}, hot, seed=3)


def test_simulate_replicate_shapes():
    rec = simulate_replicate(small_scenario(), 0, 5)
    assert rec.status == "converged"
    assert len(rec.theta_hat) == len(rec.se_hat) == len(rec.reject) == len(rec.se_approx) == 4
    assert rec.theta_hat[-1] == pytest.approx(sum(rec.theta_hat[:3]))
    assert all(s > 0 for s in rec.se_hat)


def test_simulate_replicate_subsamples():
    rec = simulate_replicate(small_scenario(n_cases=50), 0, 5)
    assert rec.n_strata == 50
    rec = simulate_replicate(small_scenario(n_cases=10**6), 0, 5)
    assert rec.status == "insufficient-cases"


def test_calibration_recorded():
    err = ErrorSpec("AdditiveLinearLike", gamma0=1.0, gamma1=0.9, noise_scale=1.0, rho_time=0.5)
    cfg = small_scenario().replace(error=err)
    rec = simulate_replicate(cfg, 0, 5, with_calibration=True)
    assert len(rec.calib) == 4
    assert rec.calib[-1] == pytest.approx(sum(rec.calib[:3]))
    assert simulate_replicate(cfg, 1, 5, with_calibration=True, calib_stride=2).calib == ()


def test_thread_count_does_not_change_results():
    cfg = small_scenario()
    a, ra = run_replicates(cfg, 6, 9, threads=1, return_records=True)
    b, rb = run_replicates(cfg, 6, 9, threads=3, return_records=True)
    assert ra == rb
    assert a == b


def test_summarize_is_order_insensitive():
    _, recs = run_replicates(small_scenario(), 5, 2, return_records=True)
    assert summarize(recs) == summarize(list(reversed(recs)))
    s = summarize(recs)
    ok = [r for r in recs if r.status == "converged"]
    assert s.mean_theta_hat[0] == pytest.approx(math.fsum(r.theta_hat[0] for r in ok) / len(ok))


def test_wilson_interval():
    pt = PowerPoint(100, (0.5,), (0.5,), 100, 100)
    lo, hi = pt.binomial_ci(0)
    assert lo == pytest.approx(0.4038, abs=1e-4)
    assert hi == pytest.approx(0.5962, abs=1e-4)


def test_power_curve_points_structure():
    cfg = small_scenario(units=30)
    pilot = pilot_inputs(cfg, R=3, master_seed=1)
    assert len(pilot.effective_effect) == 4
    assert pilot.effective_effect[:3] == pytest.approx(THETA)
    pts = power_curve_points(cfg, [40, 80], 4, pilot, master_seed=2)
    assert [p.n for p in pts] == [40, 80]
    for p in pts:
        assert all(0.0 <= c <= 1.0 for c in p.calculated)
        assert p.replicates == 4
    assert pts[1].calculated[1] > pts[0].calculated[1]
