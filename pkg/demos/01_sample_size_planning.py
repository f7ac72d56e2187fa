"""Planning a case-crossover study of a three-day distributed lag.

Walks from the simplest closed-form sample size to one driven by the
variance structure of a (synthetic) exposure panel:

1. one coefficient, known average stratum variance;
2. the same coefficient adjusted for correlated covariates (other lags);
3. the cumulative effect, with the stratum variance resampled from a panel
   for one to four referents per case.

Run with ``python demos/01_sample_size_planning.py``.
"""

import numpy as np

from powerlag import (
    ExposurePanel,
    LagEffect,
    TestSpec,
    cumulative_exposure,
    gen_exposure_panel,
    power_at,
    sample_size,
)
from powerlag.variance import resample_sigma_bar

spec = TestSpec(alpha=0.05, power_target=0.8)

print("1. Closed form: theta = 0.1 per unit, average stratum variance 1")
res = sample_size(0.1, 1.0, 0.0, spec)
print(f"   n = {res.n} matched sets (unrounded {res.n_unrounded:.2f}), power {res.achieved_power:.4f}")

print("\n2. Adjusting for other regressors shrinks the information by (1 - R^2)")
for r2 in (0.0, 0.25, 0.5, 0.75):
    print(f"   R^2 = {r2:4.2f}: n = {sample_size(0.1, 1.0, r2, spec).n}")

print("\n3. Cumulative effect of lags 0-2 from a synthetic PM2.5 panel")
effect = LagEffect.from_theta((0.001, 0.0024, 0.0006))
print(f"   weights from theta: {np.round(effect.weights, 3)}, theta_bar = {effect.theta_bar}")
panel = gen_exposure_panel(units=50, days=365, mean=12.0, var=13.8, rho_time=0.8, rho_space=0.5, seed=1)
# the weighted lag average is the regressor whose coefficient is theta_bar
xbar = cumulative_exposure(panel.lagged(effect.max_lag), effect.weights)
cum = ExposurePanel(panel.unit_ids, panel.times[effect.max_lag:], xbar)
for controls in (1, 2, 3, 4):
    rng = np.random.default_rng(np.random.SeedSequence([1, controls]))
    s2 = resample_sigma_bar(cum, controls, 4000, rng)
    r = sample_size(effect.theta_bar, s2, 0.0, spec)
    print(f"   {controls} referent(s): sigma_bar^2 = {s2:6.3f}  n = {r.n}")

print("\n   Power for theta_bar = 0.004 with 3 referents per case:")
rng = np.random.default_rng(np.random.SeedSequence([1, 3]))
s2 = resample_sigma_bar(cum, 3, 4000, rng)
for n in (10_000, 30_000, 60_000):
    print(f"   n = {n:6d}: power {power_at(n, effect.theta_bar, s2, 0.0, spec):.3f}")
