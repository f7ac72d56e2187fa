"""Scenario-level planning: effective effects, variance inputs and tables.

These functions turn a validated :class:`ScenarioConfig` into the rows the
command-line tools print. They are plain library calls, so notebooks and
scripts can reuse them without going through files.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bias import (
    ValidationData,
    bl_bias_approx,
    calib_bias_approx,
    mb_bias,
    mc_attenuation,
    poly_bias_factor,
    theta_eq19,
    theta_eq20,
)
from .exceptions import ConfigError
from .exposure import GroupMapping, gen_exposure_panel, inject_error
from .power import power_curve, sample_size, vcf as vcf_factor
from .study import stratum_keys
from .types import ExposurePanel, LagEffect, ScenarioConfig
from .variance import resample_sigma_bar, sigma_bar_factor_c

__all__ = [
    "SAMPLESIZE_HEADER",
    "BIAS_HEADER",
    "target_index",
    "target_value",
    "variance_panel",
    "target_panel",
    "sigma_bar_for",
    "validation_from_pair",
    "effective_effect",
    "BiasPoint",
    "bias_points",
    "samplesize_rows",
    "bias_rows",
    "calculated_power_rows",
]

SAMPLESIZE_HEADER = (
    "bias_mode",
    "r2",
    "gamma1",
    "controls_per_case",
    "effective_theta",
    "sigma_bar_sq",
    "vcf",
    "n_cases",
    "n_controls",
)
BIAS_HEADER = (
    "r2",
    "gamma1",
    "lag",
    "theta_true",
    "theta_eq19_plus",
    "theta_eq19_minus",
    "theta_eq20",
    "theta_calibration",
)

# modes whose effective effect depends on an (R^2, gamma1) pair
_GRID_MODES = ("eq19_plus", "eq19_minus", "eq20", "poly")


def target_index(cfg: ScenarioConfig) -> int:
    """Position of the target in per-lag-then-cumulative vectors."""
    if cfg.target_lag == "cumulative":
        return cfg.effect.n_lags
    return int(cfg.target_lag)


def target_value(values, theta_bar: float, cfg: ScenarioConfig) -> float:
    """Pick the target from per-lag ``values`` (``theta_bar`` for the sum)."""
    if cfg.target_lag == "cumulative":
        return float(theta_bar)
    return float(values[int(cfg.target_lag)])


def variance_panel(cfg: ScenarioConfig, seed: int) -> Optional[ExposurePanel]:
    """Error-prone exposure panel behind a file or synthetic variance source.

    ``source = value`` returns ``None``. Synthetic panels come from the
    ``[sim]`` exposure settings with the scenario's error model applied,
    because the analysis sees the measured exposure.
    """
    var = cfg.variance
    if var.source == "value":
        return None
    if var.source == "file":
        from .io import load_panel_csv

        got = load_panel_csv(var.panel)
        return got[1] if isinstance(got, tuple) else got
    sim = cfg.sim
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    base = gen_exposure_panel(
        sim.units, sim.days, sim.exposure_mean, sim.exposure_var,
        sim.rho_time, sim.rho_space, rng, sim.start_date,
    )
    mapping = GroupMapping.blocks(base.unit_ids, sim.groups, rng)
    _, measured = inject_error(base, cfg.error, rng, mapping)
    return measured


def target_panel(panel: ExposurePanel, cfg: ScenarioConfig) -> ExposurePanel:
    """The exposure the target coefficient multiplies.

    A single lag is the panel itself (shifting time leaves the variance
    alone); the cumulative target uses ``sum_l w_l x_{t-l}``.
    """
    if cfg.target_lag != "cumulative":
        return panel
    L = cfg.effect.max_lag
    w = np.asarray(cfg.effect.weights, dtype=float)
    vals = panel.lagged(L) @ w
    return ExposurePanel(panel.unit_ids, panel.times[L:], vals, panel.kind)


def sigma_bar_for(cfg: ScenarioConfig, controls: int, c: float, panel, seed: int) -> float:
    """Average stratum variance for ``controls`` referents per case.

    The resampling stream is ``SeedSequence([seed, controls])``, so each
    controls value is reproducible on its own.
    """
    if panel is None:
        base = cfg.variance.sigma_bar_sq
    else:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(controls)]))
        base = resample_sigma_bar(panel, int(controls), cfg.variance.draws, rng)
    return sigma_bar_factor_c(base, c)


def validation_from_pair(truth: ExposurePanel, measured: ExposurePanel, max_lag: int) -> ValidationData:
    """Validation rows with case-crossover strata absorbed.

    Rows sharing a unit, month, year and weekday form one group, matching
    the strata of a time-stratified case-crossover analysis.
    """
    keys = stratum_keys(truth.times)[max_lag:]
    units = np.arange(truth.shape[0])
    groups = units[:, None] * (int(keys.max()) + 1) + keys[None, :]
    return ValidationData.from_panels(truth, measured, max_lag, groups=groups)


def _bl_report(pair, effect: LagEffect):
    truth, measured = pair
    ids = truth.unit_ids
    identity = GroupMapping(ids, ids, tuple(1.0 for _ in ids))
    group_panel = ExposurePanel(ids, measured.times, measured.values, "measured")
    keys = stratum_keys(truth.times)[effect.max_lag:]
    groups = np.arange(len(ids))[:, None] * (int(keys.max()) + 1) + keys[None, :]
    return bl_bias_approx(truth, group_panel, identity, effect, groups=groups)


def _biased_vector(cfg: ScenarioConfig, r2: float, gamma1: float, pair=None):
    """Per-lag biased coefficients and their sum for the configured mode."""
    eff = cfg.effect
    th = eff.theta
    mode = cfg.bias_mode
    b = cfg.bias
    if mode == "none":
        vals = list(th)
    elif mode in ("eq19_plus", "eq19_minus"):
        sign = mode.split("_")[1]
        vals = [theta_eq19(eff, r2, gamma1, sign, l) for l in range(eff.n_lags)]
    elif mode == "eq20":
        vals = [theta_eq20(t, r2, gamma1) for t in th]
    elif mode == "poly":
        f = poly_bias_factor(r2, gamma1)
        vals = [t * f for t in th]
    elif mode == "mb":
        vals = [mb_bias(t, b.mean_exp_u) for t in th]
    elif mode == "mc":
        vals = [mc_attenuation(t, b.var_x, b.mean_x, b.var_u) for t in th]
    elif mode in ("calibration", "bl"):
        if pair is None:
            raise ConfigError("", [("bias.validation", f"mode {mode!r} needs a validation panel")])
        rep = (
            calib_bias_approx(validation_from_pair(*pair, eff.max_lag), eff)
            if mode == "calibration"
            else _bl_report(pair, eff)
        )
        vals = list(rep.theta_biased)
    else:
        raise ConfigError("", [("bias.mode", f"unknown mode {mode!r}")])
    return vals, math.fsum(vals)


@dataclass(frozen=True)
class BiasPoint:
    """One point of the bias sweep: the values used and the result."""

    r2: Optional[float]
    gamma1: Optional[float]
    theta: tuple
    theta_bar: float


def bias_points(cfg: ScenarioConfig, pair=None) -> list:
    """Effective coefficients over the configured sweep.

    Modes driven by ``(R^2, gamma1)`` expand ``bias.r2 x bias.r2_factor x
    bias.gamma1``; the R^2 actually used is ``min(r2 * factor, 1)``. Other
    modes give a single point.
    """
    b = cfg.bias
    if cfg.bias_mode in _GRID_MODES:
        r2s = sorted({min(r * f, 1.0) for r in b.r2 for f in b.r2_factor})
        out = []
        for r2, g in itertools.product(r2s, b.gamma1):
            vals, tot = _biased_vector(cfg, r2, g)
            out.append(BiasPoint(r2, g, tuple(vals), tot))
        return out
    vals, tot = _biased_vector(cfg, 1.0, 1.0, pair)
    return [BiasPoint(None, None, tuple(vals), tot)]


def effective_effect(cfg: ScenarioConfig, point: BiasPoint) -> float:
    return target_value(point.theta, point.theta_bar, cfg)


def _vcf(cfg, s2, theta_eff):
    spec = cfg.error
    ef = cfg.variance.sigma_bar_errfactor
    if spec is None or not spec.is_multiplicative or ef is None:
        return 1.0
    return vcf_factor(s2, ef, theta_eff)


def samplesize_rows(cfg: ScenarioConfig, seed: int, pair=None) -> list:
    """Long-form sample-size grid.

    Each row is ``(bias_mode, r2, gamma1, controls_per_case,
    effective_theta, sigma_bar_sq, vcf, n_cases, n_controls)``. The ``r2``
    column holds the error-model R^2 in the ``eq19``/``eq20``/``poly``
    modes (the deflation R^2 must then be a single value) and the deflation
    R^2 otherwise. ``c_factor`` entries multiply the variance; with several
    entries one row per factor is produced.
    """
    grid_mode = cfg.bias_mode in _GRID_MODES
    if grid_mode and len(cfg.deflation_r2) > 1:
        raise ConfigError(
            "", [("effect.deflation_r2", f"mode {cfg.bias_mode!r} sweeps the error R^2; give one deflation value")]
        )
    panel = variance_panel(cfg, seed)
    if panel is not None:
        panel = target_panel(panel, cfg)
    points = bias_points(cfg, pair)
    rows = []
    for controls in cfg.variance.controls:
        for c in cfg.variance.c_factor:
            s2 = sigma_bar_for(cfg, controls, c, panel, seed)
            for pt in points:
                eff = effective_effect(cfg, pt)
                v = _vcf(cfg, s2, eff)
                for d in cfg.deflation_r2:
                    res = sample_size(eff, s2, d, cfg.test, v)
                    r2_col = pt.r2 if grid_mode else d
                    rows.append(
                        (cfg.bias_mode, r2_col, pt.gamma1, int(controls), eff, s2, v,
                         res.n, res.n * int(controls))
                    )
    return rows


def bias_rows(cfg: ScenarioConfig, pair=None) -> list:
    """Per-lag comparison of the closed-form and calibration approximations.

    One block per ``(R^2, gamma1)`` sweep point, each with a row per lag and
    a final ``cumulative`` row. Columns for signs not requested by
    ``bias.sign`` and the calibration column without validation data are
    left empty.
    """
    eff = cfg.effect
    b = cfg.bias
    cal = None
    if pair is not None:
        rep = calib_bias_approx(validation_from_pair(*pair, eff.max_lag), eff)
        cal = list(rep.theta_biased) + [rep.theta_bar_biased]
    r2s = sorted({min(r * f, 1.0) for r in b.r2 for f in b.r2_factor})
    want = ("plus", "minus") if b.sign == "both" else (b.sign,)
    rows = []
    for r2, g in itertools.product(r2s, b.gamma1):
        cols = {}
        for sign in ("plus", "minus"):
            if sign in want:
                v = [theta_eq19(eff, r2, g, sign, l) for l in range(eff.n_lags)]
                cols[sign] = v + [math.fsum(v)]
            else:
                cols[sign] = [None] * (eff.n_lags + 1)
        e20 = [theta_eq20(t, r2, g) for t in eff.theta]
        e20.append(math.fsum(e20))
        truth = list(eff.theta) + [eff.theta_bar]
        for k in range(eff.n_lags + 1):
            lag = k if k < eff.n_lags else "cumulative"
            rows.append(
                (r2, g, lag, truth[k], cols["plus"][k], cols["minus"][k], e20[k],
                 None if cal is None else cal[k])
            )
    return rows


def calculated_power_rows(cfg: ScenarioConfig, seed: int, pair=None) -> list:
    """``(n, power)`` on ``cfg.n_grid`` from the first sweep point."""
    if not cfg.n_grid:
        raise ConfigError("", [("test.n_grid", "power-curve needs an n grid")])
    panel = variance_panel(cfg, seed)
    if panel is not None:
        panel = target_panel(panel, cfg)
    s2 = sigma_bar_for(cfg, cfg.variance.controls[0], cfg.variance.c_factor[0], panel, seed)
    pt = bias_points(cfg, pair)[0]
    eff = effective_effect(cfg, pt)
    v = _vcf(cfg, s2, eff)
    p = power_curve(cfg.n_grid, eff, s2, cfg.deflation_r2[0], cfg.test, v)
    return [(int(n), float(x)) for n, x in zip(cfg.n_grid, p)]
