"""Monte Carlo laboratory: outcomes, case-crossover matching, replicates.

One replicate draws a truth panel, injects measurement error, generates
events from the truth and analyses them with the measured panel. Every
replicate owns its random stream, derived from ``(master_seed, r)``, so
results do not depend on worker count or scheduling order.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .bias import ValidationData, calib_bias_approx
from .clogit import clogit_fit, wald_test
from .exceptions import DataError, PowerlagError
from .exposure import GroupMapping, gen_exposure_panel, inject_error
from .power import power_at, se_approx
from .types import ExposurePanel, MatchedDesign, ScenarioConfig
from .variance import null_information_matrix, r2_from_information

__all__ = [
    "OutcomeModel",
    "EventTable",
    "ReplicateRecord",
    "ReplicateSummary",
    "replicate_rng",
    "gen_outcomes",
    "stratum_keys",
    "match_case_crossover",
    "simulate_replicate",
    "run_replicates",
    "summarize",
    "CONFOUNDERS",
    "PilotInputs",
    "PowerPoint",
    "pilot_inputs",
    "power_curve_points",
]

# Confounder panel moments: (mean, variance); ozone in ppb, high temperature
# in degrees above a threshold.
CONFOUNDERS = {"o3": (40.0, 164.6), "temp": (4.0, 9.0)}


def replicate_rng(master_seed: int, r: int) -> np.random.Generator:
    """Independent stream for replicate ``r``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(r)])))


@dataclass(frozen=True)
class OutcomeModel:
    """``p = K p0(t) exp(sum_c sum_l theta_{c,l} x_{c,t-l})``.

    ``baseline = (a, b, phase)`` gives ``p0(t) = a + b sin(2 pi t / 365 + phase)``
    with ``t`` the day position in the panel.
    """

    K: float
    baseline: tuple
    effects: Dict[str, tuple]

    @property
    def max_lag(self) -> int:
        return max((len(v) - 1 for v in self.effects.values()), default=0)

    def p0(self, n_times: int) -> np.ndarray:
        a, b, phase = self.baseline
        t = np.arange(n_times)
        return a + b * np.sin(2.0 * np.pi * t / 365.0 + phase)


@dataclass(frozen=True, eq=False)
class EventTable:
    """Events as panel positions; ``time`` indexes ``panel_times``."""

    unit: np.ndarray
    time: np.ndarray
    panel_times: np.ndarray
    rate: float

    @property
    def n_events(self) -> int:
        return self.unit.size


def gen_outcomes(panels: Dict[str, ExposurePanel], model: OutcomeModel, seed) -> EventTable:
    """Bernoulli events at every unit-day with a complete lag history.

    Raises :class:`DataError` naming the first cell whose probability
    reaches 1.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = model.max_lag
    ref = None
    lp = 0.0
    for name, theta in model.effects.items():
        if name not in panels:
            raise DataError(f"no panel for effect {name!r}")
        p = panels[name]
        if ref is None:
            ref = p
        elif p.shape != ref.shape:
            raise DataError("effect panels must share shape")
        th = np.asarray(theta, dtype=float)
        lagged = p.lagged(L)[..., : th.size]
        lp = lp + lagged @ th
    if ref is None:
        raise DataError("outcome model has no effects")
    n_units, n_t = ref.shape
    p0 = model.p0(n_t)[L:]
    if np.any(p0 <= 0):
        raise DataError("baseline probability must stay positive")
    prob = model.K * p0[None, :] * np.exp(lp)
    bad = np.argwhere(prob >= 1.0)
    if bad.size:
        u, t = bad[0]
        raise DataError(
            f"event probability {prob[u, t]:.4g} >= 1 at unit {ref.unit_ids[u]!r}, "
            f"time {int(ref.times[t + L])}"
        )
    y = rng.random(prob.shape) < prob
    unit, pos = np.nonzero(y)
    return EventTable(unit, pos + L, ref.times, float(prob.mean()))


def stratum_keys(times, calendar=None) -> np.ndarray:
    """Integer key per time: same key means same month, year and weekday.

    ``calendar`` maps a time value to a :class:`datetime.date`; the default
    reads times as proleptic Gregorian ordinals.
    """
    to_date = calendar or _dt.date.fromordinal
    keys = []
    for t in np.asarray(times):
        d = to_date(int(t))
        keys.append((d.year * 12 + d.month) * 7 + d.weekday())
    return np.asarray(keys, dtype=np.int64)


def match_case_crossover(
    events: EventTable,
    analysis_panel: ExposurePanel,
    L: int,
    covariate_panels: Sequence[ExposurePanel] = (),
    covariate_lags: Sequence[int] = (),
    calendar=None,
    return_dropped: bool = False,
):
    """Time-stratified case-crossover design.

    Referents of an event are the other days of the same unit in the same
    calendar month and year that fall on the same weekday, restricted to
    days with a full lag history. Events without referents are dropped.
    """
    v = analysis_panel
    n_units, n_t = v.shape
    if np.any(np.asarray(events.panel_times) != v.times):
        raise DataError("analysis panel does not cover the event calendar")
    keys = stratum_keys(v.times, calendar)
    valid = np.arange(n_t) >= L
    uniq, inv = np.unique(keys[valid], return_inverse=True)
    positions = np.flatnonzero(valid)
    counts = np.bincount(inv, minlength=uniq.size)
    width = int(counts.max()) if counts.size else 0
    table = np.full((uniq.size, width), -1, dtype=np.int64)
    fill = np.zeros(uniq.size, dtype=np.int64)
    for pos, k in zip(positions, inv):
        table[k, fill[k]] = pos
        fill[k] += 1
    key_of = np.full(n_t, -1, dtype=np.int64)
    key_of[positions] = inv

    t_ev = np.asarray(events.time, dtype=np.int64)
    u_ev = np.asarray(events.unit, dtype=np.int64)
    if np.any(key_of[t_ev] < 0):
        raise DataError("event falls inside the lag burn-in")
    k_ev = key_of[t_ev]
    sizes = counts[k_ev]
    keep = sizes >= 2
    dropped = int(np.count_nonzero(~keep))
    t_ev, u_ev, k_ev, sizes = t_ev[keep], u_ev[keep], k_ev[keep], sizes[keep]
    if t_ev.size == 0:
        raise DataError("no event has a referent day")

    members = table[k_ev].copy()
    # move the case day to column 0
    case_col = np.argmax(members == t_ev[:, None], axis=1)
    rows = np.arange(members.shape[0])
    members[rows, case_col] = members[:, 0]
    members[:, 0] = t_ev
    pad = members < 0
    mpos = np.where(pad, L, members)

    lags = _gather(v.values, u_ev, mpos, L)
    cov = None
    if covariate_panels:
        cols = []
        for i, p in enumerate(covariate_panels):
            depth = covariate_lags[i] if i < len(covariate_lags) else L
            cols.append(_gather(p.values, u_ev, mpos, depth))
        cov = np.concatenate(cols, axis=2)
    cells = np.where(pad, -1, u_ev[:, None] * n_t + mpos)
    design = MatchedDesign(lags, sizes, cov, cells)
    if return_dropped:
        return design, dropped
    return design


def _gather(values, units, mpos, depth):
    """``out[h, j, l] = values[units[h], mpos[h, j] - l]``."""
    return np.stack([values[units[:, None], mpos - l] for l in range(depth + 1)], axis=-1)


# ---------------------------------------------------------------------------
# replicates


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    status: str
    n_strata: int = 0
    theta_hat: tuple = ()
    se_hat: tuple = ()
    reject: tuple = ()
    se_approx: tuple = ()
    calib: tuple = ()
    info_per_stratum: tuple = ()


@dataclass(frozen=True)
class ReplicateSummary:
    """Aggregates over converged replicates.

    Vectors hold one entry per lag followed by the cumulative effect.
    """

    mean_theta_hat: tuple
    sd_theta_hat: tuple
    mean_se_hat: tuple
    reject_rate: tuple
    replicates_converged: int
    replicates: int
    mean_se_approx: tuple = ()
    mean_calib: tuple = ()
    mean_info_per_stratum: tuple = ()
    mean_n_strata: float = 0.0


def _confounder_panels(sim, rng, unit_ids):
    out = {}
    for name in ("o3", "temp"):
        mean, var = CONFOUNDERS[name]
        out[name] = gen_exposure_panel(
            sim.units, sim.days, mean, var, sim.rho_time, sim.rho_space, rng,
            sim.start_date, unit_ids,
        )
    return out


def _outcome_model(cfg: ScenarioConfig) -> OutcomeModel:
    effects = {"pm": cfg.effect.theta}
    if cfg.sim.confounders:
        effects["o3"] = tuple(cfg.sim.o3_theta)
        effects["temp"] = tuple(cfg.sim.temp_theta)
    return OutcomeModel(cfg.sim.K, tuple(cfg.sim.baseline), effects)


def _approx_ses(design: MatchedDesign, weights) -> tuple:
    """Per-lag and cumulative SE approximations plus per-stratum information.

    Everything is read off the null information matrix ``M``: the average
    stratum variance of column ``l`` is ``M_ll / n``. The weighted exposure
    ``sum_l w_l x_l`` is a linear map of the lag columns, so its matrix
    with the covariates is ``A M A^T``.
    """
    n = design.n_strata
    L1 = design.n_lags
    M = null_information_matrix(design)
    p = M.shape[0]
    out, infos = [], []
    for l in range(L1):
        s2 = M[l, l] / n
        r2 = r2_from_information(M, l, [k for k in range(p) if k != l])
        out.append(se_approx(n, s2, r2))
        infos.append(float(s2 * (1.0 - r2)))
    A = np.zeros((p - L1 + 1, p))
    A[0, :L1] = weights
    A[1:, L1:] = np.eye(p - L1)
    Mc = A @ M @ A.T
    s2 = Mc[0, 0] / n
    r2 = r2_from_information(Mc, 0, range(1, Mc.shape[0]))
    out.append(se_approx(n, s2, r2))
    infos.append(float(s2 * (1.0 - r2)))
    return tuple(out), tuple(infos)


def simulate_replicate(
    cfg: ScenarioConfig,
    r: int,
    master_seed: int,
    with_calibration: bool = False,
    calib_stride: int = 1,
) -> ReplicateRecord:
    """Run one replicate; failures are reported in ``status``.

    With ``with_calibration`` the regression-calibration approximation is
    computed from this replicate's own truth and measured panels, on every
    ``calib_stride``-th replicate (it estimates a population quantity, so a
    subset suffices).
    """
    sim = cfg.sim
    rng = replicate_rng(master_seed, r)
    L = cfg.effect.max_lag
    try:
        base = gen_exposure_panel(
            sim.units, sim.days, sim.exposure_mean, sim.exposure_var,
            sim.rho_time, sim.rho_space, rng, sim.start_date,
        )
        mapping = GroupMapping.blocks(base.unit_ids, sim.groups, rng)
        truth, measured = inject_error(base, cfg.error, rng, mapping)
        panels = {"pm": truth}
        conf = []
        conf_lags = []
        if sim.confounders:
            cp = _confounder_panels(sim, rng, base.unit_ids)
            panels.update(cp)
            conf = [cp["o3"], cp["temp"]]
            conf_lags = [len(sim.o3_theta) - 1, len(sim.temp_theta) - 1]
        events = gen_outcomes(panels, _outcome_model(cfg), rng)
        if events.n_events == 0:
            return ReplicateRecord(r, "no-events")
        design = match_case_crossover(events, measured, L, conf, conf_lags)
        if sim.n_cases is not None:
            if design.n_strata < sim.n_cases:
                return ReplicateRecord(r, "insufficient-cases", design.n_strata)
            pick = np.sort(rng.choice(design.n_strata, size=sim.n_cases, replace=False))
            design = design.subset(pick)
        fit = clogit_fit(design)
        if not fit.converged:
            return ReplicateRecord(r, fit.status, design.n_strata)
        n_lag = cfg.effect.n_lags
        th = fit.theta_hat[:n_lag]
        se = fit.se[:n_lag]
        ones = np.zeros(fit.theta_hat.size)
        ones[:n_lag] = 1.0
        tb = wald_test(fit, ones, cfg.test.alpha, cfg.test.sided)
        rej = []
        for l in range(n_lag):
            e = np.zeros(fit.theta_hat.size)
            e[l] = 1.0
            rej.append(wald_test(fit, e, cfg.test.alpha, cfg.test.sided).reject)
        rej.append(tb.reject)
        se_bar = float(math.sqrt(ones @ fit.cov @ ones))
        weights = cfg.effect.weights or tuple(np.full(n_lag, 1.0 / n_lag))
        approx, infos = _approx_ses(design, weights)
        calib = ()
        if with_calibration and r % max(int(calib_stride), 1) == 0:
            keys = stratum_keys(truth.times)[L:]
            groups = np.arange(sim.units)[:, None] * 10**7 + keys[None, :]
            val = ValidationData.from_panels(truth, measured, L, conf, conf_lags, groups)
            rep = calib_bias_approx(val, cfg.effect)
            calib = rep.theta_biased + (rep.theta_bar_biased,)
        return ReplicateRecord(
            r,
            "converged",
            design.n_strata,
            tuple(float(t) for t in th) + (float(th.sum()),),
            tuple(float(s) for s in se) + (se_bar,),
            tuple(bool(x) for x in rej),
            approx,
            calib,
            infos,
        )
    except PowerlagError as exc:
        return ReplicateRecord(r, f"failed: {type(exc).__name__}")


def _workers(threads: int) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def run_replicates(
    scenario: ScenarioConfig,
    R: Optional[int] = None,
    master_seed: Optional[int] = None,
    threads: int = 1,
    with_calibration: bool = False,
    return_records: bool = False,
    calib_stride: int = 1,
):
    """Run ``R`` replicates and summarise them.

    ``threads`` workers share the batch (0 means one per CPU). BLAS is
    pinned to one thread so floating-point results are identical for every
    worker count.
    """
    R = scenario.sim.replicates if R is None else int(R)
    if R < 1:
        raise DataError("R must be >= 1")
    seed = scenario.sim.seed if master_seed is None else int(master_seed)
    k = _workers(threads)

    def run(r):
        return simulate_replicate(scenario, r, seed, with_calibration, calib_stride)

    with threadpool_limits(limits=1):
        if k == 1:
            records = [run(r) for r in range(R)]
        else:
            with ThreadPoolExecutor(max_workers=k) as pool:
                records = list(pool.map(run, range(R)))
    summary = summarize(records)
    return (summary, records) if return_records else summary


def _mean(vals):
    return math.fsum(vals) / len(vals) if vals else float("nan")


def _sd(vals):
    if len(vals) < 2:
        return float("nan")
    m = _mean(vals)
    return math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def summarize(records: Sequence[ReplicateRecord]) -> ReplicateSummary:
    """Order-insensitive aggregation (records are sorted by index first)."""
    recs = sorted(records, key=lambda x: x.replicate)
    ok = [x for x in recs if x.status == "converged"]

    def col(attr):
        have = [x for x in ok if getattr(x, attr)]
        if not have:
            return ()
        width = len(getattr(have[0], attr))
        return tuple(_mean([float(getattr(x, attr)[i]) for x in have]) for i in range(width))

    sd = ()
    if ok:
        width = len(ok[0].theta_hat)
        sd = tuple(_sd([x.theta_hat[i] for x in ok]) for i in range(width))
    return ReplicateSummary(
        mean_theta_hat=col("theta_hat"),
        sd_theta_hat=sd,
        mean_se_hat=col("se_hat"),
        reject_rate=col("reject"),
        replicates_converged=len(ok),
        replicates=len(recs),
        mean_se_approx=col("se_approx"),
        mean_calib=col("calib"),
        mean_info_per_stratum=col("info_per_stratum"),
        mean_n_strata=_mean([float(x.n_strata) for x in ok]),
    )


# ---------------------------------------------------------------------------
# power curves


@dataclass(frozen=True)
class PilotInputs:
    """Population quantities feeding the calculated power curve.

    Vectors hold one entry per lag followed by the cumulative effect.
    ``info_per_stratum`` is ``sigma_bar^2 (1 - R^2)`` of the analysed
    (measured) exposure.
    """

    effective_effect: tuple
    info_per_stratum: tuple
    replicates: int


@dataclass(frozen=True)
class PowerPoint:
    n: int
    calculated: tuple
    empirical: tuple
    replicates_converged: int
    replicates: int

    def binomial_ci(self, target: int, z: float = 1.959964) -> tuple:
        """Wilson interval of the empirical rejection rate for one target."""
        k = self.replicates_converged
        if k == 0:
            return (float("nan"), float("nan"))
        p = self.empirical[target]
        den = 1.0 + z * z / k
        mid = (p + z * z / (2 * k)) / den
        half = z * math.sqrt(p * (1 - p) / k + z * z / (4 * k * k)) / den
        return (mid - half, mid + half)


def pilot_inputs(scenario: ScenarioConfig, R: int = 200, master_seed: int = 0, threads: int = 1) -> PilotInputs:
    """Average per-stratum information and effective effects over full designs.

    The effective effect is the true effect without measurement error and
    the regression-calibration approximation otherwise.
    """
    full = scenario.replace(sim=_replace(scenario.sim, n_cases=None))
    with_cal = scenario.error is not None
    s = run_replicates(full, R, master_seed, threads, with_calibration=with_cal, calib_stride=5)
    if s.replicates_converged == 0:
        raise DataError("no pilot replicate converged")
    if with_cal:
        eff = s.mean_calib
    else:
        eff = tuple(scenario.effect.theta) + (scenario.effect.theta_bar,)
    return PilotInputs(tuple(eff), s.mean_info_per_stratum, s.replicates_converged)


def _replace(obj, **kw):
    return dataclasses.replace(obj, **kw)


def power_curve_points(
    scenario: ScenarioConfig,
    n_grid: Sequence[int],
    R: int,
    pilot: PilotInputs,
    master_seed: int = 0,
    threads: int = 1,
) -> list:
    """Empirical and calculated power at each ``n`` of the grid.

    Each grid point subsamples ``n`` matched sets per replicate and uses its
    own seed stream, derived from ``(master_seed, n)``.
    """
    out = []
    for n in n_grid:
        cfg = scenario.replace(sim=_replace(scenario.sim, n_cases=int(n)))
        seed = int(np.random.SeedSequence([int(master_seed), int(n)]).generate_state(1)[0])
        s = run_replicates(cfg, R, seed, threads)
        calc = tuple(
            power_at(int(n), e, i, 0.0, scenario.test)
            for e, i in zip(pilot.effective_effect, pilot.info_per_stratum)
        )
        out.append(PowerPoint(int(n), calc, s.reject_rate, s.replicates_converged, s.replicates))
    return out
