"""Domain types shared by the calculators and the simulator.

Everything here is immutable after construction. Arrays are stored
read-only so instances can be shared across worker threads.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .exceptions import ConfigError, DataError, DegenerateStratumError

__all__ = [
    "LagEffect",
    "TestSpec",
    "ExposurePanel",
    "Stratum",
    "MatchedDesign",
    "ErrorSpec",
    "ERROR_FAMILIES",
    "BIAS_MODES",
    "SimSettings",
    "VarianceSettings",
    "BiasSettings",
    "ScenarioConfig",
    "VarianceSummary",
    "validate_scenario",
]


def _frozen_array(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LagEffect:
    """Lag coefficients ``theta_0..theta_L`` (log-odds per exposure unit).

    ``weights`` are the normalised cumulative-exposure weights. They are
    derived as ``theta / theta_bar`` unless given explicitly.
    """

    theta: tuple
    theta_bar: float = field(init=False)
    weights: Optional[tuple] = None

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        if not theta:
            raise ConfigError("effect.theta must hold at least one lag")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "theta_bar", math.fsum(theta))
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if len(w) != len(theta):
                raise ConfigError("effect.weights must match the number of lags")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_theta(cls, theta: Sequence[float]) -> "LagEffect":
        """Build an effect whose weights are ``theta_l / sum(theta)``."""
        theta = tuple(float(t) for t in theta)
        total = math.fsum(theta)
        if total == 0.0:
            raise ConfigError("cannot derive weights: theta sums to zero")
        return cls(theta=theta, weights=tuple(t / total for t in theta))

    @property
    def n_lags(self) -> int:
        return len(self.theta)

    @property
    def max_lag(self) -> int:
        return len(self.theta) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)


@dataclass(frozen=True)
class TestSpec:
    """Level, target power and sidedness of the planned Wald test."""

    __test__ = False  # not a pytest class

    alpha: float = 0.05
    power_target: float = 0.8
    sided: str = "two-sided"

    def __post_init__(self):
        violations = []
        if not 0.0 < self.alpha < 1.0:
            violations.append(("test.alpha", "must lie strictly inside (0, 1)"))
        if not 0.0 < self.power_target < 1.0:
            violations.append(("test.power", "must lie strictly inside (0, 1)"))
        if self.sided not in ("one-sided", "two-sided"):
            violations.append(("test.sided", "must be 'one-sided' or 'two-sided'"))
        if not violations and self.alpha + (1.0 - self.power_target) >= 1.0:
            violations.append(("test", "alpha + (1 - power) must be < 1"))
        if violations:
            raise ConfigError("", violations)

    @property
    def tail_alpha(self) -> float:
        """The tail probability that defines the critical value."""
        return self.alpha / 2.0 if self.sided == "two-sided" else self.alpha


@dataclass(frozen=True, eq=False)
class ExposurePanel:
    """Dense unit-by-time matrix of exposure values."""

    unit_ids: tuple
    times: np.ndarray
    values: np.ndarray
    kind: str = "truth"

    def __post_init__(self):
        units = tuple(self.unit_ids)
        times = _frozen_array(self.times, dtype=np.int64)
        values = _frozen_array(self.values)
        if values.ndim != 2:
            raise DataError("panel values must be a 2-D matrix")
        if values.shape != (len(units), times.size):
            raise DataError(
                f"panel shape {values.shape} does not match "
                f"{len(units)} units x {times.size} times"
            )
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataError("panel times must be strictly increasing")
        if len(set(units)) != len(units):
            raise DataError("panel unit ids must be unique")
        if not np.all(np.isfinite(values)):
            raise DataError("panel contains missing or non-finite cells")
        if self.kind not in ("truth", "measured"):
            raise DataError("panel kind must be 'truth' or 'measured'")
        object.__setattr__(self, "unit_ids", units)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values, kind=None) -> "ExposurePanel":
        return ExposurePanel(self.unit_ids, self.times, values, kind or self.kind)

    def lagged(self, max_lag: int) -> np.ndarray:
        """Array ``(units, times - max_lag, max_lag + 1)``; ``[..., l]`` is lag l.

        Time position ``t`` in the output corresponds to ``times[t + max_lag]``.
        """
        v = self.values
        n_t = v.shape[1]
        if n_t <= max_lag:
            raise DataError("panel is shorter than the lag window")
        return np.stack(
            [v[:, max_lag - l : n_t - l] for l in range(max_lag + 1)], axis=-1
        )


@dataclass(frozen=True, eq=False)
class Stratum:
    """One matched set; row 0 is the case."""

    rows: np.ndarray
    covariates: Optional[np.ndarray] = None
    case_index: int = 0

    def __post_init__(self):
        rows = _frozen_array(self.rows)
        if rows.ndim == 1:
            rows = _frozen_array(rows[:, None])
        if rows.shape[0] < 2:
            raise DegenerateStratumError("stratum needs one case and >= 1 control")
        object.__setattr__(self, "rows", rows)
        if self.covariates is not None:
            cov = _frozen_array(self.covariates)
            if cov.ndim == 1:
                cov = _frozen_array(cov[:, None])
            if cov.shape[0] != rows.shape[0]:
                raise DataError("stratum covariates must have one row per member")
            object.__setattr__(self, "covariates", cov)
        if self.case_index != 0:
            raise DataError("the case must be the first row of a stratum")

    @property
    def size(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class MatchedDesign:
    """Matched sets stored as padded arrays.

    ``lags`` has shape ``(n, m_max, L + 1)`` and ``sizes[h]`` gives ``m_h``;
    member ``j`` of stratum ``h`` is valid when ``j < sizes[h]``. Row 0 of
    every stratum is the case. ``cells`` optionally records the flat
    ``unit * n_times + time`` panel cell of each member (``-1`` for padding),
    so other panels can be read off the same matched rows.
    """

    lags: np.ndarray
    sizes: np.ndarray
    covariates: Optional[np.ndarray] = None
    cells: Optional[np.ndarray] = None

    def __post_init__(self):
        lags = np.array(self.lags, dtype=float)
        if lags.ndim == 2:
            lags = lags[:, :, None]
        if lags.ndim != 3:
            raise DataError("lags must have shape (strata, members, lags)")
        sizes = np.asarray(self.sizes, dtype=np.int64)
        n, m_max, _ = lags.shape
        if sizes.shape != (n,):
            raise DataError("sizes must hold one entry per stratum")
        if n and (sizes.min() < 2):
            raise DegenerateStratumError("every stratum needs m_h >= 2 rows")
        if n and sizes.max() > m_max:
            raise DataError("stratum size exceeds padded width")
        mask = np.arange(m_max)[None, :] < sizes[:, None]
        lags[~mask] = 0.0
        lags.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "sizes", sizes)
        if self.covariates is not None:
            cov = np.array(self.covariates, dtype=float)
            if cov.ndim == 2:
                cov = cov[:, :, None]
            if cov.shape[:2] != (n, m_max):
                raise DataError("covariates must be padded like lags")
            cov[~mask] = 0.0
            cov.setflags(write=False)
            object.__setattr__(self, "covariates", cov)
        if self.cells is not None:
            cells = np.array(self.cells, dtype=np.int64)
            if cells.shape != (n, m_max):
                raise DataError("cells must be padded like lags")
            cells.setflags(write=False)
            object.__setattr__(self, "cells", cells)

    @classmethod
    def from_strata(cls, strata: Sequence[Stratum]) -> "MatchedDesign":
        strata = list(strata)
        if not strata:
            raise DataError("a design needs at least one stratum")
        n_lag = strata[0].rows.shape[1]
        if any(s.rows.shape[1] != n_lag for s in strata):
            raise DataError("all strata must share the lag count")
        has_cov = strata[0].covariates is not None
        if any((s.covariates is not None) != has_cov for s in strata):
            raise DataError("covariates must be present for all strata or none")
        m_max = max(s.size for s in strata)
        lags = np.zeros((len(strata), m_max, n_lag))
        cov = None
        if has_cov:
            p = strata[0].covariates.shape[1]
            cov = np.zeros((len(strata), m_max, p))
        for h, s in enumerate(strata):
            lags[h, : s.size] = s.rows
            if has_cov:
                cov[h, : s.size] = s.covariates
        return cls(lags, [s.size for s in strata], cov)

    @property
    def n_strata(self) -> int:
        return self.lags.shape[0]

    @property
    def n_lags(self) -> int:
        return self.lags.shape[2]

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[2]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.lags.shape[1])[None, :] < self.sizes[:, None]

    @property
    def strata(self) -> list:
        out = []
        for h in range(self.n_strata):
            m = int(self.sizes[h])
            cov = None if self.covariates is None else self.covariates[h, :m]
            out.append(Stratum(self.lags[h, :m], cov))
        return out

    def full_matrix(self) -> np.ndarray:
        """Lags followed by covariates, shape ``(n, m_max, L + 1 + p)``."""
        if self.covariates is None:
            return self.lags
        return np.concatenate([self.lags, self.covariates], axis=2)

    def subset(self, index) -> "MatchedDesign":
        index = np.asarray(index)
        return MatchedDesign(
            self.lags[index],
            self.sizes[index],
            None if self.covariates is None else self.covariates[index],
            None if self.cells is None else self.cells[index],
        )

    def with_lags(self, lags) -> "MatchedDesign":
        """Same strata and covariates, different exposure columns."""
        return MatchedDesign(lags, self.sizes, self.covariates, self.cells)


ERROR_FAMILIES = (
    "AdditiveBerkson",
    "AdditiveBerksonLike",
    "AdditiveLinear",
    "AdditiveLinearLike",
    "MultBerksonLike",
    "MultLinearLike",
    "MultClassical",
)

BIAS_MODES = (
    "none",
    "eq19_plus",
    "eq19_minus",
    "eq20",
    "calibration",
    "bl",
    "mb",
    "mc",
    "poly",
)


@dataclass(frozen=True)
class ErrorSpec:
    """Parametric description of one exposure error regime.

    Only the parameters relevant to ``family`` are consulted:

    * additive linear(-like): ``gamma0 + gamma1 * x + noise_scale * e1 + u``
      with ``u ~ N(0, iid_noise_var)``;
    * multiplicative linear-like:
      ``exp(gamma_m0 + gamma_m1 * log x + noise_scale * e1 - e2 / 2)``;
    * multiplicative classical: ``x * exp(u)`` with
      ``u ~ N(-iid_noise_var / 2, iid_noise_var)``;
    * Berkson-like: unit truth ``exp(gamma1 * z + noise_scale * e1 - e2)``
      rescaled to the base mean (``z`` standardised base exposure), then
      population-weighted aggregation to groups. ``AdditiveBerkson``
      aggregates the given truth directly.

    ``e1`` is a separable AR(1) noise field with marginal variance
    ``field_var``; ``e2`` is i.i.d. gamma(``gamma_shape``, ``gamma_rate``).
    """

    family: str
    gamma0: float = 0.0
    gamma1: float = 1.0
    gamma_m0: float = 0.0
    gamma_m1: float = 1.0
    noise_scale: float = 0.0
    iid_noise_var: float = 0.0
    rho_time: float = 0.0
    rho_space: float = 0.0
    field_var: float = 1.0
    gamma_shape: float = 1.0
    gamma_rate: float = 1.0

    def __post_init__(self):
        violations = []
        if self.family not in ERROR_FAMILIES:
            violations.append(("error.family", f"unknown family {self.family!r}"))
        for name in ("noise_scale", "iid_noise_var", "field_var"):
            if getattr(self, name) < 0:
                violations.append((f"error.{name}", "must be >= 0"))
        for name in ("rho_time", "rho_space"):
            if not 0.0 <= getattr(self, name) < 1.0:
                violations.append((f"error.{name}", "must lie in [0, 1)"))
        if self.gamma_shape <= 0 or self.gamma_rate <= 0:
            violations.append(("error.gamma_shape", "gamma shape and rate must be > 0"))
        if violations:
            raise ConfigError("", violations)

    @property
    def is_multiplicative(self) -> bool:
        return self.family.startswith("Mult")

    @property
    def is_berkson(self) -> bool:
        return "Berkson" in self.family


@dataclass(frozen=True)
class SimSettings:
    """Controls for the Monte Carlo laboratory.

    ``K`` scales the baseline event probability ``a + b sin(2 pi t / 365 + phase)``
    given by ``baseline``. ``n_cases`` subsamples that many strata per
    replicate (used for power curves); ``None`` keeps every event.
    """

    replicates: int = 100
    units: int = 100
    days: int = 120
    groups: int = 10
    seed: int = 0
    K: float = 1.0
    baseline: tuple = (0.1, 0.02, 0.0)
    start_date: str = "2020-06-01"
    exposure_mean: float = 12.0
    exposure_var: float = 13.8
    rho_time: float = 0.8
    rho_space: float = 0.5
    confounders: bool = True
    o3_theta: tuple = (0.0001, 0.0003, 0.0001)
    temp_theta: tuple = (0.01, 0.005)
    n_cases: Optional[int] = None


@dataclass(frozen=True)
class VarianceSettings:
    """Where the exposure variance for the n formula comes from."""

    source: str = "synthetic"
    sigma_bar_sq: Optional[float] = None
    panel: Optional[str] = None
    controls: tuple = (1,)
    draws: int = 2000
    c_factor: tuple = (1.0,)
    sigma_bar_errfactor: Optional[float] = None


@dataclass(frozen=True)
class BiasSettings:
    """Inputs for the bias approximations; list-valued fields are sweeps."""

    r2: tuple = (1.0,)
    gamma1: tuple = (1.0,)
    sign: str = "both"
    r2_factor: tuple = (1.0,)
    validation: Optional[str] = None
    mean_exp_u: float = 1.0
    var_x: Optional[float] = None
    mean_x: Optional[float] = None
    var_u: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete study-design question.

    ``sim_enabled`` records that Monte Carlo runs were requested (a scenario
    file with a ``[sim]`` section); ``sim`` always holds usable defaults.
    """

    test: TestSpec
    effect: LagEffect
    target_lag: Union[int, str] = "cumulative"
    deflation_r2: tuple = (0.0,)
    error: Optional[ErrorSpec] = None
    bias_mode: str = "none"
    bias: BiasSettings = BiasSettings()
    variance: VarianceSettings = VarianceSettings()
    sim: SimSettings = SimSettings()
    sim_enabled: bool = False
    n_grid: tuple = ()
    output_dir: str = "."

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class VarianceSummary:
    """Average (heteroskedastic) exposure variance across strata."""

    sigma_bar_sq: float
    per_stratum: Optional[np.ndarray] = None
    weights_used: str = "equal"

    def __post_init__(self):
        if not self.sigma_bar_sq >= 0:
            raise DataError("sigma_bar_sq must be >= 0")
        if self.per_stratum is not None:
            object.__setattr__(self, "per_stratum", _frozen_array(self.per_stratum))


def validate_scenario(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check cross-field invariants and fill derived defaults.

    Returns a normalised copy (weights derived from theta when absent).
    Raises :class:`ConfigError` listing every violation with its field path.
    """
    violations = []

    effect = cfg.effect
    if effect.weights is None:
        if effect.theta_bar != 0.0:
            effect = LagEffect.from_theta(effect.theta)
        elif cfg.target_lag == "cumulative":
            violations.append(
                ("effect.theta", "cumulative target needs nonzero sum or explicit weights")
            )

    target = cfg.target_lag
    if isinstance(target, str):
        if target != "cumulative":
            violations.append(("effect.target", "must be a lag index or 'cumulative'"))
    elif not 0 <= int(target) <= effect.max_lag:
        violations.append(("effect.target", f"lag {target} outside 0..{effect.max_lag}"))

    for r2 in cfg.deflation_r2:
        if r2 >= 1.0:
            violations.append(("effect.deflation_r2", "deflation_r2 must be < 1"))
        elif r2 < 0.0:
            violations.append(("effect.deflation_r2", "deflation_r2 must be >= 0"))

    if cfg.bias_mode not in BIAS_MODES:
        violations.append(("bias.mode", f"unknown mode {cfg.bias_mode!r}"))
    if cfg.bias_mode in ("calibration", "bl") and not cfg.bias.validation:
        violations.append(
            ("bias.validation", f"mode {cfg.bias_mode!r} requires a validation panel path")
        )
    if cfg.bias.sign not in ("plus", "minus", "both"):
        violations.append(("bias.sign", "must be plus, minus or both"))
    for g in cfg.bias.gamma1:
        if g == 0.0:
            violations.append(("bias.gamma1", "must be nonzero"))
    for r2 in cfg.bias.r2:
        if not 0.0 < r2 <= 1.0:
            violations.append(("bias.r2", "must lie in (0, 1]"))
    if cfg.bias.mean_exp_u <= 0:
        violations.append(("bias.mean_exp_u", "must be > 0"))
    if cfg.bias_mode == "mc" and (cfg.bias.var_x is None or cfg.bias.mean_x is None):
        violations.append(("bias.var_x", "mode 'mc' needs var_x and mean_x"))

    var = cfg.variance
    if var.source not in ("value", "file", "synthetic"):
        violations.append(("variance.source", "must be value, file or synthetic"))
    if var.source == "value" and (var.sigma_bar_sq is None or var.sigma_bar_sq <= 0):
        violations.append(("variance.sigma_bar_sq", "must be > 0 when source = value"))
    if var.source == "file" and not var.panel:
        violations.append(("variance.panel", "source = file requires a panel path"))
    if any(int(c) < 1 for c in var.controls):
        violations.append(("variance.controls", "controls per case must be >= 1"))
    if any(c <= 0 for c in var.c_factor):
        violations.append(("variance.c_factor", "must be > 0"))
    if var.sigma_bar_errfactor is not None and var.sigma_bar_errfactor <= 0:
        violations.append(("variance.sigma_bar_errfactor", "must be > 0"))

    sim = cfg.sim
    if sim.replicates < 1:
        violations.append(("sim.replicates", "must be >= 1"))
    if sim.units < 1 or sim.days <= effect.max_lag + 7:
        violations.append(("sim.days", "panel too small for the lag window"))
    if not 1 <= sim.groups <= sim.units:
        violations.append(("sim.groups", "must lie in 1..units"))
    if sim.K <= 0:
        violations.append(("sim.K", "must be > 0"))
    if sim.exposure_var <= 0:
        violations.append(("sim.exposure_var", "must be > 0"))
    for name in ("rho_time", "rho_space"):
        if not 0.0 <= getattr(sim, name) < 1.0:
            violations.append((f"sim.{name}", "must lie in [0, 1)"))
    if sim.n_cases is not None and sim.n_cases < 1:
        violations.append(("sim.n_cases", "must be >= 1"))
    if any(n < 1 for n in cfg.n_grid):
        violations.append(("test.n_grid", "grid sizes must be >= 1"))

    if violations:
        raise ConfigError("", violations)
    return cfg.replace(effect=effect)
