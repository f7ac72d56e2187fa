"""Synthetic exposure panels and measurement-error injection.

Noise fields are separable: AR(1) in time and AR(1) along the unit index,
so nearby unit ids behave like nearby locations. Panel ``times`` are
proleptic Gregorian ordinals (``datetime.date.toordinal``).
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .exceptions import DataError
from .types import ErrorSpec, ExposurePanel

__all__ = [
    "NoiseField",
    "GroupMapping",
    "gen_noise_field",
    "gen_exposure_panel",
    "apply_error",
    "berkson_like_truth",
    "inject_error",
    "aggregate_groups",
    "expand_groups",
    "MULT_FLOOR",
]

MULT_FLOOR = 1e-6  # added before logs of concentrations


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _ar1(x: np.ndarray, rho: float, axis: int) -> np.ndarray:
    """Stationary unit-variance AR(1) filter of white noise along ``axis``."""
    if rho == 0.0:
        return x
    s = np.sqrt(1.0 - rho * rho)
    x = np.moveaxis(x, axis, 0).copy()
    # scaling the first draw by 1/s starts the recursion in stationarity
    x[0] /= s
    y = lfilter([s], [1.0, -rho], x, axis=0)
    return np.moveaxis(y, 0, axis)


@dataclass(frozen=True, eq=False)
class NoiseField:
    """Zero-mean Gaussian field with separable AR(1) correlation."""

    values: np.ndarray
    rho_time: float
    rho_space: float
    marginal_var: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def gen_noise_field(units, days, rho_time, rho_space, marginal_var, seed) -> NoiseField:
    """Draw a ``units x days`` field; correlation ``rho_s^|di| rho_t^|dt|``."""
    for name, r in (("rho_time", rho_time), ("rho_space", rho_space)):
        if not 0.0 <= r < 1.0:
            raise DataError(f"{name} must lie in [0, 1)")
    if marginal_var < 0:
        raise DataError("marginal_var must be >= 0")
    rng = _rng(seed)
    z = rng.standard_normal((units, days))
    z = _ar1(z, rho_space, axis=0)
    z = _ar1(z, rho_time, axis=1)
    return NoiseField(np.sqrt(marginal_var) * z, rho_time, rho_space, marginal_var)


def gen_exposure_panel(
    units: int,
    days: int,
    mean: float,
    var: float,
    rho_time: float,
    rho_space: float,
    seed,
    start_date: str = "2020-06-01",
    unit_ids: Optional[Sequence] = None,
) -> ExposurePanel:
    """Gaussian panel with the given moments, truncated at zero."""
    if not var > 0:
        raise DataError("var must be > 0")
    f = gen_noise_field(units, days, rho_time, rho_space, var, seed)
    values = np.maximum(mean + f.values, 0.0)
    t0 = _dt.date.fromisoformat(start_date).toordinal()
    ids = tuple(unit_ids) if unit_ids is not None else tuple(f"u{i}" for i in range(units))
    return ExposurePanel(ids, t0 + np.arange(days), values, "truth")


@dataclass(frozen=True)
class GroupMapping:
    """Unit-to-group assignment with population weights (unit order)."""

    unit_ids: tuple
    groups: tuple
    weights: tuple

    def __post_init__(self):
        if not len(self.unit_ids) == len(self.groups) == len(self.weights):
            raise DataError("mapping fields must have one entry per unit")
        if any(not w > 0 for w in self.weights):
            raise DataError("population weights must be positive")

    @classmethod
    def blocks(cls, unit_ids, n_groups: int, seed=None) -> "GroupMapping":
        """Contiguous unit blocks as groups; gamma(2) populations if seeded."""
        ids = tuple(unit_ids)
        if not 1 <= n_groups <= len(ids):
            raise DataError("n_groups must lie in 1..units")
        labels = np.arange(len(ids)) * n_groups // len(ids)
        if seed is None:
            w = np.ones(len(ids))
        else:
            w = _rng(seed).gamma(2.0, 1.0, size=len(ids)) + 0.05
        return cls(ids, tuple(f"g{k}" for k in labels), tuple(float(x) for x in w))

    def index(self, unit_ids) -> np.ndarray:
        pos = {u: i for i, u in enumerate(self.unit_ids)}
        try:
            return np.array([pos[u] for u in unit_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unit {exc.args[0]!r} has no group") from None

    @property
    def group_ids(self) -> tuple:
        return tuple(dict.fromkeys(self.groups))


def aggregate_groups(unit_panel: ExposurePanel, mapping: GroupMapping, mode: str = "additive") -> ExposurePanel:
    """Population-weighted group means (arithmetic or geometric)."""
    if mode not in ("additive", "multiplicative"):
        raise DataError("mode must be 'additive' or 'multiplicative'")
    idx = mapping.index(unit_panel.unit_ids)
    labels = np.array(mapping.groups, dtype=object)[idx]
    w = np.array(mapping.weights)[idx]
    v = unit_panel.values
    if mode == "multiplicative":
        if np.any(v <= 0):
            raise DataError("multiplicative aggregation needs positive values")
        v = np.log(v)
    gids = [g for g in mapping.group_ids if np.any(labels == g)]
    out = np.empty((len(gids), v.shape[1]))
    for k, g in enumerate(gids):
        sel = labels == g
        out[k] = w[sel] @ v[sel] / w[sel].sum()
    if mode == "multiplicative":
        out = np.exp(out)
    return ExposurePanel(tuple(gids), unit_panel.times, out, "measured")


def expand_groups(group_panel: ExposurePanel, mapping: GroupMapping, unit_ids=None) -> ExposurePanel:
    """Give every unit its group's series."""
    unit_ids = tuple(mapping.unit_ids if unit_ids is None else unit_ids)
    idx = mapping.index(unit_ids)
    pos = {g: i for i, g in enumerate(group_panel.unit_ids)}
    try:
        rows = [pos[mapping.groups[i]] for i in idx]
    except KeyError as exc:
        raise DataError(f"group {exc.args[0]!r} missing from group panel") from None
    return ExposurePanel(unit_ids, group_panel.times, group_panel.values[rows], "measured")


def _e1(spec: ErrorSpec, shape, rng):
    return gen_noise_field(shape[0], shape[1], spec.rho_time, spec.rho_space, spec.field_var, rng).values


def _e2(spec: ErrorSpec, shape, rng):
    return rng.gamma(spec.gamma_shape, 1.0 / spec.gamma_rate, size=shape)


def apply_error(truth: ExposurePanel, spec: ErrorSpec, seed, mapping: Optional[GroupMapping] = None) -> ExposurePanel:
    """Error-prone version of ``truth`` on the same units and times.

    Berkson families replace each unit's value by its group aggregate and
    therefore need ``mapping``.
    """
    rng = _rng(seed)
    x = truth.values
    shape = x.shape
    fam = spec.family
    if fam in ("AdditiveLinear", "AdditiveLinearLike"):
        out = spec.gamma0 + spec.gamma1 * x
        if spec.noise_scale > 0:
            out = out + spec.noise_scale * _e1(spec, shape, rng)
        if spec.iid_noise_var > 0:
            out = out + rng.normal(0.0, np.sqrt(spec.iid_noise_var), size=shape)
    elif fam == "MultLinearLike":
        if np.any(x < 0):
            raise DataError("multiplicative error needs nonnegative truth")
        eta = spec.gamma_m0 + spec.gamma_m1 * np.log(x + MULT_FLOOR)
        if spec.noise_scale > 0:
            eta = eta + spec.noise_scale * _e1(spec, shape, rng)
        eta = eta - _e2(spec, shape, rng) / 2.0
        out = np.exp(eta)
    elif fam == "MultClassical":
        if np.any(x < 0):
            raise DataError("multiplicative error needs nonnegative truth")
        v = spec.iid_noise_var
        out = x * np.exp(rng.normal(-v / 2.0, np.sqrt(v), size=shape)) if v > 0 else x.copy()
    else:
        if mapping is None:
            raise DataError(f"{fam} error needs a unit-to-group mapping")
        mode = "multiplicative" if spec.is_multiplicative else "additive"
        return expand_groups(aggregate_groups(truth, mapping, mode), mapping, truth.unit_ids)
    return truth.with_values(out, kind="measured")


def berkson_like_truth(base: ExposurePanel, spec: ErrorSpec, seed) -> ExposurePanel:
    """Unit-level truth ``exp(gamma1 z + kappa e1 - e2)`` rescaled to the base mean.

    ``z`` is the standardised base panel. The result is heavier tailed than
    ``base`` and differs between units of the same group, which is what makes
    group-level measurement Berkson-like rather than pure Berkson.
    """
    rng = _rng(seed)
    x = base.values
    z = (x - x.mean()) / x.std()
    eta = spec.gamma1 * z
    if spec.noise_scale > 0:
        eta = eta + spec.noise_scale * _e1(spec, x.shape, rng)
    eta = eta - _e2(spec, x.shape, rng)
    new = np.exp(eta - eta.max())
    new *= x.mean() / new.mean()
    return base.with_values(new, kind="truth")


def inject_error(
    base: ExposurePanel,
    spec: Optional[ErrorSpec],
    seed,
    mapping: Optional[GroupMapping] = None,
):
    """Return ``(truth, measured)`` for one replicate.

    Berkson-like families first build a new unit-level truth from ``base``
    and then aggregate it; every other family perturbs ``base`` directly.
    """
    if spec is None:
        return base, base.with_values(base.values, kind="measured")
    rng = _rng(seed)
    if spec.family in ("AdditiveBerksonLike", "MultBerksonLike"):
        truth = berkson_like_truth(base, spec, rng)
    else:
        truth = base
    return truth, apply_error(truth, spec, rng, mapping)
