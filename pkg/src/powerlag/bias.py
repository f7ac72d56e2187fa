"""Approximations for the coefficient a conditional-logistic fit converges to
when the exposure is measured with error.

All formulas assume small effects, where the log-linear outcome model
behaves like a linear one and first-order projections are adequate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError, SingularDesignError
from .types import ExposurePanel, LagEffect
from .variance import demean_by_group, ols_fit

__all__ = [
    "BiasReport",
    "CalibrationFit",
    "ValidationData",
    "lambda_linear",
    "theta_eq19",
    "theta_eq20",
    "eq19_report",
    "eq20_report",
    "fit_calibration",
    "calib_bias_approx",
    "bl_bias_approx",
    "mb_bias",
    "mc_attenuation",
    "poly_bias_factor",
    "compose_ce",
]


@dataclass(frozen=True, eq=False)
class BiasReport:
    """Per-lag biased coefficients.

    ``corrections`` holds additive terms relative to the true effect when a
    method produces them (the Berkson-like route), so reports can be
    composed.
    """

    theta_biased: tuple
    theta_bar_biased: float
    method: str
    inputs: dict = field(default_factory=dict)
    corrections: Optional[tuple] = None
    notes: tuple = ()

    @classmethod
    def from_values(cls, values, method, **kw) -> "BiasReport":
        vals = tuple(float(v) for v in values)
        return cls(vals, math.fsum(vals), method, **kw)


def lambda_linear(gamma1: float, var_x_given_z: float, var_u: float) -> float:
    """Bias factor ``gamma1 V / (gamma1^2 V + V_u)`` of a linear error model."""
    if not var_x_given_z > 0:
        raise DataError("var_x_given_z must be > 0")
    if var_u < 0:
        raise DataError("var_u must be >= 0")
    return gamma1 * var_x_given_z / (gamma1**2 * var_x_given_z + var_u)


def theta_eq19(effect: LagEffect, r2: float, gamma1: float, sign: str, lag: int) -> float:
    """No-validation bound for one lag.

    ``R^2 (theta_l +/- (1 - R^2) sum_{j != l} theta_j) / gamma1``; ``sign``
    is ``"plus"`` or ``"minus"``.
    """
    if not 0.0 < r2 <= 1.0:
        raise DataError("r2 must lie in (0, 1]")
    if gamma1 == 0:
        raise DataError("gamma1 must be nonzero")
    if sign not in ("plus", "minus"):
        raise DataError("sign must be 'plus' or 'minus'")
    theta = effect.theta
    if not 0 <= lag < len(theta):
        raise DataError(f"lag {lag} out of range")
    others = math.fsum(t for j, t in enumerate(theta) if j != lag)
    s = 1.0 if sign == "plus" else -1.0
    return r2 * (theta[lag] + s * (1.0 - r2) * others) / gamma1


def theta_eq20(theta: float, r2: float, gamma1: float) -> float:
    """``R^2 theta / gamma1``, for negligible residual confounding."""
    if gamma1 == 0:
        raise DataError("gamma1 must be nonzero")
    return r2 * theta / gamma1


def eq19_report(effect: LagEffect, r2: float, gamma1: float, sign: str) -> BiasReport:
    vals = [theta_eq19(effect, r2, gamma1, sign, l) for l in range(effect.n_lags)]
    return BiasReport.from_values(
        vals, f"eq19_{sign}", inputs={"r2": r2, "gamma1": gamma1, "sign": sign}
    )


def eq20_report(effect: LagEffect, r2: float, gamma1: float) -> BiasReport:
    vals = [theta_eq20(t, r2, gamma1) for t in effect.theta]
    rep = BiasReport.from_values(vals, "eq20", inputs={"r2": r2, "gamma1": gamma1})
    return rep


# ---------------------------------------------------------------------------
# regression calibration


@dataclass(frozen=True, eq=False)
class ValidationData:
    """Aligned true and error-prone lag matrices.

    ``truth`` and ``measured`` are ``(N, L + 1)``; ``covariates`` is
    ``(N, q)``. ``groups`` labels rows whose means are absorbed before
    fitting (the matched sets of a case-crossover analysis); ``weights``
    optionally reweights rows (e.g. by expected event counts).
    """

    truth: np.ndarray
    measured: np.ndarray
    covariates: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.truth, dtype=float)
        m = np.asarray(self.measured, dtype=float)
        if t.ndim == 1:
            t, m = t[:, None], m[:, None]
        if t.shape != m.shape:
            raise DataError("truth and measured must be aligned")
        object.__setattr__(self, "truth", t)
        object.__setattr__(self, "measured", m)
        n = t.shape[0]
        if self.covariates is not None:
            c = np.asarray(self.covariates, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != n:
                raise DataError("covariates must have one row per observation")
            object.__setattr__(self, "covariates", c if c.shape[1] else None)
        for name in ("groups", "weights"):
            v = getattr(self, name)
            if v is not None and np.asarray(v).shape[0] != n:
                raise DataError(f"{name} must have one entry per observation")

    @property
    def n_lags(self) -> int:
        return self.truth.shape[1]

    @classmethod
    def from_panels(
        cls,
        truth: ExposurePanel,
        measured: ExposurePanel,
        max_lag: int,
        covariate_panels: Sequence = (),
        covariate_lags: Sequence[int] = (),
        groups=None,
        weights=None,
    ) -> "ValidationData":
        """Stack every unit-day with a full lag history.

        ``covariate_lags[i]`` gives the lag depth of ``covariate_panels[i]``
        (defaults to ``max_lag``). ``groups`` and ``weights`` are
        ``(units, times - max_lag)`` arrays aligned with the lagged output.
        """
        if truth.shape != measured.shape:
            raise DataError("truth and measured panels differ in shape")
        t = truth.lagged(max_lag).reshape(-1, max_lag + 1)
        m = measured.lagged(max_lag).reshape(-1, max_lag + 1)
        cols = []
        for i, p in enumerate(covariate_panels):
            depth = covariate_lags[i] if i < len(covariate_lags) else max_lag
            lagged = p.lagged(max_lag)[..., : depth + 1]
            cols.append(lagged.reshape(t.shape[0], -1))
        cov = np.concatenate(cols, axis=1) if cols else None
        g = None if groups is None else np.asarray(groups).reshape(-1)
        w = None if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        return cls(t, m, cov, g, w)


@dataclass(frozen=True, eq=False)
class CalibrationFit:
    """Regression calibration of each true lag on all measured lags and z.

    ``eta_star[j, l]`` is the coefficient of measured lag ``l`` in the fit for
    true lag ``j``. ``resid_coefs[k, l]`` is the coefficient of measured lag
    ``l`` when the calibration residual ``u*_k`` is regressed on the same
    design; it vanishes in-sample by least-squares orthogonality, so it only
    carries information when evaluated on a holdout.
    """

    eta_star: np.ndarray
    resid_vectors: np.ndarray
    resid_coefs: np.ndarray
    r2: np.ndarray
    out_of_sample: bool = False


def _design(v: ValidationData):
    """Regressor block, responses and weights after optional absorption."""
    X = v.measured
    if v.covariates is not None:
        X = np.column_stack([X, v.covariates])
    T = v.truth
    if v.groups is not None:
        X = demean_by_group(X, v.groups)
        T = demean_by_group(T, v.groups)
        intercept = False
    else:
        intercept = True
    return X, T, intercept


def _coef_block(fit, intercept, n_lags):
    s = fit.coef[1:] if intercept else fit.coef
    return s[:n_lags]


def fit_calibration(validation: ValidationData, holdout: Optional[ValidationData] = None) -> CalibrationFit:
    """Fit the ``L + 1`` calibration regressions.

    With a ``holdout`` the residual regressions use calibration residuals
    formed on the holdout rows, so the residual terms are no longer
    trivially zero.
    """
    v = validation
    L1 = v.n_lags
    if v.truth.shape[0] < 10 * (L1 + 1):
        raise DataError(f"need at least {10 * (L1 + 1)} validation rows")
    X, T, intercept = _design(v)
    eta = np.empty((L1, L1))
    r2 = np.empty(L1)
    resid = np.empty_like(T)
    full_coefs = []
    for j in range(L1):
        fit = ols_fit(T[:, j], X, intercept=intercept, weights=v.weights)
        eta[j] = _coef_block(fit, intercept, L1)
        r2[j] = fit.r2
        resid[:, j] = fit.residuals
        full_coefs.append(fit.coef)

    if holdout is None:
        Xr, Ur, wr, icpt = X, resid, v.weights, intercept
    else:
        Xh, Th, icpt = _design(holdout)
        Ur = np.empty_like(Th)
        for j in range(L1):
            c = full_coefs[j]
            pred = Xh @ (c[1:] if intercept else c) + (c[0] if intercept and icpt else 0.0)
            Ur[:, j] = Th[:, j] - pred
        Xr, wr = Xh, holdout.weights
    rho = np.empty((L1, L1))
    for k in range(L1):
        fit = ols_fit(Ur[:, k], Xr, intercept=icpt, weights=wr)
        rho[k] = _coef_block(fit, icpt, L1)
    return CalibrationFit(eta, resid, rho, r2, holdout is not None)


def calib_bias_approx(
    validation: ValidationData,
    theta: LagEffect,
    holdout: Optional[ValidationData] = None,
) -> BiasReport:
    """``theta_l ~ sum_j theta_j eta*[j, l] + sum_k theta_k rho[k, l]``."""
    if validation.n_lags != theta.n_lags:
        raise DataError("validation lag count does not match theta")
    try:
        cal = fit_calibration(validation, holdout)
    except SingularDesignError as exc:
        raise SingularDesignError(f"calibration design is singular: {exc}") from exc
    th = theta.as_array()
    main = th @ cal.eta_star
    resid_term = th @ cal.resid_coefs
    notes = ()
    if not cal.out_of_sample:
        notes = ("residual terms are in-sample and vanish by construction",)
    return BiasReport.from_values(
        main + resid_term,
        "calibration",
        inputs={"eta_star": cal.eta_star, "resid_term": resid_term, "r2": cal.r2},
        notes=notes,
    )


def bl_bias_approx(
    unit_truth: ExposurePanel,
    group_measured: ExposurePanel,
    mapping,
    theta: LagEffect,
    covariates: Sequence[ExposurePanel] = (),
    groups=None,
) -> BiasReport:
    """Berkson-like bias from unit truth and the group-level panel used in
    its place.

    ``u = x_unit - x_group`` is formed per lag; each ``u_k`` is regressed on
    all group lags (plus covariates) and the lag-``l`` coefficients, weighted
    by ``theta_k``, are added to ``theta_l``.
    """
    from .exposure import expand_groups

    L = theta.max_lag
    expanded = expand_groups(group_measured, mapping, unit_truth.unit_ids)
    if expanded.times.shape != unit_truth.times.shape or np.any(
        expanded.times != unit_truth.times
    ):
        raise DataError("unit and group panels are not aligned in time")
    xi = unit_truth.lagged(L).reshape(-1, L + 1)
    xg = expanded.lagged(L).reshape(-1, L + 1)
    u = xi - xg
    X = xg
    cols = [p.lagged(L).reshape(xi.shape[0], -1) for p in covariates]
    if cols:
        X = np.column_stack([X] + cols)
    intercept = True
    if groups is not None:
        g = np.asarray(groups).reshape(-1)
        X = demean_by_group(X, g)
        u = demean_by_group(u, g)
        intercept = False
    rho = np.empty((L + 1, L + 1))
    for k in range(L + 1):
        fit = ols_fit(u[:, k], X, intercept=intercept)
        rho[k] = _coef_block(fit, intercept, L + 1)
    th = theta.as_array()
    corr = th @ rho
    return BiasReport.from_values(
        th + corr,
        "bl",
        inputs={"resid_coefs": rho},
        corrections=tuple(float(c) for c in corr),
    )


def mb_bias(theta: float, mean_exp_u: float) -> float:
    """Multiplicative Berkson(-like) bias ``theta * E[exp(u)]``."""
    if not mean_exp_u > 0:
        raise DataError("mean_exp_u must be > 0")
    return theta * mean_exp_u


def mc_attenuation(theta: float, var_x_given_z: float, mean_x_given_z: float, var_u: float) -> float:
    """Multiplicative classical error: ``theta V / (V (1 + V_u) + E^2 V_u)``.

    ``V_u`` is the variance of the mean-one error factor ``exp(u)``.
    """
    if not var_x_given_z > 0:
        raise DataError("var_x_given_z must be > 0")
    if var_u < 0:
        raise DataError("var_u must be >= 0")
    v = var_x_given_z
    return theta * v / (v * (1.0 + var_u) + mean_x_given_z**2 * var_u)


def poly_bias_factor(r2: float, gamma1: float) -> float:
    """``(R^2)^2 / gamma1^2`` for the quadratic term of a polynomial model."""
    if gamma1 == 0:
        raise DataError("gamma1 must be nonzero")
    return r2**2 / gamma1**2


def compose_ce(theta_ll: BiasReport, bl_terms: BiasReport) -> BiasReport:
    """Compound error: linear-like biased values plus Berkson-like corrections."""
    if bl_terms.corrections is None:
        raise DataError("Berkson-like report carries no correction terms")
    if len(theta_ll.theta_biased) != len(bl_terms.corrections):
        raise DataError("reports have different lag counts")
    vals = [a + b for a, b in zip(theta_ll.theta_biased, bl_terms.corrections)]
    return BiasReport.from_values(
        vals, "ce", corrections=bl_terms.corrections,
        inputs={"ll_method": theta_ll.method},
    )
