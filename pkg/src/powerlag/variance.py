"""Fisher information and exposure-variance aggregation.

Stratum variances use divisor ``m_h`` (no ``-1`` correction); that is the
form the conditional-likelihood information takes at ``theta = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .exceptions import (
    DataError,
    DegenerateStratumError,
    NumericalError,
    SingularDesignError,
)
from .types import ExposurePanel, LagEffect, MatchedDesign, VarianceSummary

__all__ = [
    "OlsFit",
    "stratum_variance",
    "stratum_variances",
    "fisher_info_null",
    "fisher_info_alt",
    "null_information_matrix",
    "sigma_bar_weighted",
    "summarize_variance",
    "cumulative_exposure",
    "ols_fit",
    "demean_by_group",
    "partial_r2",
    "r2_from_information",
    "sigma_bar_multiplicative",
    "delta_var_power",
    "sigma_bar_factor_c",
    "resample_sigma_bar",
]


def stratum_variance(values) -> float:
    """Mean squared deviation from the stratum mean (divisor ``m_h``)."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateStratumError("a stratum needs at least 2 values")
    return float(np.mean((x - x.mean()) ** 2))


def _masked_center(x, mask, sizes):
    """Subtract each stratum's mean over valid members; padding stays 0."""
    m = mask[..., None] if x.ndim == 3 else mask
    s = sizes[:, None, None] if x.ndim == 3 else sizes[:, None]
    mean = np.where(m, x, 0.0).sum(axis=1, keepdims=True) / s
    return np.where(m, x - mean, 0.0)


def stratum_variances(design: MatchedDesign, lag: int) -> np.ndarray:
    """Vector of ``sigma_h^2`` for one exposure column."""
    if not 0 <= lag < design.n_lags:
        raise DataError(f"lag {lag} out of range 0..{design.n_lags - 1}")
    centered = _masked_center(design.lags[:, :, lag], design.mask, design.sizes)
    return (centered**2).sum(axis=1) / design.sizes


def fisher_info_null(design: MatchedDesign, lag: int) -> float:
    """``I(theta_l = 0) = sum_h sigma_h^2`` for the lag-``l`` column."""
    return float(np.sum(stratum_variances(design, lag)))


def _info_at(x, mask, theta):
    """Per-stratum ``E_w[x^2] - E_w[x]^2`` with weights ``exp(theta x)``."""
    eta = np.where(mask, theta * x, -np.inf)
    eta = eta - eta.max(axis=1, keepdims=True)
    w = np.where(mask, np.exp(eta), 0.0)
    w /= w.sum(axis=1, keepdims=True)
    mean = (w * x).sum(axis=1, keepdims=True)
    return (w * (x - mean) ** 2).sum(axis=1)


def fisher_info_alt(
    design: MatchedDesign,
    effect: LagEffect,
    cumulative: bool = False,
    lag: int = 0,
) -> float:
    """Information evaluated at a non-null effect.

    With ``cumulative=True`` each row is first collapsed into the weighted
    exposure ``sum_l w_l x_l`` and the information is taken at
    ``theta_bar``; otherwise column ``lag`` is used with ``theta[lag]``.
    """
    if cumulative:
        if effect.weights is None:
            raise DataError("cumulative information needs effect weights")
        x = cumulative_exposure(design.lags, effect.weights)
        theta = effect.theta_bar
    else:
        if not 0 <= lag < design.n_lags:
            raise DataError(f"lag {lag} out of range 0..{design.n_lags - 1}")
        x = design.lags[:, :, lag]
        theta = effect.theta[lag] if len(effect.theta) > lag else effect.theta[0]
    # Centering is exact for the variance and keeps theta * x small.
    x = _masked_center(x, design.mask, design.sizes)
    return float(np.sum(_info_at(x, design.mask, theta)))


def null_information_matrix(design: MatchedDesign, include_covariates=True) -> np.ndarray:
    """Matrix ``sum_h (1/m_h) sum_j (x_hj - xbar_h)(x_hj - xbar_h)^T``."""
    x = design.full_matrix() if include_covariates else design.lags
    c = _masked_center(x, design.mask, design.sizes)
    c = c / np.sqrt(design.sizes)[:, None, None]
    flat = c.reshape(-1, c.shape[2])
    return flat.T @ flat


def sigma_bar_weighted(variances, weights) -> float:
    """Weighted mean ``sum w sigma^2 / sum w`` (e.g. expected-case weights).

    Population-times-rate weightings are passed in precomputed.
    """
    v = np.asarray(variances, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.shape != w.shape:
        raise DataError("variances and weights must have equal length")
    if np.any(w < 0):
        raise DataError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise DataError("weights are all zero")
    return float(np.dot(w, v) / total)


def summarize_variance(design: MatchedDesign, lag: int, weights=None) -> VarianceSummary:
    per = stratum_variances(design, lag)
    if weights is None:
        return VarianceSummary(float(per.mean()), per, "equal")
    return VarianceSummary(sigma_bar_weighted(per, weights), per, "expected-case")


def cumulative_exposure(rows, weights) -> np.ndarray:
    """Inner product of each lag row with the weight vector.

    ``rows`` may be ``(..., L + 1)``; the last axis is contracted.
    """
    x = np.asarray(rows, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape[-1] != w.size:
        raise DataError(
            f"weight length {w.size} does not match lag count {x.shape[-1]}"
        )
    return x @ w


@dataclass(frozen=True, eq=False)
class OlsFit:
    """Least-squares fit; ``coef[0]`` is the intercept when one was fitted."""

    coef: np.ndarray
    residuals: np.ndarray
    r2: float
    resid_var: float
    intercept: bool = True

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[1:] if self.intercept else self.coef


def ols_fit(y, X, intercept: bool = True, weights=None, rank_tol: float = 1e-10) -> OlsFit:
    """Least squares via pivoted QR.

    ``X`` holds the regressors only; the intercept column is prepended when
    ``intercept`` is true. A pivoted diagonal entry of R below
    ``rank_tol * max|diag R|`` raises :class:`SingularDesignError`.

    With ``intercept=False`` the R^2 is uncentred (appropriate after
    within-group demeaning, where the response already has mean zero).
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = y.size
    if X.shape[0] != n:
        raise DataError("y and X must have the same number of rows")
    if intercept:
        X = np.column_stack([np.ones(n), X])
    p = X.shape[1]
    if n < p:
        raise SingularDesignError(f"{n} rows cannot identify {p} coefficients")
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float).ravel())
        Xw, yw = X * sw[:, None], y * sw
    else:
        sw = None
        Xw, yw = X, y
    if p == 0:
        coef = np.zeros(0)
    else:
        Q, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag[0] == 0 or np.any(diag < rank_tol * diag[0]):
            raise SingularDesignError("regressor matrix is rank deficient")
        z = scipy.linalg.solve_triangular(R, Q.T @ yw)
        coef = np.empty(p)
        coef[piv] = z
    resid = y - X @ coef
    w = np.ones(n) if sw is None else sw**2
    ssr = float(np.dot(w, resid**2))
    if intercept:
        ybar = np.dot(w, y) / w.sum()
        sst = float(np.dot(w, (y - ybar) ** 2))
    else:
        sst = float(np.dot(w, y**2))
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    resid_var = ssr / (n - p) if n > p else float("nan")
    return OlsFit(coef, resid, float(min(max(r2, 0.0), 1.0)), resid_var, intercept)


def demean_by_group(a, groups) -> np.ndarray:
    """Subtract group means along axis 0 (fixed-effect absorption)."""
    a = np.asarray(a, dtype=float)
    g = np.asarray(groups)
    _, inv = np.unique(g, return_inverse=True)
    counts = np.bincount(inv).astype(float)
    flat = a.reshape(a.shape[0], -1)
    out = np.empty_like(flat)
    for k in range(flat.shape[1]):
        means = np.bincount(inv, weights=flat[:, k]) / counts
        out[:, k] = flat[:, k] - means[inv]
    return out.reshape(a.shape)


def partial_r2(design: MatchedDesign, column: int, others: Optional[Sequence[int]] = None) -> float:
    """R^2 of one design column on others, within strata.

    Columns index ``design.full_matrix()`` (lags, then covariates). Each
    member is weighted by ``1 / m_h``, so ``(1 - R^2) * sum_h sigma_h^2`` is
    exactly the Schur complement of the null information matrix, i.e. the
    information left for ``column`` after adjusting for ``others`` and the
    matched-set indicators.
    """
    full = design.full_matrix()
    p = full.shape[2]
    if not 0 <= column < p:
        raise DataError(f"column {column} out of range")
    if others is None:
        others = [k for k in range(p) if k != column]
    return r2_from_information(null_information_matrix(design), column, others)


def r2_from_information(info, column: int, others: Sequence[int]) -> float:
    """Partial R^2 read off a null information (weighted cross-product) matrix."""
    others = list(others)
    if not others:
        return 0.0
    a = info[column, column]
    if a <= 0:
        raise NumericalError("target column has no within-stratum variation")
    b = info[np.ix_(others, [column])]
    C = info[np.ix_(others, others)]
    try:
        explained = float((b.T @ np.linalg.solve(C, b))[0, 0])
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("adjustment columns are collinear") from exc
    return min(max(explained / a, 0.0), 1.0)


def sigma_bar_multiplicative(log_ep_variances, mean_x: float, gamma_m1: float, r2_log: float) -> float:
    """Average variance of ``x ** gamma_m1`` from log-scale stratum variances.

    Delta-method route: ``mean(sigma_h^2(log x_ep)) * E[x]^(2 gamma_m1) * R^2``
    where ``R^2`` is from the regression of ``log x_ep`` on ``log x``.
    """
    if mean_x <= 0:
        raise DataError("mean_x must be positive")
    if gamma_m1 <= 0:
        raise DataError("gamma_m1 must be positive")
    if not 0 < r2_log <= 1:
        raise DataError("r2_log must lie in (0, 1]")
    v = np.asarray(log_ep_variances, dtype=float)
    return float(v.mean() * mean_x ** (2.0 * gamma_m1) * r2_log)


def delta_var_power(mean_x: float, var_x: float, gamma: float) -> float:
    """First-order ``V(x ** gamma) ~ gamma^2 E[x]^(2(gamma-1)) V(x)``."""
    return gamma**2 * mean_x ** (2.0 * (gamma - 1.0)) * var_x


def sigma_bar_factor_c(sigma_bar_ep: float, c: float) -> float:
    """Scale an error-prone variance by a sensitivity factor ``c``."""
    if c <= 0:
        raise DataError("c must be positive")
    return sigma_bar_ep * c


def resample_sigma_bar(
    panel: ExposurePanel,
    controls_per_case: int,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """Average stratum variance of randomly assembled matched sets.

    Each draw picks one time and ``controls_per_case + 1`` distinct units at
    that time, mimicking a design where the case's location is unknown
    before recruitment.
    """
    v = panel.values
    n_units, n_times = v.shape
    m = controls_per_case + 1
    if m > n_units:
        raise DataError(f"{m}-member sets need at least {m} units")
    t = rng.integers(0, n_times, size=draws)
    # argsort of uniforms gives distinct units per draw
    units = np.argsort(rng.random((draws, n_units)), axis=1)[:, :m]
    x = v[units, t[:, None]]
    return float(np.mean(np.var(x, axis=1)))
