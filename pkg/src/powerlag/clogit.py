"""Conditional logistic regression for 1:(m-1) matched sets.

The likelihood is the exact conditional likelihood of one case per stratum.
Newton-Raphson uses the observed information, which is also what the
reported covariance inverts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import norm

from .exceptions import ConvergenceError, DataError, SingularDesignError
from .types import MatchedDesign

__all__ = [
    "ClogitFit",
    "WaldResult",
    "clogit_loglik",
    "clogit_score",
    "clogit_information",
    "clogit_fit",
    "wald_test",
]

SEPARATION_BOUND = 50.0
MAX_HALVINGS = 30
STEP_TOL = 1e-6


def _prepared(design: MatchedDesign):
    """Design matrix centred within strata (padding stays zero)."""
    x = design.full_matrix()
    mask = design.mask
    mean = x.sum(axis=1, keepdims=True) / design.sizes[:, None, None]
    xc = np.where(mask[..., None], x - mean, 0.0)
    return xc, mask


def _eval(x, mask, theta, want_info=True):
    eta = x @ theta
    eta = np.where(mask, eta, -np.inf)
    top = eta.max(axis=1, keepdims=True)
    e = np.exp(eta - top)
    tot = e.sum(axis=1, keepdims=True)
    ll = float(np.sum(eta[:, 0] - top[:, 0] - np.log(tot[:, 0])))
    w = e / tot
    xbar = np.einsum("hj,hjp->hp", w, x)
    score = (x[:, 0, :] - xbar).sum(axis=0)
    if not want_info:
        return ll, score, None
    d = (x - xbar[:, None, :]) * np.sqrt(w)[..., None]
    flat = d.reshape(-1, d.shape[2])
    return ll, score, flat.T @ flat


def _theta(theta, p):
    th = np.zeros(p) if theta is None else np.asarray(theta, dtype=float).ravel()
    if th.size != p:
        raise DataError(f"theta has {th.size} entries, design has {p} columns")
    return th


def clogit_loglik(theta, design: MatchedDesign) -> float:
    """``sum_h [theta . x_h0 - log sum_j exp(theta . x_hj)]``."""
    x, mask = _prepared(design)
    return _eval(x, mask, _theta(theta, x.shape[2]), want_info=False)[0]


def clogit_score(theta, design: MatchedDesign) -> np.ndarray:
    x, mask = _prepared(design)
    return _eval(x, mask, _theta(theta, x.shape[2]), want_info=False)[1]


def clogit_information(theta, design: MatchedDesign) -> np.ndarray:
    """Observed information ``sum_h Cov_w(x_h)`` with ``w ~ exp(theta x)``."""
    x, mask = _prepared(design)
    return _eval(x, mask, _theta(theta, x.shape[2]))[2]


@dataclass(frozen=True, eq=False)
class ClogitFit:
    theta_hat: np.ndarray
    cov: Optional[np.ndarray]
    loglik: float
    iterations: int
    status: str
    score: np.ndarray

    @property
    def se(self) -> np.ndarray:
        if self.cov is None:
            return np.full(self.theta_hat.shape, np.nan)
        return np.sqrt(np.diag(self.cov))

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def clogit_fit(
    design: MatchedDesign,
    start=None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> ClogitFit:
    """Maximise the conditional likelihood by Newton-Raphson.

    Steps are halved (up to 30 times) whenever the log-likelihood would
    drop. Convergence requires ``max|score| <= tol * (1 + |loglik|)`` and a
    Newton step below ``1e-6 * (1 + max|theta|)``. A
    coefficient leaving ``[-50, 50]`` while the likelihood still rises is
    reported as ``status="separated"``.

    Raises :class:`SingularDesignError` if the information is singular at
    the start (a column with no within-stratum variation, or collinearity).
    """
    x, mask = _prepared(design)
    p = x.shape[2]
    th = _theta(start, p)
    ll, U, info = _eval(x, mask, th)
    try:
        cf = cho_factor(info)
    except LinAlgError:
        raise SingularDesignError("information matrix is not positive definite") from None
    status = "max-iter"
    it = 0
    for it in range(1, max_iter + 1):
        step = cho_solve(cf, U)
        # under separation the score vanishes but the Newton step does not
        if np.max(np.abs(U)) <= tol * (1.0 + abs(ll)) and np.max(np.abs(step)) <= STEP_TOL * (
            1.0 + np.max(np.abs(th))
        ):
            status = "converged"
            it -= 1
            break
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = th + step
            ll_c, U_c, info_c = _eval(x, mask, cand)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * (1.0 + abs(ll)):
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            raise ConvergenceError("step halving failed to increase the likelihood")
        rising = ll_c > ll
        th, ll, U = cand, ll_c, U_c
        if np.max(np.abs(th)) > SEPARATION_BOUND and rising:
            status = "separated"
            break
        try:
            cf = cho_factor(info_c)
        except LinAlgError:
            status = "separated"
            break
        info = info_c
    if status == "converged":
        cov = cho_solve(cf, np.eye(p))
        cov = (cov + cov.T) / 2.0
    else:
        cov = None
    return ClogitFit(th, cov, ll, it, status, U)


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    p_value: float
    reject: bool


def wald_test(fit: ClogitFit, contrast, alpha: float = 0.05, sided: str = "two-sided") -> WaldResult:
    """Wald z test of ``contrast . theta = 0``.

    One-sided tests reject for large positive ``z``.
    """
    if not fit.converged:
        raise ConvergenceError(f"cannot test a fit with status {fit.status!r}")
    c = np.asarray(contrast, dtype=float).ravel()
    if c.size < fit.theta_hat.size:
        c = np.concatenate([c, np.zeros(fit.theta_hat.size - c.size)])
    if c.size != fit.theta_hat.size:
        raise DataError("contrast length does not match the fit")
    est = float(c @ fit.theta_hat)
    var = float(c @ fit.cov @ c)
    if not var > 0:
        raise DataError("contrast has zero variance")
    z = est / np.sqrt(var)
    if sided == "two-sided":
        pv = float(2.0 * norm.sf(abs(z)))
    elif sided == "one-sided":
        pv = float(norm.sf(z))
    else:
        raise DataError("sided must be 'one-sided' or 'two-sided'")
    return WaldResult(float(z), pv, bool(pv < alpha))
