"""Standard errors, sample sizes and power for Wald tests in matched designs.

Every calculator takes one scalar effect, one average exposure variance and
one deflation R^2, so lag-specific, cumulative and error-adjusted questions
share the same code path. Bias composition happens upstream in
:mod:`powerlag.bias`; pass the already-biased effect here.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.stats import norm

from .exceptions import ConfigError, DataError, NumericalError
from .types import TestSpec

__all__ = [
    "SampleSizeResult",
    "critical_values",
    "se_approx",
    "se_multiplicative",
    "vcf",
    "sample_size",
    "sample_size_iterative",
    "power_at",
    "power_curve",
    "design_modifier",
]


def critical_values(test: TestSpec) -> tuple:
    """``(z_{1 - alpha(/2)}, z_{1 - beta})``."""
    return float(norm.isf(test.tail_alpha)), float(norm.ppf(test.power_target))


def _check_common(sigma_bar_sq, deflation_r2):
    if not sigma_bar_sq > 0:
        raise NumericalError("sigma_bar_sq must be > 0")
    if not 0.0 <= deflation_r2 < 1.0:
        raise ConfigError("deflation_r2 must be < 1")


def se_approx(n, sigma_bar_sq: float, deflation_r2: float = 0.0) -> float:
    """``1 / sqrt(n * sigma_bar_sq * (1 - R^2))``."""
    _check_common(sigma_bar_sq, deflation_r2)
    if n < 1:
        raise DataError("n must be >= 1")
    return 1.0 / math.sqrt(n * sigma_bar_sq * (1.0 - deflation_r2))


def _ab(n, sigma_bar_ml, sigma_bar_errfactor, deflation_r2):
    if not (sigma_bar_ml > 0 and sigma_bar_errfactor > 0):
        raise NumericalError("both variances must be > 0")
    if not 0.0 <= deflation_r2 < 1.0:
        raise ConfigError("deflation_r2 must be < 1")
    a = 1.0 / (n * sigma_bar_ml * (1.0 - deflation_r2))
    b = 1.0 / (n * sigma_bar_errfactor * (1.0 - deflation_r2))
    return a, b


def se_multiplicative(
    n,
    sigma_bar_ml: float,
    sigma_bar_errfactor: float,
    theta_ml: float,
    deflation_r2: float = 0.0,
) -> float:
    """SE under multiplicative error: ``sqrt(A + theta^2 B)``.

    ``A`` is the usual information term for the power-transformed truth and
    ``B`` the same form built from the variance of the multiplicative error
    factor.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    a, b = _ab(n, sigma_bar_ml, sigma_bar_errfactor, deflation_r2)
    return math.sqrt(a + theta_ml**2 * b)


def vcf(sigma_bar_ml: float, sigma_bar_errfactor: float, theta_ml: float) -> float:
    """Variance correction factor ``A / (A + theta^2 B)``; lies in (0, 1]."""
    a, b = _ab(1, sigma_bar_ml, sigma_bar_errfactor, 0.0)
    return a / (a + theta_ml**2 * b)


@dataclass(frozen=True)
class SampleSizeResult:
    """Required number of cases (matched sets) and the inputs behind it."""

    n: int
    effective_effect: float
    sigma_bar_sq: float
    deflation_r2: float
    vcf: float
    achieved_power: float
    n_unrounded: float
    modifier: float = 1.0
    trace: tuple = field(default_factory=tuple)


def _n_raw(effect, sigma_bar_sq, deflation_r2, test, vcf_value, modifier):
    if effect == 0:
        raise NumericalError("zero effect needs an infinite sample")
    _check_common(sigma_bar_sq, deflation_r2)
    if not 0.0 < vcf_value <= 1.0:
        raise ConfigError("vcf must lie in (0, 1]")
    if not modifier > 0:
        raise ConfigError("modifier must be > 0")
    za, zb = critical_values(test)
    return modifier * (za + zb) ** 2 / (
        effect**2 * sigma_bar_sq * (1.0 - deflation_r2) * vcf_value
    )


def _ceil(x: float) -> int:
    # guard against 784.9999999999 style round-off producing an extra case
    r = round(x)
    if abs(x - r) <= max(1e-9, 8.0 * sys.float_info.epsilon * abs(x)):
        return max(1, int(r))
    return max(1, math.ceil(x))


def power_at(
    n,
    effective_effect: float,
    sigma_bar_sq: float,
    deflation_r2: float,
    test: TestSpec,
    vcf: float = 1.0,
    modifier: float = 1.0,
) -> float:
    """Approximate power ``Phi(|theta| sqrt(n s2 (1 - R^2) VCF / m) - z)``.

    Only the tail in the direction of the effect is counted, so ``theta = 0``
    returns the one-tail size (0.025 for a two-sided 5% test).
    """
    _check_common(sigma_bar_sq, deflation_r2)
    za, _ = critical_values(test)
    info = n * sigma_bar_sq * (1.0 - deflation_r2) * vcf / modifier
    p = norm.cdf(abs(effective_effect) * math.sqrt(info) - za)
    return float(min(max(p, 0.0), 1.0))


def sample_size(
    effective_effect: float,
    sigma_bar_sq: float,
    deflation_r2: float,
    test: TestSpec,
    vcf: float = 1.0,
    modifier: float = 1.0,
) -> SampleSizeResult:
    """Cases needed for the target power, rounded up.

    ``modifier`` multiplies the matched-design answer; see
    :func:`design_modifier`.
    """
    raw = _n_raw(effective_effect, sigma_bar_sq, deflation_r2, test, vcf, modifier)
    n = _ceil(raw)
    achieved = power_at(n, effective_effect, sigma_bar_sq, deflation_r2, test, vcf, modifier)
    return SampleSizeResult(
        n=n,
        effective_effect=float(effective_effect),
        sigma_bar_sq=float(sigma_bar_sq),
        deflation_r2=float(deflation_r2),
        vcf=float(vcf),
        achieved_power=achieved,
        n_unrounded=raw,
        modifier=float(modifier),
        trace=((n, float(sigma_bar_sq), raw),),
    )


def sample_size_iterative(
    variance_source: Iterable[float],
    effective_effect: float,
    deflation_r2: float,
    test: TestSpec,
    k0: int = 30,
    vcf: float = 1.0,
    max_iter: int = 100,
) -> SampleSizeResult:
    """Fixed-point sample size when the average variance depends on n.

    The stream supplies stratum variances in recruitment order. The first
    ``k0`` give a starting average; each step then averages over the first
    ``N`` strata, where ``N`` is the largest n requested so far (the pool of
    already-recruited strata never shrinks). Iteration stops when n repeats;
    a 2-cycle resolves to its larger member.

    Raises :class:`DataError` if the stream runs out first.
    """
    it = iter(variance_source)
    pool: list = []

    def fill(k):
        while len(pool) < k:
            try:
                pool.append(float(next(it)))
            except StopIteration:
                raise DataError(
                    f"variance stream exhausted after {len(pool)} strata; {k} needed"
                ) from None

    fill(k0)
    size = k0
    s2 = math.fsum(pool[:size]) / size
    trace = []
    history = []
    for _ in range(max_iter):
        raw = _n_raw(effective_effect, s2, deflation_r2, test, vcf, 1.0)
        n = _ceil(raw)
        trace.append((n, s2, raw))
        if history and n == history[-1]:
            break
        if len(history) >= 2 and n == history[-2]:
            n = max(n, history[-1])
            break
        history.append(n)
        if n > size:
            fill(n)
            size = n
            s2 = math.fsum(pool[:size]) / size
    else:
        raise NumericalError("sample-size iteration did not settle")
    achieved = power_at(n, effective_effect, s2, deflation_r2, test, vcf)
    return SampleSizeResult(
        n=n,
        effective_effect=float(effective_effect),
        sigma_bar_sq=s2,
        deflation_r2=float(deflation_r2),
        vcf=float(vcf),
        achieved_power=achieved,
        n_unrounded=trace[-1][2],
        trace=tuple(trace),
    )


def power_curve(
    n_grid,
    effective_effect: float,
    sigma_bar_sq: float,
    deflation_r2: float,
    test: TestSpec,
    vcf: float = 1.0,
) -> np.ndarray:
    """Vectorised :func:`power_at` over ``n_grid``."""
    _check_common(sigma_bar_sq, deflation_r2)
    n = np.asarray(n_grid, dtype=float)
    za, _ = critical_values(test)
    info = n * sigma_bar_sq * (1.0 - deflation_r2) * vcf
    return np.clip(norm.cdf(abs(effective_effect) * np.sqrt(info) - za), 0.0, 1.0)


def design_modifier(
    kind: str,
    incidence: Optional[float] = None,
    sigma_y2: Optional[float] = None,
) -> float:
    """Multiplier on the matched conditional-logistic n for other designs.

    ``unconditional-logistic`` divides the information by
    ``incidence * (1 - incidence)``; ``linear-continuous`` scales the
    numerator by the outcome variance.
    """
    if kind == "matched-clr":
        return 1.0
    if kind == "unconditional-logistic":
        if incidence is None or not 0.0 < incidence < 1.0:
            raise ConfigError("incidence must lie strictly inside (0, 1)")
        return 1.0 / (incidence * (1.0 - incidence))
    if kind == "linear-continuous":
        if sigma_y2 is None or not sigma_y2 > 0:
            raise ConfigError("linear outcome needs sigma_y2 > 0")
        return float(sigma_y2)
    raise ConfigError(f"unknown design kind {kind!r}")
