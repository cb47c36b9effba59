"""Confidence intervals and p-values.

Analytic standard errors use the normal reference. A bucketed jackknife
variance built from B buckets carries about B - 1 degrees of freedom, so
its intervals use Student's t with ``df = B - 1``; with B = 20 the normal
quantile would under-cover by roughly 1.5 points.
"""

from __future__ import annotations

import math

from scipy.special import stdtr, stdtrit

__all__ = ["normal_cdf", "normal_quantile", "critical_value", "confidence_interval", "p_value"]

# Acklam's rational approximation to the inverse normal CDF (relative error
# 1.15e-9), followed by one Halley step against erfc, which brings the
# result to full double precision.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    # Halley refinement
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def critical_value(alpha: float = 0.05, df: float | None = None) -> float:
    """Two-sided ``1 - alpha`` quantile: normal, or Student's t when ``df`` is given."""
    if df is None or math.isinf(df):
        return normal_quantile(1.0 - alpha / 2.0)
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return float(stdtrit(df, 1.0 - alpha / 2.0))


def confidence_interval(
    point: float, se: float, alpha: float = 0.05, df: float | None = None
) -> tuple[float, float]:
    """Two-sided ``1 - alpha`` interval ``point +/- q * se``."""
    if se < 0:
        raise ValueError("standard error must be nonnegative")
    half = critical_value(alpha, df) * se
    return point - half, point + half


def p_value(point: float, se: float, df: float | None = None) -> float:
    """Two-sided p-value of ``point / se`` (normal null, or t with ``df``).

    With ``se == 0`` the p-value is 1 for a zero point and 0 otherwise.
    """
    if se < 0:
        raise ValueError("standard error must be nonnegative")
    if se == 0:
        return 1.0 if point == 0 else 0.0
    z = abs(point / se)
    if df is None or math.isinf(df):
        return math.erfc(z / math.sqrt(2.0))
    return float(min(1.0, 2.0 * stdtr(df, -z)))
