"""Scalar statistical routines: Gaussian CDF/quantile and exact binomial bounds.

The quantile function uses a rational approximation refined by one Halley
step, giving |Phi(result) - p| well below 1e-9 over the full open interval.
The Clopper-Pearson bound is found by bisection on an exact log-space
binomial tail sum, which is straightforward to verify against a direct
summation oracle.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation for the lower tail of the normal quantile.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate into both tails."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _acklam_lower(p: float) -> float:
    # p in (0, 0.5]; raw approximation, relative error ~1.15e-9.
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def std_normal_inv_cdf(p: float) -> float:
    """Inverse of the standard normal CDF on the open interval (0, 1).

    Antisymmetric by construction: for p >= 0.5 the value is computed as
    -inv(1 - p), and 1 - p is exact in floating point there, so
    inv(1 - p) == -inv(p) holds bitwise for mirrored arguments.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -std_normal_inv_cdf(1.0 - p)
    x = _acklam_lower(p)
    # One Halley refinement; skipped only where exp(x^2/2) would overflow,
    # in which case the raw approximation is already far below any tolerance.
    if x * x < 1400.0:
        e = 0.5 * math.erfc(-x / _SQRT2) - p
        u = e * _SQRT_2PI * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


# Log-factorial table, grown on demand; entry i holds lgamma(i + 1).
_LOGFACT = np.zeros(1)


def _logfact(n: int) -> np.ndarray:
    global _LOGFACT
    if n >= _LOGFACT.shape[0]:
        hi = max(n + 1, 2 * _LOGFACT.shape[0])
        tail = np.array([math.lgamma(i + 1.0) for i in range(_LOGFACT.shape[0], hi)])
        _LOGFACT = np.concatenate([_LOGFACT, tail])
    return _LOGFACT


def binom_upper_tail(k: int, n: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(n, p), by exact log-space summation."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    lf = _logfact(n)
    i = np.arange(k, n + 1)
    log_terms = (lf[n] - lf[i] - lf[n - i]
                 + i * math.log(p) + (n - i) * math.log1p(-p))
    m = log_terms.max()
    return float(math.exp(m) * np.exp(log_terms - m).sum())


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """Exact one-sided lower confidence bound on a binomial proportion.

    Returns the p solving P(Binomial(n, p) >= k) = alpha, i.e. the largest
    success probability still consistent with observing k or more successes
    at significance alpha.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, n={n}], got {k}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly in (0, 1), got {alpha!r}")
    if k == 0:
        return 0.0
    if k == n:
        return math.exp(math.log(alpha) / n)
    lo, hi = 0.0, 1.0
    # The tail probability is increasing in p; bisect to below fp resolution.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if binom_upper_tail(k, n, mid) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15:
            break
    return 0.5 * (lo + hi)


def binom_two_sided_pvalue(k: int, n: int) -> float:
    """Two-sided exact binomial test p-value against p = 1/2."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, n={n}], got {k}")
    hi = max(k, n - k)
    if hi == n - hi:
        return 1.0
    # Bin(n, 1/2) is symmetric, so both tails carry equal mass.
    return min(1.0, 2.0 * binom_upper_tail(hi, n, 0.5))
