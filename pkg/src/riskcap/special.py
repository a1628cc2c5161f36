"""Normal-tail special functions: quantiles, Mills ratio, tail ratios."""

from __future__ import annotations

import math

import numpy as np
from scipy import special as sc

from .errors import DomainError

_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the inverse normal CDF (|rel err| < 1.2e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x):
    """Standard normal CDF, accurate in the lower tail."""
    return 0.5 * sc.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def normal_tail(y):
    """Upper tail ``P(Z > y)``."""
    return 0.5 * sc.erfc(np.asarray(y, dtype=float) / _SQRT2)


def _lower_half_ppf(p: np.ndarray) -> np.ndarray:
    """Inverse CDF for ``0 < p <= 0.5`` (rational guess + one Newton step)."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    if tail.any():
        q = np.sqrt(-2.0 * np.log(p[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    mid = ~tail
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    # Newton polish against the erfc-based CDF; the residual is relative to p
    # so deep-tail quantiles keep full precision.
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return x - (normal_cdf(x) - p) / pdf


def norm_ppf(p):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise DomainError("probability must lie in (0, 1)")
    flat = np.atleast_1d(arr).ravel()
    out = np.empty_like(flat)
    low = flat <= 0.5
    out[low] = _lower_half_ppf(flat[low])
    # 1 - p is exact for p >= 1/2.
    out[~low] = -_lower_half_ppf(1.0 - flat[~low])
    out = out.reshape(np.shape(arr))
    return float(out) if out.ndim == 0 else out


def normal_quantile(alpha: float) -> float:
    """Lower alpha-quantile of N(0, 1); negative for ``0 < alpha < 1/2``."""
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 1/2), got {alpha}")
    return float(norm_ppf(alpha))


def mills_ratio(y):
    """``exp(y^2/2) * int_y^inf exp(-s^2/2) ds`` for ``y >= 0``.

    Evaluated through the scaled complementary error function, so no
    overflowing ``exp(y^2/2)`` factor is ever formed.
    """
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise DomainError("mills_ratio is defined here for y >= 0")
    out = _SQRT_HALF_PI * sc.erfcx(arr / _SQRT2)
    return float(out) if out.ndim == 0 else out


def log_F_alpha(z, q_abs: float):
    """``ln F_alpha(z)``: log of the normal-tail ratio ``tail(z) / tail(|q_alpha|)``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < q_abs):
        raise DomainError("F_alpha is only used for z >= |q_alpha|")
    out = (np.log(mills_ratio(z)) - math.log(mills_ratio(q_abs))
           - 0.5 * (z - q_abs) * (z + q_abs))
    return float(out) if out.ndim == 0 else out


def F_alpha(z, alpha: float):
    """Tail ratio ``tail(z) / tail(|q_alpha|)``; equals 1 at ``z = |q_alpha|``."""
    q_abs = -normal_quantile(alpha)
    out = np.exp(log_F_alpha(z, q_abs))
    return float(out) if np.ndim(out) == 0 else out


def iota(u, q_abs: float):
    """``1 / mills_ratio(u + |q|) - u``; never below ``|q|``."""
    u = np.asarray(u, dtype=float)
    out = 1.0 / (_SQRT_HALF_PI * sc.erfcx((u + q_abs) / _SQRT2)) - u
    return float(out) if out.ndim == 0 else out


def iota_alpha(u, alpha: float):
    if np.any(np.asarray(u) < 0):
        raise DomainError("iota_alpha requires u >= 0")
    return iota(u, -normal_quantile(alpha))
