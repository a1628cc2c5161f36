"""Bracketing root finders and a scan-plus-golden-section maximizer."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import NumericalError

_EPS = np.finfo(float).eps
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def bisect_decreasing(f: Callable[[np.ndarray, np.ndarray], np.ndarray], lo, hi, target=0.0,
                      xtol: float = 1e-30, rtol: float = 2 * _EPS, max_iter: int = 400) -> np.ndarray:
    """Lockstep bisection for ``f(x) = target`` with ``f`` decreasing in ``x``.

    ``f(x, active)`` receives the midpoints of the still-active entries and
    the boolean mask selecting them, so per-entry parameters can be looked
    up. Requires ``f(lo) >= target >= f(hi)``. Entries are refined until the
    bracket is narrower than ``max(rtol * |x|, xtol)`` (by default a few ulps).
    """
    lo, hi = (np.array(v, dtype=float) for v in np.broadcast_arrays(lo, hi))
    target = np.broadcast_to(np.asarray(target, dtype=float), lo.shape)
    active = np.ones(lo.shape, dtype=bool)
    for _ in range(max_iter):
        active &= hi - lo > np.maximum(rtol * np.maximum(np.abs(lo), np.abs(hi)), xtol)
        if not active.any():
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo[active] + hi[active])
        above = f(mid, active) >= target[active]
        lo[active] = np.where(above, mid, lo[active])
        hi[active] = np.where(above, hi[active], mid)
    raise NumericalError("bisection did not converge", (float(lo.flat[0]), float(hi.flat[0])))


def brent_root(f: Callable[[float], float], lo: float, hi: float) -> float:
    """Scalar root on a sign-change bracket, refined to machine precision."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise NumericalError("root not bracketed", (lo, hi, flo, fhi))
    return scipy.optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * _EPS, maxiter=500)


def golden_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
               max_iter: int = 200) -> tuple[float, float]:
    """Golden-section search for a maximum of ``f`` on ``[a, b]``.

    Returns the best point seen, including the endpoints, so a maximum on
    the boundary is found as well.
    """
    fa, fb = f(a), f(b)
    best = (a, fa) if fa >= fb else (b, fb)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    for x, fx in ((c, fc), (d, fd)):
        if fx > best[1]:
            best = (x, fx)
    return best


def scan_then_golden(f_vec: Callable[[np.ndarray], np.ndarray], f: Callable[[float], float],
                     lo: float, hi: float, n_scan: int = 512, tol: float = 1e-10) -> tuple[float, float]:
    """Maximize on ``[lo, hi]``: dense scan, then golden refinement.

    The scan guards against non-unimodal objectives; the refinement runs on
    the bracket formed by the best scan point and its neighbours.
    """
    xs = np.linspace(lo, hi, n_scan)
    vals = f_vec(xs)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("objective is not finite on the scan grid", (float(np.nanmin(vals)),))
    i = int(np.argmax(vals))
    a = xs[max(i - 1, 0)]
    b = xs[min(i + 1, n_scan - 1)]
    x, fx = golden_max(f, float(a), float(b), tol)
    if vals[i] > fx:
        return float(xs[i]), float(vals[i])
    return x, fx
