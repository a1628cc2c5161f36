"""Deterministic controls and the cost / constraint functionals over them.

A control is a pair of functions of time: the investment ``y_t`` (a
d-vector, ``y = sigma' pi``) and the consumption rate ``v_t >= 0``. Every
functional is an integral over ``[0, T]`` of pointwise expressions, taken
by composite 16-point Gauss-Legendre on the control grid merged with the
coefficient breakpoints.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AdmissibilityError, DomainError, ModelError
from .market import MarketModel, cell_rule, cumulative_integral
from .special import log_F_alpha, normal_quantile

_ORDER = 16

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _as_matrix(vals, n: int, d: int) -> np.ndarray:
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1 and d == 1 and vals.shape[0] == n:
        vals = vals[:, None]
    return np.broadcast_to(vals, (n, d))


@dataclass(frozen=True, eq=False)
class DeterministicControl:
    """Investment ``y`` and consumption rate ``v`` on ``[0, T]``.

    ``y(t)`` maps an array of times of shape ``(n,)`` to ``(n, d)``; ``v(t)``
    maps to ``(n,)``. ``V`` optionally supplies the cumulative consumption in
    closed form; otherwise it is integrated from ``v``.
    """

    y: ArrayFn
    v: ArrayFn
    grid: np.ndarray
    d: int = 1
    V: ArrayFn | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
            raise DomainError("control grid must be strictly increasing and start at 0")
        object.__setattr__(self, "grid", g)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def y_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return _as_matrix(self.y(t), t.size, self.d)

    def v_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.broadcast_to(np.asarray(self.v(t), dtype=float), t.shape)

    def V_at(self, t) -> np.ndarray:
        """Cumulative consumption ``V_t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.V is not None:
            return np.broadcast_to(np.asarray(self.V(t), dtype=float), t.shape)
        return cumulative_integral(self.v_at, self.grid, t)

    def validate(self, require_positive_rate: bool = True) -> None:
        """Check square integrability of ``y`` and positivity of ``v``.

        ``ln v`` must be integrable for the cost to be finite, so a rate that
        vanishes anywhere on the quadrature nodes is rejected.
        """
        nodes, _, _ = cell_rule(self.grid, _ORDER)
        y = self.y_at(nodes)
        v = self.v_at(nodes)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
            raise AdmissibilityError("control has non-finite values")
        if np.any(v < 0):
            raise AdmissibilityError("consumption rate must be nonnegative")
        if require_positive_rate and np.any(v <= 0):
            raise AdmissibilityError("consumption rate vanishes on a grid cell; ln v is not integrable")

    # -- constructors ---------------------------------------------------------

    @classmethod
    def riskless(cls, m: MarketModel, v: ArrayFn | float = 0.0, V: ArrayFn | None = None,
                 grid=None) -> "DeterministicControl":
        grid = m.default_grid() if grid is None else grid
        vf = v if callable(v) else (lambda t, c=float(v): np.full(np.shape(t), c))
        if V is None and not callable(v):
            V = lambda t, c=float(v): c * np.asarray(t, dtype=float)  # noqa: E731
        return cls(y=lambda t: np.zeros((np.size(t), m.d)), v=vf, grid=grid, d=m.d, V=V)

    @classmethod
    def unconstrained(cls, m: MarketModel, grid=None) -> "DeterministicControl":
        """Merton strategy ``y = theta`` with consumption rate ``1/omega``."""
        T = m.T
        return cls(
            y=m.theta_at,
            v=lambda t: 1.0 / (T + 1.0 - np.asarray(t, dtype=float)),
            grid=m.default_grid() if grid is None else grid,
            d=m.d,
            V=lambda t: np.log((T + 1.0) / (T + 1.0 - np.asarray(t, dtype=float))),
        )

    @classmethod
    def weighted(cls, m: MarketModel, weight: ArrayFn, kappa: float, grid=None) -> "DeterministicControl":
        """``y_t = theta_t * weight(t)`` with the consumption rate of parameter ``kappa``."""
        T = m.T

        def y(t):
            return m.theta_at(t) * np.asarray(weight(t), dtype=float)[:, None]

        return cls(
            y=y,
            v=lambda t: consumption_rate_kappa(kappa, T, t),
            grid=m.default_grid() if grid is None else grid,
            d=m.d,
            V=lambda t: kappa_cumulative(kappa, T, t),
        )

    @classmethod
    def scaled_theta(cls, m: MarketModel, scale: float, kappa: float, grid=None) -> "DeterministicControl":
        return cls.weighted(m, lambda t: np.full(np.shape(t), float(scale)), kappa, grid)

    @classmethod
    def piecewise_constant(cls, grid, y_values, v_values) -> "DeterministicControl":
        """Control constant on each cell ``[grid[i], grid[i+1])``."""
        grid = np.asarray(grid, dtype=float)
        yv = np.atleast_2d(np.asarray(y_values, dtype=float))
        if yv.shape[0] != grid.size - 1 and yv.shape[1] == grid.size - 1:
            yv = yv.T
        vv = np.asarray(v_values, dtype=float)
        if yv.shape[0] != grid.size - 1 or vv.shape != (grid.size - 1,):
            raise DomainError("need one y row and one v value per grid cell")
        inner = grid[1:-1]

        def idx(t):
            return np.searchsorted(inner, np.asarray(t, dtype=float), side="right")

        return cls(y=lambda t: yv[idx(t)], v=lambda t: vv[idx(t)], grid=grid, d=yv.shape[1])


# -- cumulative quantities ------------------------------------------------------


def cumulative_consumption(c: DeterministicControl, t):
    """``V_t``, the integral of the consumption rate over ``[0, t]``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > c.T * (1 + 1e-14)):
        raise DomainError(f"time outside [0, {c.T}]")
    out = c.V_at(t_arr)
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def _edges(c: DeterministicControl, m: MarketModel) -> np.ndarray:
    if not math.isclose(c.T, m.T, rel_tol=1e-12):
        raise DomainError(f"control horizon {c.T} differs from market horizon {m.T}")
    g = np.union1d(c.grid, m.breakpoints)
    g[-1] = m.T
    return g


def control_moments(c: DeterministicControl, m: MarketModel, t) -> dict[str, np.ndarray]:
    """Running ``(y, theta)_t``, ``||y||_t^2``, ``V_t`` and ``R_t`` at the times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    edges = _edges(c, m)

    def integrand(s):
        y = c.y_at(s)
        out = np.empty((s.size, 2))
        out[:, 0] = np.einsum("ij,ij->i", y, m.theta_at(s))
        out[:, 1] = np.einsum("ij,ij->i", y, y)
        return out

    run = cumulative_integral(integrand, edges, t)
    return {
        "y_theta": run[:, 0],
        "y_sq": np.maximum(run[:, 1], 0.0),
        "V": c.V_at(t),
        "R": m.discount_R(t),
    }


def _integrate_nodes(c: DeterministicControl | None, m: MarketModel, f, grid=None) -> float:
    """``int_0^T f(t) dt`` where ``f`` receives the quadrature nodes."""
    edges = _edges(c, m) if c is not None else (m.default_grid() if grid is None else grid)
    nodes, weights, _ = cell_rule(edges, _ORDER)
    return float(weights @ f(nodes))


def _y_of(y) -> ArrayFn:
    if isinstance(y, DeterministicControl):
        return y.y_at
    return y


def inner_theta(y, m: MarketModel, grid=None) -> float:
    """``(y, theta)_T``."""
    yf = _y_of(y)
    c = y if isinstance(y, DeterministicControl) else None
    return _integrate_nodes(c, m, lambda s: np.einsum("ij,ij->i", _as_matrix(yf(s), s.size, m.d),
                                                        m.theta_at(s)), grid)


def norm_sq(y, m: MarketModel, grid=None) -> float:
    """``||y||_T^2``."""
    yf = _y_of(y)
    c = y if isinstance(y, DeterministicControl) else None

    def f(s):
        v = _as_matrix(yf(s), s.size, m.d)
        return np.einsum("ij,ij->i", v, v)

    return _integrate_nodes(c, m, f, grid)


# -- cost ------------------------------------------------------------------------


@dataclass(frozen=True)
class CostBreakdown:
    J: float
    base: float
    rate_term: float
    consumption_term: float


def cost_J(x: float, c: DeterministicControl, m: MarketModel) -> CostBreakdown:
    """Expected log utility of consumption plus terminal log wealth.

    The consumption part ``int (ln v - V) dt - V_T`` is evaluated as
    ``int (ln v_t - omega(t) v_t) dt``, using ``int_0^T V = int_0^T (T-t) v``.
    """
    if not x > 0:
        raise DomainError(f"initial wealth must be positive, got {x}")
    c.validate()
    T = m.T

    def rate(s):
        y = c.y_at(s)
        th = m.theta_at(s)
        inst = m.rate_at(s) + np.einsum("ij,ij->i", y, th) - 0.5 * np.einsum("ij,ij->i", y, y)
        return (T + 1.0 - s) * inst

    def consumption(s):
        v = c.v_at(s)
        return np.log(v) - (T + 1.0 - s) * v

    base = (T + 1.0) * math.log(x)
    rate_term = _integrate_nodes(c, m, rate)
    cons_term = _integrate_nodes(c, m, consumption)
    return CostBreakdown(J=base + rate_term + cons_term, base=base, rate_term=rate_term,
                         consumption_term=cons_term)


@dataclass(frozen=True)
class ConsumptionPath:
    """A cumulative consumption path ``V`` together with its rate ``v = V'``."""

    V: ArrayFn
    v: ArrayFn
    T: float


def I_functional(path: ConsumptionPath | DeterministicControl, grid=None) -> float:
    """``int_0^T (ln V'_t - V_t) dt``."""
    T = path.T
    grid = (path.grid if isinstance(path, DeterministicControl) else np.linspace(0.0, T, 1025)) \
        if grid is None else np.asarray(grid, dtype=float)
    nodes, weights, _ = cell_rule(grid, _ORDER)
    if isinstance(path, DeterministicControl):
        v = path.v_at(nodes)
        V = path.V_at(nodes)
    else:
        v = np.asarray(path.v(nodes), dtype=float)
        V = np.asarray(path.V(nodes), dtype=float)
    if np.any(~(v > 0)):
        raise AdmissibilityError("consumption rate must be positive on every cell")
    return float(weights @ (np.log(v) - V))


def H_functional(y, m: MarketModel, grid=None) -> float:
    """``int_0^T omega(t) (y_t' theta_t - |y_t|^2 / 2) dt``."""
    yf = _y_of(y)
    c = y if isinstance(y, DeterministicControl) else None

    def f(s):
        v = _as_matrix(yf(s), s.size, m.d)
        return (m.T + 1.0 - s) * (np.einsum("ij,ij->i", v, m.theta_at(s)) - 0.5 * np.einsum("ij,ij->i", v, v))

    return _integrate_nodes(c, m, f, grid)


def K_var(y, m: MarketModel, alpha: float, grid=None) -> float:
    """``||y||^2/2 + |q_alpha| ||y|| - (y, theta)``, all over ``[0, T]``."""
    n2 = norm_sq(y, m, grid)
    return 0.5 * n2 + abs(normal_quantile(alpha)) * math.sqrt(n2) - inner_theta(y, m, grid)


def K_es(y, m: MarketModel, alpha: float, grid=None) -> float:
    """``-(y, theta) - ln F_alpha(|q_alpha| + ||y||)``, all over ``[0, T]``."""
    q = abs(normal_quantile(alpha))
    n = math.sqrt(norm_sq(y, m, grid))
    return -inner_theta(y, m, grid) - log_F_alpha(q + n, q)


def norm_gap_l(y, h, m: MarketModel, grid=None) -> float:
    """``||y + h|| - ||y|| - (y / ||y||, h)``; nonnegative by Cauchy-Schwarz."""
    yf, hf = _y_of(y), _y_of(h)
    grid = m.default_grid() if grid is None else grid
    nodes, weights, _ = cell_rule(np.union1d(grid, m.breakpoints), _ORDER)
    Y = _as_matrix(yf(nodes), nodes.size, m.d)
    H = _as_matrix(hf(nodes), nodes.size, m.d)
    ny = math.sqrt(float(weights @ np.einsum("ij,ij->i", Y, Y)))
    if ny == 0.0:
        raise DomainError("norm_gap_l requires ||y||_T > 0")
    S = Y + H
    nyh = math.sqrt(float(weights @ np.einsum("ij,ij->i", S, S)))
    return nyh - ny - float(weights @ np.einsum("ij,ij->i", Y, H)) / ny


# -- consumption ------------------------------------------------------------------


def optimal_consumption(b: float, T: float) -> tuple[ConsumptionPath, float]:
    """Maximizer of ``I`` over paths with ``V_0 = 0``, ``V_T = b``, and its value."""
    if not b > 0:
        raise DomainError(f"terminal consumption b must be positive, got {b}")
    em1 = math.expm1(b)
    logT = math.log(T)

    def V(t):
        t = np.asarray(t, dtype=float)
        return b + logT - np.log(T + (T - t) * em1)

    def v(t):
        t = np.asarray(t, dtype=float)
        return em1 / (T + (T - t) * em1)

    value = -T * logT - T * (b - math.log(em1))
    return ConsumptionPath(V=V, v=v, T=T), value


def consumption_rate_kappa(kappa: float, T: float, t):
    """``kappa / (T - t kappa)``."""
    if not 0 < kappa <= 1:
        raise DomainError(f"kappa must lie in (0, 1], got {kappa}")
    t_arr = np.asarray(t, dtype=float)
    den = T - t_arr * kappa
    if np.any(den <= 0):
        raise DomainError("T - t*kappa must be positive")
    out = kappa / den
    return float(out) if t_arr.ndim == 0 else out


def kappa_cumulative(kappa: float, T: float, t):
    """``ln(T / (T - kappa t))``, the cumulative consumption of the rate above."""
    t_arr = np.asarray(t, dtype=float)
    out = -np.log1p(-kappa * t_arr / T)
    return float(out) if t_arr.ndim == 0 else out


def wealth_log_mean_and_var(x: float, c: DeterministicControl, m: MarketModel, t):
    """Mean and variance of the Gaussian ``ln X_t``."""
    if not x > 0:
        raise DomainError(f"initial wealth must be positive, got {x}")
    t_arr = np.asarray(t, dtype=float)
    mo = control_moments(c, m, t_arr)
    mean = math.log(x) + mo["R"] - mo["V"] + mo["y_theta"] - 0.5 * mo["y_sq"]
    var = mo["y_sq"]
    if t_arr.ndim == 0:
        return float(mean[0]), float(var[0])
    return mean, var


# -- CSV exchange --------------------------------------------------------------------


def write_control_csv(path: str | Path, c: DeterministicControl, grid=None, extra: dict | None = None) -> None:
    """Write ``t, y_1..y_d, v`` (plus optional extra columns) one row per grid point.

    Values are evaluated at the left endpoint of each cell; the final row at
    ``T`` carries the left limit. Floats use shortest round-trip formatting.
    """
    grid = c.grid if grid is None else np.asarray(grid, dtype=float)
    t = grid.copy()
    y = c.y_at(t)
    v = c.v_at(t)
    cols = [f"y_{i + 1}" for i in range(c.d)]
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *cols, "v", *extra.keys()])
        for i in range(t.size):
            w.writerow([repr(float(t[i])), *(repr(float(val)) for val in y[i]), repr(float(v[i])),
                        *(repr(float(np.asarray(col)[i])) for col in extra.values())])


def read_control_csv(path: str | Path, m: MarketModel | None = None, kind: str = "spline") -> DeterministicControl:
    """Rebuild a control from ``write_control_csv`` output.

    ``kind="constant"`` treats each row as the value on its cell.
    ``kind="spline"`` interpolates by a cubic spline inside each coefficient
    piece (split at the breakpoints of ``m`` when given), which reproduces
    smooth controls to high order.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ModelError(f"{path}: empty control file")
    header = rows[0]
    try:
        vi = header.index("v")
    except ValueError:
        raise ModelError(f"{path}: missing column 'v'") from None
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    try:
        data = np.array([[float(r[i]) for i in range(len(header))] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ModelError(f"{path}: malformed row ({exc})") from exc
    t = data[:, header.index("t")]
    Y = data[:, ycols]
    v = data[:, vi]
    d = len(ycols)
    if kind == "constant":
        return DeterministicControl.piecewise_constant(t, Y[:-1], v[:-1])
    if kind != "spline":
        raise DomainError(f"unknown interpolation kind {kind!r}")

    cuts = np.asarray(m.breakpoints if m is not None else [t[0], t[-1]], dtype=float)
    segs = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        last = b == cuts[-1]
        sel = (t >= a) & ((t <= b) if last else (t < b))
        ts = t[sel]
        if ts.size >= 4:
            fy = CubicSpline(ts, Y[sel], axis=0)
            fv = CubicSpline(ts, v[sel])
        else:
            fy = _linear(ts, Y[sel])
            fv = _linear(ts, v[sel])
        segs.append((fy, fv))
    inner = cuts[1:-1]

    def pick(s, which):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(inner, s, side="right")
        out = np.empty((s.size, d)) if which == 0 else np.empty(s.size)
        for k in np.unique(idx):
            sel = idx == k
            out[sel] = segs[k][which](s[sel])
        return out

    return DeterministicControl(y=lambda s: pick(s, 0), v=lambda s: pick(s, 1), grid=t, d=d)


def _linear(ts, vals):
    vals = np.asarray(vals, dtype=float)
    if ts.size == 1:
        return lambda s: np.broadcast_to(vals[0], (np.size(s),) + vals.shape[1:]).copy()
    if vals.ndim == 1:
        return lambda s: np.interp(s, ts, vals)
    return lambda s: np.column_stack([np.interp(s, ts, vals[:, j]) for j in range(vals.shape[1])])
