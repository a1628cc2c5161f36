"""Deterministic Black-Scholes coefficient schedules and quadrature.

Coefficients are piecewise constant in time. Pieces are half-open
``[t_start, t_end)`` except the last, which is closed at ``T``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import DomainError, ModelError, NumericalError

# Subintervals of the fixed solver rule never exceed this length, which keeps
# the nearest pole of the weight integrands (at omega <= 0) far from each cell.
_MAX_RULE_CELL = 0.25


@dataclass(frozen=True)
class QuadratureSpec:
    order: int = 16
    refinement_tolerance: float = 1e-12
    max_refinements: int = 14

    def __post_init__(self):
        if self.order < 2:
            raise DomainError(f"quadrature order must be >= 2, got {self.order}")
        if not self.refinement_tolerance > 0:
            raise DomainError("refinement_tolerance must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    return _gl_cache(order)


_GL: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_cache(order):
    if order not in _GL:
        x, w = np.polynomial.legendre.leggauss(order)
        x.flags.writeable = False
        w.flags.writeable = False
        _GL[order] = (x, w)
    return _GL[order]


def cell_rule(edges: np.ndarray, order: int = 16) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on consecutive cells of ``edges``.

    Returns ``(nodes, weights, cell_index)`` flattened cell by cell.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    cells = np.repeat(np.arange(a.size), order)
    return nodes, weights, cells


@dataclass(frozen=True)
class CoefficientPiece:
    t_start: float
    t_end: float
    r: float
    mu: tuple[float, ...]
    sigma: tuple[tuple[float, ...], ...]


def _solve_sigma(sigma: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``sigma x = rhs`` after the invertibility screen."""
    scale = np.max(np.abs(sigma))
    if not np.all(np.isfinite(sigma)) or scale == 0.0:
        raise ModelError("sigma not invertible")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)  # singular input is reported below
        lu, piv = scipy.linalg.lu_factor(sigma, check_finite=False)
    if np.min(np.abs(np.diag(lu))) < 1e-12 * scale:
        raise ModelError("sigma not invertible")
    ones = np.ones(sigma.shape[0])
    probe = scipy.linalg.lu_solve((lu, piv), ones)
    if np.linalg.norm(sigma @ probe - ones) > 1e-8 * np.linalg.norm(ones):
        raise ModelError("sigma not invertible")
    return scipy.linalg.lu_solve((lu, piv), rhs)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Immutable market coefficient schedule on ``[0, T]``.

    Equality is identity; derived quantities are cached on the instance.
    """

    T: float
    d: int
    pieces: tuple[CoefficientPiece, ...]
    theta_pieces: np.ndarray = field(repr=False)  # (n_pieces, d)

    @classmethod
    def from_pieces(cls, T: float, pieces: Sequence[CoefficientPiece | dict]) -> "MarketModel":
        T = float(T)
        if not (math.isfinite(T) and T > 0):
            raise ModelError(f"horizon T must be positive, got {T}")
        if not pieces:
            raise ModelError("at least one coefficient piece is required")
        norm: list[CoefficientPiece] = []
        for p in pieces:
            if isinstance(p, dict):
                try:
                    p = CoefficientPiece(
                        t_start=float(p["t_start"]),
                        t_end=float(p["t_end"]),
                        r=float(p["r"]),
                        mu=tuple(float(v) for v in p["mu"]),
                        sigma=tuple(tuple(float(v) for v in row) for row in p["sigma"]),
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ModelError(f"malformed coefficient piece: {exc}") from exc
            norm.append(p)

        d = len(norm[0].mu)
        if d < 1:
            raise ModelError("mu must have at least one entry")
        thetas = []
        expected_start = 0.0
        for i, p in enumerate(norm):
            if len(p.mu) != d or len(p.sigma) != d or any(len(row) != d for row in p.sigma):
                raise ModelError(f"piece {i}: mu must have length d={d} and sigma be {d}x{d}")
            if not p.t_start < p.t_end:
                raise ModelError(f"piece {i}: t_start must be < t_end")
            if not math.isclose(p.t_start, expected_start, rel_tol=0, abs_tol=1e-12 * max(1.0, T)):
                raise ModelError(f"piece {i} starts at {p.t_start}, expected {expected_start}: pieces must tile [0, T]")
            expected_start = p.t_end
            if not all(math.isfinite(v) for v in (p.r, *p.mu)):
                raise ModelError(f"piece {i}: non-finite coefficients")
            sigma = np.array(p.sigma, dtype=float)
            mu = np.array(p.mu, dtype=float)
            try:
                thetas.append(_solve_sigma(sigma, mu - p.r))
            except ModelError as exc:
                raise ModelError(f"piece {i}: {exc}") from None
        if not math.isclose(expected_start, T, rel_tol=0, abs_tol=1e-12 * max(1.0, T)):
            raise ModelError(f"pieces end at {expected_start}, expected T={T}")
        theta = np.array(thetas)
        theta.flags.writeable = False
        return cls(T=T, d=d, pieces=tuple(norm), theta_pieces=theta)

    @classmethod
    def constant(cls, T: float, r: float, mu, sigma) -> "MarketModel":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        piece = CoefficientPiece(0.0, float(T), float(r), tuple(mu), tuple(map(tuple, sigma)))
        return cls.from_pieces(T, [piece])

    @classmethod
    def from_dict(cls, data: dict) -> "MarketModel":
        try:
            T = data["T"]
            pieces = data["pieces"]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"market config missing field {exc}") from exc
        m = cls.from_pieces(T, pieces)
        if "d" in data and int(data["d"]) != m.d:
            raise ModelError(f"declared d={data['d']} does not match coefficient size {m.d}")
        return m

    @classmethod
    def load(cls, path: str | Path) -> "MarketModel":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data.get("market", data))

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "d": self.d,
            "pieces": [
                {"t_start": p.t_start, "t_end": p.t_end, "r": p.r, "mu": list(p.mu),
                 "sigma": [list(row) for row in p.sigma]}
                for p in self.pieces
            ],
        }

    # -- piece bookkeeping -------------------------------------------------

    @cached_property
    def breakpoints(self) -> np.ndarray:
        b = np.array([p.t_start for p in self.pieces] + [self.T])
        b[-1] = self.T
        b.flags.writeable = False
        return b

    @cached_property
    def _rates(self) -> np.ndarray:
        return np.array([p.r for p in self.pieces])

    @cached_property
    def theta_sq_pieces(self) -> np.ndarray:
        return np.sum(self.theta_pieces**2, axis=1)

    def piece_index(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if len(self.pieces) == 1:
            return np.zeros(t.shape, dtype=np.intp)
        return np.searchsorted(self.breakpoints[1:-1], t, side="right")

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-14)):
            raise DomainError(f"time outside [0, {self.T}]")
        return t

    # -- coefficient queries -----------------------------------------------

    def theta_at(self, t) -> np.ndarray:
        """Market price of risk; shape ``(d,)`` for scalar t else ``(n, d)``."""
        t = self._check_time(t)
        return self.theta_pieces[self.piece_index(t)]

    def rate_at(self, t) -> np.ndarray:
        return self._rates[self.piece_index(t)]

    def theta_sq_at(self, t) -> np.ndarray:
        return self.theta_sq_pieces[self.piece_index(t)]

    def omega(self, t):
        """Remaining horizon plus one, ``T - t + 1``."""
        if np.ndim(t) == 0:
            return self.T - float(t) + 1.0
        return self.T + 1.0 - np.asarray(t, dtype=float)

    def discount_R(self, t):
        """Integral of the riskless rate over ``[0, t]``."""
        return self._piece_integral(self._rates, t)

    def theta_norm_sq(self, t=None):
        """Integral of |theta|^2 over ``[0, t]`` (default ``t = T``)."""
        if t is None:
            t = self.T
        return self._piece_integral(self.theta_sq_pieces, t)

    def _piece_integral(self, values: np.ndarray, t):
        t_arr = self._check_time(t)
        starts = self.breakpoints[:-1]
        ends = self.breakpoints[1:]
        overlap = np.clip(np.minimum(ends, t_arr[..., None]) - starts, 0.0, None)
        out = overlap @ values
        return float(out) if np.ndim(t) == 0 else out

    @cached_property
    def theta_norm(self) -> float:
        return math.sqrt(self.theta_norm_sq(self.T))

    @cached_property
    def theta_sup(self) -> float:
        return float(np.sqrt(np.max(self.theta_sq_pieces)))

    def omega_integral(self, values: np.ndarray) -> float:
        """Exact integral of ``omega(t) * values[piece]`` over ``[0, T]``."""
        a, b = self.breakpoints[:-1], self.breakpoints[1:]
        om = (self.T + 1 - a + self.T + 1 - b) / 2 * (b - a)
        return float(om @ values)

    def default_grid(self, n_cells: int = 1024) -> np.ndarray:
        """Uniform grid merged with every coefficient breakpoint."""
        g = np.union1d(np.linspace(0.0, self.T, n_cells + 1), self.breakpoints)
        g[-1] = self.T
        return g

    @cached_property
    def rule(self) -> "FixedRule":
        return FixedRule.build(self, DEFAULT_QUADRATURE.order)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray], a: float = 0.0, b: float | None = None,
                  q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        return integrate(self, f, a, b, q)


@dataclass(frozen=True)
class FixedRule:
    """Precomputed Gauss-Legendre nodes over the whole horizon.

    Used by the solvers, whose integrands are smooth in ``omega`` inside
    each coefficient piece and are evaluated many thousands of times.
    """

    t: np.ndarray
    w: np.ndarray
    omega: np.ndarray
    theta_sq: np.ndarray
    theta: np.ndarray

    @classmethod
    def build(cls, m: MarketModel, order: int) -> "FixedRule":
        edges = [0.0]
        for a, b in zip(m.breakpoints[:-1], m.breakpoints[1:]):
            n = max(1, math.ceil((b - a) / _MAX_RULE_CELL))
            edges.extend(np.linspace(a, b, n + 1)[1:])
        nodes, weights, _ = cell_rule(np.array(edges), order)
        idx = m.piece_index(nodes)
        return cls(
            t=nodes,
            w=weights,
            omega=m.T - nodes + 1.0,
            theta_sq=m.theta_sq_pieces[idx],
            theta=m.theta_pieces[idx],
        )


def integrate(m: MarketModel, f: Callable[[np.ndarray], np.ndarray], a: float = 0.0,
              b: float | None = None, q: QuadratureSpec = DEFAULT_QUADRATURE,
              breakpoints: Sequence[float] = ()) -> float:
    """Adaptive composite Gauss-Legendre integral of ``f`` over ``[a, b]``.

    Each coefficient piece (plus any extra ``breakpoints``) is integrated
    separately; the partition is halved until successive totals agree to
    ``q.refinement_tolerance`` relative to the integral of ``|f|``.
    """
    b = m.T if b is None else float(b)
    a = float(a)
    if a > b:
        raise DomainError(f"integration bounds reversed: a={a} > b={b}")
    if a == b:
        return 0.0
    cuts = np.concatenate(([a, b], m.breakpoints, np.asarray(breakpoints, dtype=float)))
    edges = np.unique(cuts[(cuts >= a) & (cuts <= b)])

    def estimate(level):
        sub = np.concatenate([np.linspace(lo, hi, 2**level + 1)[:-1] for lo, hi in zip(edges[:-1], edges[1:])]
                             + [edges[-1:]])
        nodes, weights, _ = cell_rule(sub, q.order)
        vals = np.asarray(f(nodes), dtype=float).reshape(nodes.shape)
        return float(weights @ vals), float(weights @ np.abs(vals))

    prev, _ = estimate(0)
    for level in range(1, q.max_refinements + 1):
        cur, mag = estimate(level)
        if not math.isfinite(cur):
            raise NumericalError("integrand produced non-finite values", (prev, cur))
        if abs(cur - prev) <= q.refinement_tolerance * mag:
            return cur
        prev = cur
    raise NumericalError(
        f"quadrature did not reach relative tolerance {q.refinement_tolerance}", (prev, cur)
    )


def cumulative_integral(f: Callable[[np.ndarray], np.ndarray], grid: np.ndarray, t,
                        order: int | None = None) -> np.ndarray:
    """Running integral ``int_0^t f`` for each entry of ``t``.

    ``f`` may return shape ``(n,)`` or ``(n, k)``; integration is cellwise on
    ``grid`` refined by the requested times so no cell straddles a kink. By
    default the rule has 16 points per cell, or 6 once every cell is shorter
    than ``T/256``; both are exact to rounding for integrands analytic within
    distance ``O(T/100)`` of the cells.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    grid = np.asarray(grid, dtype=float)
    nodes, weights, n_cells, order, pos = _cumulative_plan(grid.tobytes(), t.tobytes(), order)
    vals = np.asarray(f(nodes), dtype=float)
    per_cell = np.einsum("co,co...->c...", weights.reshape(n_cells, order),
                         vals.reshape((n_cells, order) + vals.shape[1:]))
    running = np.concatenate([np.zeros((1,) + vals.shape[1:]), np.cumsum(per_cell, axis=0)])
    return running[pos]


@lru_cache(maxsize=32)
def _cumulative_plan(grid_bytes: bytes, t_bytes: bytes, order: int | None):
    # Controls are integrated against the same grids over and over (feasibility
    # scans, brute-force families), so the refined rule is memoized.
    grid = np.frombuffer(grid_bytes)
    t = np.frombuffer(t_bytes)
    edges = np.union1d(grid, t)
    if order is None:
        order = 6 if np.max(np.diff(edges)) <= (edges[-1] - edges[0]) / 256 else 16
    nodes, weights, _ = cell_rule(edges, order)
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights, edges.size - 1, order, np.searchsorted(edges, t)
