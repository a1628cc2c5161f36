"""Lagrange weight families shared by the VaR and ES solvers.

Both constrained problems have optimal investment ``y_t = theta_t w_lambda(t)``
with a weight of the form

    w_lambda(t) = rho (omega + lambda) / (lambda c(rho) + rho (omega + lambda)),

where ``rho = rho(lambda)`` solves ``G(rho, lambda) = 1`` for

    G(u, lambda) = int_0^T (omega + lambda)^2 / (lambda c(u) + u (omega + lambda))^2 |theta|^2 dt.

For VaR ``c(u) = |q_alpha|``; for ES ``c(u) = iota_alpha(u)``. The multiplier
is fixed by the risk budget through ``Phi`` and the consumption parameter
``kappa`` by maximizing ``Gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np

from .errors import DomainError, InfeasibilityError, NumericalError
from .functionals import DeterministicControl, cost_J
from .market import MarketModel
from .numerics import bisect_decreasing, brent_root, scan_then_golden
from .riskmeasures import RiskSpec, feasibility_sup_check
from .special import iota, log_F_alpha, normal_quantile

INTERIOR = "INTERIOR"
RISKLESS = "RISKLESS"
UNCONSTRAINED = "UNCONSTRAINED"
THETA_ZERO = "THETA_ZERO"

# The Gamma scan only brackets the maximizer; the golden-section refinement
# evaluates Gamma through the full-precision scalar path.
_SCAN_RTOL = 1e-12


class WeightFamily:
    """``G``, ``rho``, the weight, ``Phi`` and ``Gamma`` for one (market, alpha, measure)."""

    def __init__(self, m: MarketModel, alpha: float, kind: str):
        if kind not in ("var", "es"):
            raise DomainError(f"unknown measure {kind!r}")
        self.m = m
        self.alpha = float(alpha)
        self.kind = kind
        self.q = -normal_quantile(alpha)
        rule = m.rule
        self._omega = rule.omega
        self._wth = rule.w * rule.theta_sq
        self.theta_norm_sq = m.theta_norm_sq()
        self.theta_norm = math.sqrt(self.theta_norm_sq)
        # k1 = int omega |theta|^2, k2 = int omega^2 |theta|^2, exact per piece.
        a, b = m.breakpoints[:-1], m.breakpoints[1:]
        wa, wb = m.T + 1 - a, m.T + 1 - b
        self.k1 = float(((wa**2 - wb**2) / 2) @ m.theta_sq_pieces)
        self.k2 = float(((wa**3 - wb**3) / 3) @ m.theta_sq_pieces)

    # -- building blocks ---------------------------------------------------------

    def c(self, u):
        """Shift in the weight denominator: ``|q|`` (VaR) or ``iota(u)`` (ES)."""
        if self.kind == "var":
            return np.full(np.shape(u), self.q) if np.ndim(u) else self.q
        return iota(u, self.q)

    @cached_property
    def c0(self) -> float:
        return float(self.c(0.0))

    @cached_property
    def lambda_max(self) -> float:
        """Positive root of ``G(0, lambda) = 1``, where the weight vanishes."""
        if self.theta_norm == 0.0:
            raise DomainError("lambda_max requires ||theta||_T > 0")
        if not self.q > self.theta_norm:
            raise InfeasibilityError(
                f"|q_alpha| = {self.q:.6g} must exceed ||theta||_T = {self.theta_norm:.6g}",
                "quantile_exceeds_theta_norm")
        D = self.c0**2 - self.theta_norm_sq
        return (self.k1 + math.sqrt(self.k2 * D + self.k1**2)) / D

    def G(self, u, lam):
        """``G(u, lambda)``; broadcasts over ``u`` and ``lam``."""
        u, lam = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(lam, dtype=float))
        if np.any((u == 0) & (lam == 0)) and self.theta_norm > 0:
            raise DomainError("G is undefined at u = 0, lambda = 0")
        if np.any(u < 0) or np.any(lam < 0):
            raise DomainError("G requires u >= 0 and lambda >= 0")
        shape = u.shape
        u, lam = u.ravel(), lam.ravel()
        out = self._G_flat(u, lam)
        return float(out[0]) if shape == () else out.reshape(shape)

    def _G_flat(self, u, lam):
        ol = self._omega[None, :] + lam[:, None]
        den = lam[:, None] * np.asarray(self.c(u))[:, None] + u[:, None] * ol
        with np.errstate(over="ignore", divide="ignore"):  # tiny lambda at u = 0: G = inf is the right answer
            return (ol / den) ** 2 @ self._wth

    def rho(self, lam: float) -> float:
        """``inf{u >= 0 : G(u, lambda) <= 1}``.

        ``G`` decreases in ``u`` and ``G(||theta||, lambda) <= 1`` because the
        denominator is at least ``u (omega + lambda)``, so ``[0, ||theta||]``
        always brackets the root.
        """
        lam = float(lam)
        if lam < 0:
            raise DomainError("rho requires lambda >= 0")
        if self.theta_norm == 0.0:
            return 0.0
        if lam == 0.0:
            return self.theta_norm
        if lam >= self.lambda_max:
            return 0.0
        lam_a = np.array([lam])
        if self._G_flat(np.zeros(1), lam_a)[0] <= 1.0:
            return 0.0

        def f(u):
            return self._G_flat(np.array([u]), lam_a)[0] - 1.0

        return brent_root(f, 0.0, self.theta_norm)

    def rho_vec(self, lam: np.ndarray, rtol: float = _SCAN_RTOL) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        out = np.zeros_like(lam)
        out[lam == 0.0] = self.theta_norm
        inner = (lam > 0.0) & (lam < self.lambda_max)
        if inner.any():
            li = lam[inner]
            g0 = self._G_flat(np.zeros_like(li), li)
            solve = g0 > 1.0
            if solve.any():
                ls = li[solve]
                hi = np.full(ls.shape, self.theta_norm)
                root = bisect_decreasing(lambda u, act: self._G_flat(u, ls[act]), np.zeros_like(ls), hi,
                                         target=1.0, rtol=rtol)
                sub = np.zeros_like(li)
                sub[solve] = root
                out[inner] = sub
        return out

    def weight_from(self, omega, lam, rho):
        """Weight for given ``omega`` values, multiplier and root; broadcasts."""
        lam = np.asarray(lam, dtype=float)
        rho = np.asarray(rho, dtype=float)
        ol = omega + lam
        num = rho * ol
        den = lam * np.asarray(self.c(rho)) + num
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(lam == 0.0, 1.0, np.where(rho == 0.0, 0.0, num / den))
        return w

    def weight(self, t, lam: float):
        rho = self.rho(lam)
        return self.weight_from(self.m.omega(np.asarray(t, dtype=float)), lam, rho)

    def _norms(self, w):
        """``(||sqrt(w) theta||^2, ||w theta||^2)`` from weights at the rule nodes."""
        return w @ self._wth, (w * w) @ self._wth

    def _phi_from_norms(self, n1, n2):
        if self.kind == "var":
            return self.q * np.sqrt(n2) + 0.5 * n2 - n1
        return -n1 - log_F_alpha(self.q + np.sqrt(n2), self.q)

    def Phi(self, lam: float) -> float:
        lam = float(lam)
        if lam < 0:
            raise DomainError("Phi requires lambda >= 0")
        w = self.weight_from(self._omega, lam, self.rho(lam))
        return float(self._phi_from_norms(*self._norms(w)))

    def Phi_vec(self, lam: np.ndarray, rtol: float = _SCAN_RTOL) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        rho = self.rho_vec(lam, rtol)
        w = self.weight_from(self._omega[None, :], lam[:, None], rho[:, None])
        n1, n2 = self._norms(w)
        return self._phi_from_norms(n1, n2)

    @cached_property
    def Phi0(self) -> float:
        """``Phi(0)``: the constraint value of the full Merton strategy ``y = theta``."""
        return self.Phi(0.0)

    def phi_of_budget(self, a: float) -> float:
        """Multiplier whose constraint value equals ``a``, saturating at 0.

        For ``a >= Phi(0)`` the Merton strategy itself meets the budget and
        the multiplier is 0.
        """
        if a <= 0.0:
            return self.lambda_max
        if a >= self.Phi0:
            return 0.0
        return brent_root(lambda lam: self.Phi(lam) - a, 0.0, self.lambda_max)

    def phi_of_budget_vec(self, a: np.ndarray, rtol: float = _SCAN_RTOL) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        lam = np.where(a <= 0.0, self.lambda_max, 0.0)
        mid = (a > 0.0) & (a < self.Phi0)
        if mid.any():
            am = a[mid]
            lo = np.zeros_like(am)
            hi = np.full(am.shape, self.lambda_max)
            lam[mid] = bisect_decreasing(lambda l, act: self.Phi_vec(l, rtol), lo, hi, target=am, rtol=rtol)
        return lam

    # -- consumption parameter ----------------------------------------------------

    def budget(self, kappa, zeta: float):
        """``ln((1 - kappa) / (1 - zeta))``: constraint budget left after consumption."""
        return np.log1p(-np.asarray(kappa, dtype=float)) - math.log1p(-zeta)

    def gamma_from_weight(self, kappa, w):
        """``ln(1-kappa) + T ln kappa + int omega |theta|^2 (w - w^2/2)``."""
        kappa = np.asarray(kappa, dtype=float)
        h = (w - 0.5 * w * w) @ (self._omega * self._wth)
        return np.log1p(-kappa) + self.m.T * np.log(kappa) + h

    def Gamma(self, kappa: float, zeta: float) -> float:
        kappa = float(kappa)
        if kappa == 0.0:
            return -math.inf
        lam = self.phi_of_budget(float(self.budget(kappa, zeta)))
        w = self.weight_from(self._omega, lam, self.rho(lam))
        return float(self.gamma_from_weight(kappa, w))

    def Gamma_vec(self, kappa: np.ndarray, zeta: float) -> np.ndarray:
        kappa = np.asarray(kappa, dtype=float)
        lam = self.phi_of_budget_vec(self.budget(kappa, zeta))
        rho = self.rho_vec(lam)
        w = self.weight_from(self._omega[None, :], lam[:, None], rho[:, None])
        return self.gamma_from_weight(kappa, w)

    def maximize_Gamma(self, zeta: float, n_scan: int = 512, tol: float = 1e-10) -> tuple[float, float]:
        """512-point scan over ``(zeta 1e-6, zeta]`` then golden-section refinement."""
        return scan_then_golden(lambda k: self.Gamma_vec(k, zeta), lambda k: self.Gamma(k, zeta),
                                zeta * 1e-6, zeta, n_scan=n_scan, tol=tol)


@lru_cache(maxsize=64)
def family(m: MarketModel, alpha: float, kind: str) -> WeightFamily:
    return WeightFamily(m, alpha, kind)


# -- solution assembly -----------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """One sufficient condition with the numbers that decide it."""

    name: str
    holds: bool
    value: float
    threshold: float
    relation: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "holds": self.holds, "value": self.value, "threshold": self.threshold,
                "relation": self.relation, **self.extra}


@dataclass(frozen=True, eq=False)
class ConstrainedSolution:
    measure: str
    regime: str
    gamma: float
    lam: float | None
    rho: float | None
    weight: Callable[[np.ndarray], np.ndarray]
    control: DeterministicControl
    J: float
    A: float
    x: float
    alpha: float
    zeta: float
    conditions: tuple[Condition, ...] = ()

    @property
    def Gamma(self) -> float:
        return self.J - self.A

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> dict:
        return {
            "measure": self.measure,
            "regime": self.regime,
            "gamma": self.gamma,
            "lambda": self.lam,
            "rho": self.rho,
            "J": self.J,
            "A": self.A,
            "Gamma": self.Gamma,
            "x": self.x,
            "alpha": self.alpha,
            "zeta": self.zeta,
            "conditions": [c.to_dict() for c in self.conditions],
        }


def A_of_x(x: float, m: MarketModel) -> float:
    """``(T+1) ln x + int omega r dt - T ln T``."""
    if not x > 0:
        raise DomainError(f"initial wealth must be positive, got {x}")
    return (m.T + 1.0) * math.log(x) + m.omega_integral(m._rates) - m.T * math.log(m.T)


def _const_weight(value: float):
    return lambda t: np.full(np.shape(t), float(value))


def solve_constrained(x: float, m: MarketModel, spec: RiskSpec, conditions: dict[str, Condition],
                      solution_cls=ConstrainedSolution, verify: bool = True) -> ConstrainedSolution:
    """Regime dispatch and assembly shared by the two measures.

    ``conditions`` must provide ``zeta_below_full_investment_risk``,
    ``quantile_dominates_theta``, ``riskless_sufficient`` and
    ``unconstrained_sufficient``.
    """
    T, zeta = m.T, spec.zeta
    A = A_of_x(x, m)
    kappa0 = T / (T + 1.0)
    common = dict(measure=spec.kind, A=A, x=x, alpha=spec.alpha, zeta=zeta,
                  conditions=tuple(conditions.values()))

    if m.theta_norm == 0.0:
        g = min(kappa0, zeta)
        ctrl = DeterministicControl.weighted(m, _const_weight(0.0), g)
        J = A + math.log1p(-g) + T * math.log(g)
        sol = solution_cls(regime=THETA_ZERO, gamma=g, lam=None, rho=None, weight=_const_weight(0.0),
                           control=ctrl, J=J, **common)
        return _verified(sol, m, spec) if verify else sol

    fam = family(m, spec.alpha, spec.kind)
    if conditions["unconstrained_sufficient"].holds:
        ctrl = DeterministicControl.weighted(m, _const_weight(1.0), kappa0)
        J = A + float(fam.gamma_from_weight(kappa0, np.ones_like(fam._omega)))
        sol = solution_cls(regime=UNCONSTRAINED, gamma=kappa0, lam=0.0, rho=fam.theta_norm,
                           weight=_const_weight(1.0), control=ctrl, J=J, **common)
    elif conditions["riskless_sufficient"].holds:
        ctrl = DeterministicControl.weighted(m, _const_weight(0.0), zeta)
        J = A + math.log1p(-zeta) + T * math.log(zeta)
        sol = solution_cls(regime=RISKLESS, gamma=zeta, lam=fam.lambda_max, rho=0.0,
                           weight=_const_weight(0.0), control=ctrl, J=J, **common)
    elif conditions["quantile_dominates_theta"].holds:
        gamma, Gmax = fam.maximize_Gamma(zeta)
        lam = fam.phi_of_budget(float(fam.budget(gamma, zeta)))
        rho = fam.rho(lam)

        def weight(t, lam=lam, rho=rho):
            return fam.weight_from(m.omega(np.asarray(t, dtype=float)), lam, rho)

        ctrl = DeterministicControl.weighted(m, weight, gamma)
        sol = solution_cls(regime=INTERIOR, gamma=gamma, lam=lam, rho=rho, weight=weight, control=ctrl,
                           J=A + Gmax, **common)
    else:
        c = conditions["quantile_dominates_theta"]
        raise InfeasibilityError(
            f"no solution case applies: condition {c.name} fails "
            f"({c.value:.6g} {c.relation} {c.threshold:.6g} is false)", c.name)
    return _verified(sol, m, spec) if verify else sol


def _verified(sol: ConstrainedSolution, m: MarketModel, spec: RiskSpec) -> ConstrainedSolution:
    rep = feasibility_sup_check(sol.control, m, spec)
    if not rep.feasible:
        raise NumericalError(
            f"{sol.regime} strategy violates the risk cap at t={rep.argmin_t:.6g} (margin {rep.min_margin:.3e})",
            (rep.min_margin, rep.argmin_t))
    return sol


def check_cost(sol: ConstrainedSolution, m: MarketModel) -> float:
    """``cost_J`` of the emitted control minus the closed-form optimum (diagnostic)."""
    return cost_J(sol.x, sol.control, m).J - sol.J
