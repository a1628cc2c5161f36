"""Optimal log-utility strategy under a uniform-in-time Value-at-Risk cap.

The optimal investment is the Merton strategy shrunk by a weight
``tau_lambda(t)`` in ``[0, 1]``; consumption follows ``kappa / (T - kappa t)``.
Sufficient conditions select one of four regimes (see ``var_conditions``).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InfeasibilityError
from .functionals import DeterministicControl
from .market import MarketModel
from .riskmeasures import RiskSpec
from .special import normal_quantile
from .weights import (INTERIOR, RISKLESS, THETA_ZERO, UNCONSTRAINED, A_of_x, Condition,  # noqa: F401
                      ConstrainedSolution, family, solve_constrained)


class VarSolution(ConstrainedSolution):
    """Solution of the VaR-capped problem; ``tau`` is the investment weight."""

    @property
    def tau(self):
        return self.weight


def _fam(m: MarketModel, alpha: float):
    return family(m, float(alpha), "var")


def G(u, lam, m: MarketModel, alpha: float):
    return _fam(m, alpha).G(u, lam)


def lambda_max(m: MarketModel, alpha: float) -> float:
    return _fam(m, alpha).lambda_max


def rho(lam: float, m: MarketModel, alpha: float) -> float:
    return _fam(m, alpha).rho(lam)


def tau(t, lam: float, m: MarketModel, alpha: float):
    """Investment weight ``tau_lambda(t)``; 1 at ``lambda = 0``, 0 from ``lambda_max`` on."""
    if lam < 0:
        raise DomainError("tau requires lambda >= 0")
    out = _fam(m, alpha).weight(t, lam)
    return float(out) if np.ndim(t) == 0 else out


def Phi(lam: float, m: MarketModel, alpha: float) -> float:
    """``|q| ||tau theta|| + ||tau theta||^2 / 2 - ||sqrt(tau) theta||^2``."""
    fam = _fam(m, alpha)
    if lam > fam.lambda_max * (1 + 1e-12):
        raise DomainError("Phi is defined on [0, lambda_max]")
    return fam.Phi(lam)


def _check_budget(a: float, zeta: float):
    if not 0.0 <= a <= -math.log1p(-zeta) * (1 + 1e-15):
        raise DomainError(f"a={a} outside [0, -ln(1 - zeta)]")


def Phi_inverse(a: float, m: MarketModel, alpha: float, zeta: float) -> float:
    """Multiplier with ``Phi(lambda) = a`` for ``0 <= a <= -ln(1 - zeta)``."""
    _check_budget(a, zeta)
    cond = var_conditions(m, alpha, zeta)["zeta_below_full_investment_risk"]
    if not cond.holds:
        raise InfeasibilityError(f"zeta={zeta} is not below {cond.threshold:.9g}", cond.name)
    return _fam(m, alpha).phi_of_budget(a)


def Gamma(kappa: float, m: MarketModel, alpha: float, zeta: float) -> float:
    """Reduced objective in the consumption parameter; ``-inf`` at ``kappa = 0``."""
    if not 0.0 <= kappa <= zeta:
        raise DomainError(f"kappa must lie in [0, zeta], got {kappa}")
    if m.theta_norm == 0.0:
        return -math.inf if kappa == 0 else math.log1p(-kappa) + m.T * math.log(kappa)
    return _fam(m, alpha).Gamma(kappa, zeta)


def maximize_gamma(m: MarketModel, alpha: float, zeta: float) -> tuple[float, float]:
    """``(gamma, Gamma(gamma))`` by a 512-point scan and golden-section refinement."""
    if m.theta_norm == 0.0:
        g = min(m.T / (m.T + 1.0), zeta)
        return g, math.log1p(-g) + m.T * math.log(g)
    return _fam(m, alpha).maximize_Gamma(zeta)


def var_conditions(m: MarketModel, alpha: float, zeta: float) -> dict[str, Condition]:
    """Sufficient conditions deciding the regime, with computed thresholds."""
    T = m.T
    q = -normal_quantile(alpha)
    th = m.theta_norm
    th_inf = m.theta_sup
    kappa0 = T / (T + 1.0)
    # Constraint value of the Merton strategy: |q| ||theta|| - ||theta||^2 / 2.
    phi0 = q * th - 0.5 * th * th
    inv_thr = -math.expm1(-phi0)
    unc_thr = 1.0 - math.exp(-phi0) / (T + 1.0)
    # Same expression with 1/T in place of 1/(T+1); reported only, since it is not sufficient.
    unc_over_T = 1.0 - math.exp(-phi0) / T
    dom_thr = 2.0 * (T + 1.0) * th
    inv = Condition("zeta_below_full_investment_risk", zeta < inv_thr, zeta, inv_thr, "<")
    dom = Condition("quantile_dominates_theta", q >= dom_thr, q, dom_thr, ">=")
    if zeta < kappa0:
        rl_thr = (1.0 + T) * th * (1.0 + zeta * (T + 1.0) * th_inf**2 / ((1.0 - zeta) * T - zeta))
    else:
        rl_thr = math.inf
    riskless = Condition("riskless_sufficient", bool(th > 0 and inv.holds and dom.holds and q >= rl_thr),
                         q, rl_thr, ">=", {"zeta_below_kappa0": zeta < kappa0, "kappa0": kappa0})
    unc = Condition("unconstrained_sufficient", bool(zeta > unc_thr and q >= th), zeta, unc_thr, ">",
                    {"threshold_over_T": unc_over_T, "quantile_at_least_theta": q >= th})
    return {c.name: c for c in (inv, dom, riskless, unc)}


def solve_var(x: float, m: MarketModel, spec: RiskSpec) -> VarSolution:
    """Optimal strategy and value under the VaR cap ``VaR_t <= zeta x e^{R_t}``."""
    if spec.kind != "var":
        raise DomainError('solve_var needs a RiskSpec with kind="var"')
    conds = var_conditions(m, spec.alpha, spec.zeta)
    return solve_constrained(x, m, spec, conds, VarSolution)


def solve_unconstrained(x: float, m: MarketModel) -> tuple[DeterministicControl, float]:
    """Merton strategy ``y = theta``, ``v = 1/omega`` and its optimal value."""
    if not x > 0:
        raise DomainError(f"initial wealth must be positive, got {x}")
    T = m.T
    J = (T + 1.0) * math.log(x / (T + 1.0)) + m.omega_integral(m._rates + 0.5 * m.theta_sq_pieces)
    return DeterministicControl.unconstrained(m), J
