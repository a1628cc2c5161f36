"""Optimal log-utility strategy under a uniform-in-time Expected-Shortfall cap.

Mirrors ``var_solver`` with the weight ``varsigma_lambda`` whose denominator
shift is ``iota_alpha(u) = 1 / mills_ratio(u + |q_alpha|) - u`` instead of
the constant ``|q_alpha|``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InfeasibilityError
from .market import MarketModel
from .riskmeasures import RiskSpec
from .special import log_F_alpha, normal_quantile
from .weights import (INTERIOR, RISKLESS, THETA_ZERO, UNCONSTRAINED, Condition,  # noqa: F401
                      ConstrainedSolution, family, solve_constrained)


class EsSolution(ConstrainedSolution):
    """Solution of the ES-capped problem; ``varsigma`` is the investment weight."""

    @property
    def varsigma(self):
        return self.weight


def _fam(m: MarketModel, alpha: float):
    return family(m, float(alpha), "es")


def G1(u, lam, m: MarketModel, alpha: float):
    return _fam(m, alpha).G(u, lam)


def lambda_prime_max(m: MarketModel, alpha: float) -> float:
    return _fam(m, alpha).lambda_max


def rho1(lam: float, m: MarketModel, alpha: float) -> float:
    return _fam(m, alpha).rho(lam)


def varsigma(t, lam: float, m: MarketModel, alpha: float):
    if lam < 0:
        raise DomainError("varsigma requires lambda >= 0")
    out = _fam(m, alpha).weight(t, lam)
    return float(out) if np.ndim(t) == 0 else out


def Phi1(lam: float, m: MarketModel, alpha: float) -> float:
    """``-||sqrt(s) theta||^2 - ln F_alpha(|q| + ||s theta||)`` for ``s = varsigma_lambda``."""
    fam = _fam(m, alpha)
    if lam > fam.lambda_max * (1 + 1e-12):
        raise DomainError("Phi1 is defined on [0, lambda'_max]")
    return fam.Phi(lam)


def Phi1_inverse(a: float, m: MarketModel, alpha: float, zeta: float) -> float:
    if not 0.0 <= a <= -math.log1p(-zeta) * (1 + 1e-15):
        raise DomainError(f"a={a} outside [0, -ln(1 - zeta)]")
    cond = es_conditions(m, alpha, zeta)["zeta_below_full_investment_risk"]
    if not cond.holds:
        raise InfeasibilityError(f"zeta={zeta} is not below {cond.threshold:.9g}", cond.name)
    return _fam(m, alpha).phi_of_budget(a)


def Gamma1(kappa: float, m: MarketModel, alpha: float, zeta: float) -> float:
    if not 0.0 <= kappa <= zeta:
        raise DomainError(f"kappa must lie in [0, zeta], got {kappa}")
    if m.theta_norm == 0.0:
        return -math.inf if kappa == 0 else math.log1p(-kappa) + m.T * math.log(kappa)
    return _fam(m, alpha).Gamma(kappa, zeta)


def maximize_gamma1(m: MarketModel, alpha: float, zeta: float) -> tuple[float, float]:
    if m.theta_norm == 0.0:
        g = min(m.T / (m.T + 1.0), zeta)
        return g, math.log1p(-g) + m.T * math.log(g)
    return _fam(m, alpha).maximize_Gamma(zeta)


def es_conditions(m: MarketModel, alpha: float, zeta: float) -> dict[str, Condition]:
    T = m.T
    q = -normal_quantile(alpha)
    th = m.theta_norm
    th_inf = m.theta_sup
    kappa0 = T / (T + 1.0)
    # Constraint value of the Merton strategy: -||theta||^2 - ln F_alpha(|q| + ||theta||).
    phi0 = -th * th - log_F_alpha(q + th, q)
    inv_thr = -math.expm1(-phi0)
    unc_thr = 1.0 - math.exp(-phi0) / (T + 1.0)
    dom_thr = max(1.0, 2.0 * (T + 1.0) * th)
    inv = Condition("zeta_below_full_investment_risk", zeta < inv_thr, zeta, inv_thr, "<")
    dom = Condition("quantile_dominates_theta", q >= dom_thr, q, dom_thr, ">=")
    if zeta < kappa0:
        rl_thr = (1.0 + T) * th * (1.0 + zeta * (T + 1.0) * th_inf**2 / ((1.0 - zeta) * T - zeta))
    else:
        rl_thr = math.inf
    riskless = Condition("riskless_sufficient", bool(th > 0 and inv.holds and dom.holds and q >= rl_thr),
                         q, rl_thr, ">=", {"zeta_below_kappa0": zeta < kappa0, "kappa0": kappa0})
    unc = Condition("unconstrained_sufficient", bool(zeta > unc_thr and q > max(1.0, th)), zeta, unc_thr, ">",
                    {"quantile_above_max_1_theta": q > max(1.0, th)})
    return {c.name: c for c in (inv, dom, riskless, unc)}


def solve_es(x: float, m: MarketModel, spec: RiskSpec) -> EsSolution:
    """Optimal strategy and value under the ES cap ``ES_t <= zeta x e^{R_t}``."""
    if spec.kind != "es":
        raise DomainError('solve_es needs a RiskSpec with kind="es"')
    conds = es_conditions(m, spec.alpha, spec.zeta)
    return solve_constrained(x, m, spec, conds, EsSolution)
