"""Closed-form quantile, VaR and ES of lognormal wealth, and the log constraints.

Under a deterministic control ``ln X_t`` is Gaussian, so the alpha-quantile
and the lower-tail mean of wealth have closed forms. The risk cap
``risk_t <= zeta x e^{R_t}`` is equivalent to a lower bound ``ln(1 - zeta)``
on a deterministic log-constraint process, which is what the solvers and
the feasibility check work with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .functionals import DeterministicControl, control_moments, wealth_log_mean_and_var
from .market import MarketModel
from .special import (F_alpha, iota, iota_alpha, log_F_alpha, mills_ratio, norm_ppf,  # noqa: F401
                      normal_cdf, normal_quantile, normal_tail)

FEASIBILITY_SLACK = 1e-10


@dataclass(frozen=True)
class RiskSpec:
    alpha: float
    zeta: float
    kind: str = "var"

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if not 0.0 < self.zeta < 1.0:
            raise DomainError(f"zeta must lie in (0, 1), got {self.zeta}")
        kind = self.kind.lower()
        if kind not in ("var", "es"):
            raise DomainError(f"risk measure must be 'var' or 'es', got {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    @property
    def q_alpha(self) -> float:
        """``|q_alpha|``, the magnitude of the normal alpha-quantile."""
        return -normal_quantile(self.alpha)

    @property
    def log_floor(self) -> float:
        return math.log1p(-self.zeta)


def _scalar(t, arr):
    return float(arr[0]) if np.ndim(t) == 0 else arr


def _moments(c, m, t):
    mo = control_moments(c, m, np.asarray(t, dtype=float))
    return mo, np.sqrt(mo["y_sq"])


def log_constraint_var_L(c: DeterministicControl, m: MarketModel, alpha: float, t):
    """``L_t = (y,theta)_t - ||y||_t^2/2 - V_t - |q_alpha| ||y||_t``."""
    mo, n = _moments(c, m, t)
    q = -normal_quantile(alpha)
    return _scalar(t, mo["y_theta"] - 0.5 * mo["y_sq"] - mo["V"] - q * n)


def log_constraint_es_L(c: DeterministicControl, m: MarketModel, alpha: float, t):
    """``(y,theta)_t - V_t + ln F_alpha(|q_alpha| + ||y||_t)``."""
    mo, n = _moments(c, m, t)
    q = -normal_quantile(alpha)
    return _scalar(t, mo["y_theta"] - mo["V"] + log_F_alpha(q + n, q))


def quantile_Q(x: float, c: DeterministicControl, m: MarketModel, alpha: float, t):
    """alpha-quantile of ``X_t``: ``exp(mean + q_alpha * sd)`` of the log-wealth law."""
    mean, var = wealth_log_mean_and_var(x, c, m, np.atleast_1d(t))
    return _scalar(t, np.exp(mean + normal_quantile(alpha) * np.sqrt(var)))


def var_t(x: float, c: DeterministicControl, m: MarketModel, alpha: float, t):
    """Value-at-Risk relative to the riskless reserve ``x e^{R_t}``."""
    R = m.discount_R(np.atleast_1d(t))
    return _scalar(t, x * np.exp(R) * -np.expm1(np.atleast_1d(log_constraint_var_L(c, m, alpha, t))))


def tail_mean_m(x: float, c: DeterministicControl, m: MarketModel, alpha: float, t):
    """``E(X_t | X_t <= Q_t)``."""
    if not x > 0:
        raise DomainError("x must be positive")
    R = m.discount_R(np.atleast_1d(t))
    return _scalar(t, x * np.exp(R + np.atleast_1d(log_constraint_es_L(c, m, alpha, t))))


def es_t(x: float, c: DeterministicControl, m: MarketModel, alpha: float, t):
    """Expected Shortfall relative to the riskless reserve ``x e^{R_t}``."""
    R = m.discount_R(np.atleast_1d(t))
    return _scalar(t, x * np.exp(R) * -np.expm1(np.atleast_1d(log_constraint_es_L(c, m, alpha, t))))


def log_constraint(c: DeterministicControl, m: MarketModel, spec: RiskSpec, t):
    if spec.kind == "var":
        return log_constraint_var_L(c, m, spec.alpha, t)
    return log_constraint_es_L(c, m, spec.alpha, t)


def feasibility_grid(m: MarketModel, n: int = 4096) -> np.ndarray:
    """``n`` uniform points on ``[0, T]`` merged with the coefficient breakpoints."""
    g = np.union1d(np.linspace(0.0, m.T, n), m.breakpoints)
    g[-1] = m.T
    return g


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    min_margin: float
    argmin_t: float
    L_T: float
    floor: float

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "min_margin": self.min_margin, "argmin_t": self.argmin_t,
                "L_T": self.L_T, "floor": self.floor}


def feasibility_sup_check(c: DeterministicControl, m: MarketModel, spec: RiskSpec,
                          grid=None) -> FeasibilityReport:
    """Check ``risk_t <= zeta x e^{R_t}`` on every grid point via the log constraint.

    ``min_margin`` is ``min_t L_t - ln(1 - zeta)``; the control is feasible
    when it is at least ``-1e-10``.
    """
    grid = feasibility_grid(m) if grid is None else np.asarray(grid, dtype=float)
    L = np.asarray(log_constraint(c, m, spec, grid))
    i = int(np.argmin(L))
    margin = float(L[i] - spec.log_floor)
    return FeasibilityReport(
        feasible=bool(margin >= -FEASIBILITY_SLACK),
        min_margin=margin,
        argmin_t=float(grid[i]),
        L_T=float(L[-1]),
        floor=spec.log_floor,
    )
