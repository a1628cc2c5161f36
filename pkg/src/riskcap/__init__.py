"""Optimal consumption/investment for log utility under uniform VaR or ES caps."""

from .errors import (AdmissibilityError, DomainError, InfeasibilityError, ModelError, NumericalError,
                     RiskcapError)
from .es_solver import EsSolution, solve_es
from .functionals import CostBreakdown, DeterministicControl, cost_J
from .market import CoefficientPiece, MarketModel, QuadratureSpec
from .riskmeasures import RiskSpec, feasibility_sup_check
from .var_solver import VarSolution, solve_unconstrained, solve_var

__all__ = [
    "AdmissibilityError", "CoefficientPiece", "CostBreakdown", "DeterministicControl", "DomainError",
    "EsSolution", "InfeasibilityError", "MarketModel", "ModelError", "NumericalError", "QuadratureSpec",
    "RiskSpec", "RiskcapError", "VarSolution", "cost_J", "feasibility_sup_check", "solve_es",
    "solve_unconstrained", "solve_var",
]
