from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import RAW_M1, RAW_M3, MpWeights
from riskcap.errors import DomainError, InfeasibilityError
from riskcap.functionals import DeterministicControl, cost_J
from riskcap.market import MarketModel
from riskcap.riskmeasures import RiskSpec, feasibility_sup_check
from riskcap.var_solver import (G, Gamma, Phi, Phi_inverse, lambda_max, maximize_gamma, rho, solve_unconstrained,
                                solve_var, tau, var_conditions)
from riskcap.weights import A_of_x

LMAX_M1 = 0.18356387  # mpmath, see test below


@pytest.fixture(scope="module")
def mp_m1():
    return MpWeights(RAW_M1, "var", 0.01)


# -- G and lambda_max ------------------------------------------------------------------------


def test_G_at_zero_lambda(m1, m3):
    assert G(0.25, 0.0, m1, 0.01) == pytest.approx(1.0, abs=1e-15)
    assert G(0.1, 0.0, m3, 0.01) == pytest.approx(0.07 / 0.01, rel=1e-14)
    with pytest.raises(DomainError):
        G(0.0, 0.0, m1, 0.01)


def test_G_matches_mpmath(m3):
    o = MpWeights(RAW_M3, "var", 0.01)
    for u, lam in [(0.05, 0.02), (0.2, 0.1), (0.01, 0.15)]:
        assert G(u, lam, m3, 0.01) == pytest.approx(float(o.G(u, lam)), rel=1e-13)


def test_lambda_max_m1(m1, mp_m1):
    q = mp_m1.q
    k1 = mp.mpf("0.0625") * mp.mpf("1.5")
    k2 = mp.mpf("0.0625") * mp.mpf(7) / 3
    D = q * q - mp.mpf("0.0625")
    oracle = (k1 + mp.sqrt(k2 * D + k1 * k1)) / D
    assert lambda_max(m1, 0.01) == pytest.approx(float(oracle), rel=1e-14)
    assert lambda_max(m1, 0.01) == pytest.approx(LMAX_M1, abs=1e-8)
    assert G(0.0, lambda_max(m1, 0.01), m1, 0.01) == pytest.approx(1.0, abs=1e-12)


def test_lambda_max_needs_quantile_above_theta():
    m = MarketModel.constant(1.0, 0.0, [1.0], [[1.0]])
    with pytest.raises(InfeasibilityError) as info:
        lambda_max(m, 0.4)
    assert info.value.condition == "quantile_exceeds_theta_norm"


# -- rho and tau ----------------------------------------------------------------------------


def test_rho_examples(m1, mp_m1):
    assert rho(0.0, m1, 0.01) == pytest.approx(0.25, rel=1e-15)
    assert rho(lambda_max(m1, 0.01), m1, 0.01) < 1e-8
    r = rho(0.09, m1, 0.01)
    assert r == pytest.approx(float(mp_m1.rho(0.09)), abs=1e-12)
    assert G(r, 0.09, m1, 0.01) == pytest.approx(1.0, abs=1e-12)


def test_rho_beyond_lambda_max_is_zero(m1):
    assert rho(1.5 * lambda_max(m1, 0.01), m1, 0.01) == 0.0


def test_tau_examples(m3):
    t = np.linspace(0, m3.T, 11)
    np.testing.assert_allclose(tau(t, 0.0, m3, 0.01), 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(tau(t, lambda_max(m3, 0.01), m3, 0.01), 0.0, atol=1e-12)
    assert isinstance(tau(0.3, 0.05, m3, 0.01), float)
    with pytest.raises(DomainError):
        tau(0.3, -0.1, m3, 0.01)


@settings(max_examples=40, deadline=None)
@given(frac=st.floats(0.0, 1.0))
def test_tau_in_unit_interval_and_increasing_in_t(frac, m3):
    lam = frac * lambda_max(m3, 0.01)
    t = np.linspace(0.0, m3.T, 50)
    w = tau(t, lam, m3, 0.01)
    assert np.all((w >= 0) & (w <= 1))
    # omega falls with t, so the weight shrinks toward the horizon
    assert np.all(np.diff(w) <= 1e-15)


# -- Phi and its inverse ---------------------------------------------------------------------


def test_Phi_examples(m1):
    assert Phi(0.0, m1, 0.01) == pytest.approx(0.550337, abs=5e-7)
    assert Phi(lambda_max(m1, 0.01), m1, 0.01) == pytest.approx(0.0, abs=1e-12)


def test_Phi_matches_mpmath(m1, m3, mp_m1):
    o3 = MpWeights(RAW_M3, "var", 0.01)
    for lam in (0.02, 0.1, 0.17):
        assert Phi(lam, m1, 0.01) == pytest.approx(float(mp_m1.Phi(lam)), abs=1e-13)
    assert Phi(0.08, m3, 0.01) == pytest.approx(float(o3.Phi(0.08)), abs=1e-13)


def test_Phi_inverse_examples(m1):
    lm = lambda_max(m1, 0.01)
    assert Phi_inverse(0.0, m1, 0.01, 0.3) == pytest.approx(lm, rel=1e-12)
    z = 0.4  # just below the invertibility threshold 1 - e^{-Phi(0)} = 0.4232
    assert Phi_inverse(-math.log1p(-z), m1, 0.01, z) < lm


def test_Phi_inverse_errors(m1):
    with pytest.raises(DomainError):
        Phi_inverse(0.2, m1, 0.01, 0.1)
    with pytest.raises(DomainError):
        Phi_inverse(-0.01, m1, 0.01, 0.1)
    with pytest.raises(InfeasibilityError):
        Phi_inverse(0.1, m1, 0.01, 0.5)


@settings(max_examples=30, deadline=None)
@given(frac=st.floats(0.0, 1.0))
def test_Phi_round_trip_property(frac, m3):
    z = 0.3
    a = frac * -math.log1p(-z)
    assert Phi(Phi_inverse(a, m3, 0.01, z), m3, 0.01) == pytest.approx(a, abs=1e-12)


# -- Gamma ----------------------------------------------------------------------------------


def test_Gamma_at_zeta(m1):
    assert Gamma(0.1, m1, 0.01, 0.1) == pytest.approx(math.log(0.9) + math.log(0.1), abs=1e-14)
    with pytest.raises(DomainError):
        Gamma(0.2, m1, 0.01, 0.1)


def test_Gamma_independent_chain(m1, mp_m1):
    value, _ = mp_m1.Gamma(0.05, 0.1, lambda_max(m1, 0.01))
    assert Gamma(0.05, m1, 0.01, 0.1) == pytest.approx(float(value), abs=1e-12)


def test_Gamma_independent_chain_pieces(m3):
    o = MpWeights(RAW_M3, "var", 0.01, dps=20)
    value, _ = o.Gamma(0.45, 0.6, lambda_max(m3, 0.01))
    assert Gamma(0.45, m3, 0.01, 0.6) == pytest.approx(float(value), abs=1e-12)


def test_Gamma_zero_theta(m0):
    assert Gamma(0.3, m0, 0.01, 0.5) == pytest.approx(math.log(0.7) + math.log(0.3), abs=1e-15)


@pytest.mark.parametrize("zeta,expected", [(0.7, 0.5), (0.3, 0.3)])
def test_maximize_gamma_zero_theta(m0, zeta, expected):
    g, val = maximize_gamma(m0, 0.01, zeta)
    assert g == expected and val == pytest.approx(math.log1p(-g) + math.log(g), abs=1e-15)


def test_maximize_gamma_riskless_endpoint(m1):
    conds = var_conditions(m1, 0.01, 0.1)
    assert conds["riskless_sufficient"].threshold == pytest.approx(0.5078, abs=1e-4)
    g, _ = maximize_gamma(m1, 0.01, 0.1)
    assert g == 0.1


@settings(max_examples=20, deadline=None)
@given(frac=st.floats(0.001, 1.0))
def test_maximizer_beats_scan(frac, m3):
    zeta = 0.6
    g, val = maximize_gamma(m3, 0.01, zeta)
    assert val >= Gamma(frac * zeta, m3, 0.01, zeta) - 1e-12


# -- solver -----------------------------------------------------------------------------------


def test_solve_riskless_m1(m1):
    sol = solve_var(2.0, m1, RiskSpec(0.01, 0.1, "var"))
    assert sol.regime == "RISKLESS" and sol.gamma == 0.1
    assert np.all(sol.tau(np.linspace(0, 1, 9)) == 0.0)
    assert sol.J == pytest.approx(cost_J(2.0, sol.control, m1).J, abs=1e-12)
    assert sol.condition("riskless_sufficient").holds


def test_solve_unconstrained_regime(m1):
    sol = solve_var(1.0, m1, RiskSpec(0.01, 0.8, "var"))
    assert sol.regime == "UNCONSTRAINED"
    assert sol.J == pytest.approx(solve_unconstrained(1.0, m1)[1], abs=1e-14)


def test_solve_interior_between_thresholds(m1):
    conds = var_conditions(m1, 0.01, 0.5)
    assert conds["zeta_below_full_investment_risk"].threshold == pytest.approx(0.4232446, abs=1e-7)
    assert conds["unconstrained_sufficient"].threshold == pytest.approx(0.7116223, abs=1e-7)
    assert conds["unconstrained_sufficient"].extra["threshold_over_T"] == pytest.approx(0.4232446, abs=1e-7)
    sol = solve_var(1.0, m1, RiskSpec(0.01, 0.5, "var"))
    assert sol.regime == "INTERIOR" and 0 < sol.gamma < 0.5
    merton_J = solve_unconstrained(1.0, m1)[1]
    assert sol.J < merton_J
    assert feasibility_sup_check(sol.control, m1, RiskSpec(0.01, 0.5, "var")).feasible


def test_solve_zero_theta(m0):
    for zeta in (0.3, 0.7):
        sol = solve_var(1.5, m0, RiskSpec(0.01, zeta, "var"))
        assert sol.regime == "THETA_ZERO"
        assert cost_J(1.5, sol.control, m0).J == pytest.approx(A_of_x(1.5, m0) + sol.Gamma, abs=1e-9)


def test_solve_reports_unmet_hypotheses():
    m = MarketModel.constant(1.0, 0.0, [1.0], [[1.0]])  # theta = 1 > |q_0.3| = 0.52
    with pytest.raises(InfeasibilityError) as info:
        solve_var(1.0, m, RiskSpec(0.3, 0.2, "var"))
    assert info.value.condition


def test_solve_needs_var_spec(m1):
    with pytest.raises(DomainError):
        solve_var(1.0, m1, RiskSpec(0.01, 0.1, "es"))


def test_summary_fields(m3):
    s = solve_var(1.0, m3, RiskSpec(0.01, 0.6, "var")).summary()
    assert s["regime"] == "INTERIOR" and s["Gamma"] == pytest.approx(s["J"] - s["A"])
    assert {c["name"] for c in s["conditions"]} == {"zeta_below_full_investment_risk", "quantile_dominates_theta",
                                                    "riskless_sufficient", "unconstrained_sufficient"}


# -- unconstrained --------------------------------------------------------------------------


def test_unconstrained_values(m1):
    c, J = solve_unconstrained(1.0, m1)
    assert J == pytest.approx(-1.264419, abs=5e-7)
    assert J == pytest.approx(cost_J(1.0, c, m1).J, abs=1e-14)
    flat = MarketModel.constant(1.0, 0.0, [0.0], [[0.3]])
    assert solve_unconstrained(1.0, flat)[1] == pytest.approx(2 * math.log(0.5), abs=1e-15)
    with pytest.raises(DomainError):
        solve_unconstrained(0.0, m1)


@settings(max_examples=15, deadline=None)
@given(zeta=st.floats(0.05, 0.95), x=st.floats(0.1, 20.0))
def test_constrained_never_beats_unconstrained(zeta, x, m3):
    sol = solve_var(x, m3, RiskSpec(0.01, zeta, "var"))
    assert sol.J <= solve_unconstrained(x, m3)[1] + 1e-12
