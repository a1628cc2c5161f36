from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import RAW_M1, RAW_M3, log_ratio
from riskcap.errors import DomainError
from riskcap.functionals import DeterministicControl
from riskcap.riskmeasures import (RiskSpec, es_t, feasibility_sup_check, log_constraint, log_constraint_es_L,
                                  log_constraint_var_L, quantile_Q, tail_mean_m, var_t)
from riskcap.var_solver import solve_var


def merton_no_consumption(m):
    return DeterministicControl(y=m.theta_at, v=lambda t: np.zeros(t.shape), grid=m.default_grid(),
                                d=m.d, V=lambda t: 0.0 * t)


@pytest.fixture(scope="module")
def m1_merton(m1):
    return merton_no_consumption(m1)


# -- RiskSpec --------------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(alpha=0.0, zeta=0.1), dict(alpha=0.5, zeta=0.1), dict(alpha=0.01, zeta=0.0),
                                dict(alpha=0.01, zeta=1.0), dict(alpha=0.01, zeta=0.1, kind="cvar")])
def test_riskspec_validation(kw):
    with pytest.raises(DomainError):
        RiskSpec(**kw)


def test_riskspec_derived():
    s = RiskSpec(0.01, 0.2, "ES")
    assert s.kind == "es"
    assert s.q_alpha == pytest.approx(2.326348, abs=5e-7)
    assert s.log_floor == pytest.approx(math.log(0.8), abs=1e-16)


# -- quantile and VaR ------------------------------------------------------------------------


def test_quantile_examples(m1, m1_merton):
    rl = DeterministicControl.riskless(m1, v=0.0)
    assert quantile_Q(2.0, rl, m1, 0.01, 0.6) == pytest.approx(2.0 * math.exp(0.03), rel=1e-15)
    q = float(mp.sqrt(2) * mp.erfinv(mp.mpf("0.02") - 1))
    assert quantile_Q(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(math.exp(0.08125 + 0.25 * q), rel=1e-14)
    assert quantile_Q(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(0.606327, abs=1e-6)  # 0.6063263
    assert quantile_Q(3.0, m1_merton, m1, 0.01, 0.0) == pytest.approx(3.0, rel=1e-15)


def test_var_examples(m1, m1_merton):
    rl = DeterministicControl.riskless(m1, v=0.0)
    assert var_t(1.0, rl, m1, 0.01, 0.7) == 0.0
    exact = math.exp(0.05) - math.exp(0.08125 - float(mp.sqrt(2) * mp.erfinv(1 - mp.mpf("0.02"))) * 0.25)
    assert var_t(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(exact, rel=1e-14)
    assert var_t(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(0.444945, abs=1e-6)
    cons = DeterministicControl.riskless(m1, v=0.4)
    assert var_t(1.0, cons, m1, 0.01, 0.5) == pytest.approx(math.exp(0.025) * -math.expm1(-0.2), rel=1e-14)


# -- ES ----------------------------------------------------------------------------------------


def _tail_mean_mp(mean, sd, alpha):
    """E[e^Z ; Z <= mean + q sd] / alpha by direct quadrature of the Gaussian density."""
    q = mp.sqrt(2) * mp.erfinv(2 * mp.mpf(alpha) - 1)
    mean, sd = mp.mpf(mean), mp.mpf(sd)
    dens = lambda z: mp.exp(z - (z - mean) ** 2 / (2 * sd * sd)) / (sd * mp.sqrt(2 * mp.pi))  # noqa: E731
    return mp.quad(dens, [-mp.inf, mean - 10 * sd, mean + q * sd]) / alpha


def test_es_examples(m1, m1_merton):
    rl = DeterministicControl.riskless(m1, v=0.0)
    assert es_t(1.0, rl, m1, 0.01, 0.5) == pytest.approx(0.0, abs=1e-15)
    m_T = float(_tail_mean_mp(0.08125, 0.25, 0.01))
    assert tail_mean_m(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(m_T, rel=1e-13)
    assert es_t(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(math.exp(0.05) - m_T, rel=1e-13)
    assert es_t(1.0, m1_merton, m1, 0.01, 1.0) == pytest.approx(0.4925735, abs=5e-8)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.0, 2.0), kappa=st.floats(0.01, 0.95), s=st.floats(0.0, 1.0),
       alpha=st.sampled_from([0.01, 0.05, 1e-4]), mk=st.sampled_from(["M1", "M3"]))
def test_log_constraints_match_oracle(c, kappa, s, alpha, mk, m1, m3):
    m, raw = (m1, RAW_M1) if mk == "M1" else (m3, RAW_M3)
    t = s * m.T
    ctl = DeterministicControl.scaled_theta(m, c, kappa)
    k = raw.k(t)
    V = -math.log1p(-kappa * t / m.T)
    assert log_constraint_var_L(ctl, m, alpha, t) == pytest.approx(log_ratio("var", alpha, c * k, c * c * k, V),
                                                                   abs=1e-13)
    assert log_constraint_es_L(ctl, m, alpha, t) == pytest.approx(log_ratio("es", alpha, c * k, c * c * k, V),
                                                                  abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.0, 3.0), kappa=st.floats(0.01, 0.95), s=st.floats(0.0, 1.0), x=st.floats(0.1, 100.0))
def test_es_dominates_var(c, kappa, s, x, m3):
    ctl = DeterministicControl.scaled_theta(m3, c, kappa)
    t = s * m3.T
    assert es_t(x, ctl, m3, 0.05, t) >= var_t(x, ctl, m3, 0.05, t) - 1e-13 * x


def test_vectorized_times(m3):
    ctl = DeterministicControl.scaled_theta(m3, 0.7, 0.4)
    t = np.linspace(0, m3.T, 7)
    vec = var_t(1.0, ctl, m3, 0.01, t)
    assert vec.shape == (7,)
    np.testing.assert_allclose(vec, [var_t(1.0, ctl, m3, 0.01, s) for s in t], rtol=1e-14, atol=1e-16)


# -- feasibility ---------------------------------------------------------------------------


def test_riskless_always_feasible(m3):
    rl = DeterministicControl.riskless(m3, v=0.0)
    for kind in ("var", "es"):
        spec = RiskSpec(0.01, 0.2, kind)
        assert log_constraint(rl, m3, spec, 0.9) == pytest.approx(0.0, abs=1e-15)
        rep = feasibility_sup_check(rl, m3, spec)
        assert rep.feasible and rep.min_margin == pytest.approx(-math.log(0.8), abs=1e-15)


def test_optimal_var_feasible_with_min_at_horizon(m1):
    spec = RiskSpec(0.01, 0.6, "var")
    sol = solve_var(1.0, m1, spec)
    rep = feasibility_sup_check(sol.control, m1, spec)
    assert rep.feasible and rep.argmin_t == m1.T
    assert rep.L_T == pytest.approx(math.log(0.4), abs=1e-12)


def test_merton_infeasible_below_threshold(m1):
    rep = feasibility_sup_check(DeterministicControl.unconstrained(m1), m1, RiskSpec(0.01, 0.5, "var"))
    assert not rep.feasible and rep.min_margin < -0.5
    d = rep.to_dict()
    assert set(d) == {"feasible", "min_margin", "argmin_t", "L_T", "floor"}
