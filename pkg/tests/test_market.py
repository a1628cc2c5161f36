from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import RAW_M3
from riskcap.errors import DomainError, ModelError, NumericalError
from riskcap.market import MarketModel, QuadratureSpec, cumulative_integral, integrate


def two_rate_market():
    sig = [[0.2]]
    return MarketModel.from_pieces(1.0, [
        {"t_start": 0.0, "t_end": 0.5, "r": 0.02, "mu": [0.07], "sigma": sig},
        {"t_start": 0.5, "t_end": 1.0, "r": 0.04, "mu": [0.04], "sigma": sig},
    ])


# -- theta ---------------------------------------------------------------------------


def test_theta_scalar(m1):
    assert m1.theta_at(0.3) == pytest.approx([0.25], abs=1e-15)


def test_theta_zero_when_mu_equals_r(m0):
    assert np.all(m0.theta_at(np.linspace(0, 1, 11)) == 0.0)


def test_theta_identity_sigma():
    m = MarketModel.constant(1.0, 0.01, [0.05, -0.02], np.eye(2))
    np.testing.assert_allclose(m.theta_at(0.5), [0.04, -0.03], atol=1e-15)


def test_theta_non_diagonal_pieces(m3):
    for t, th in [(0.1, (0.06, 0.08)), (0.7, (0.18, -0.24)), (1.4, (0.12, 0.16))]:
        np.testing.assert_allclose(m3.theta_at(t), th, atol=1e-14)
    assert m3.theta_norm == pytest.approx(math.sqrt(0.07), rel=1e-14)
    assert m3.theta_sup == pytest.approx(0.3, rel=1e-14)


def test_piece_boundaries_are_right_continuous(m3):
    np.testing.assert_allclose(m3.theta_at(0.5), (0.18, -0.24), atol=1e-14)
    np.testing.assert_allclose(m3.theta_at(1.5), (0.12, 0.16), atol=1e-14)


# -- R, omega, norms ---------------------------------------------------------------------


def test_discount_constant(m1):
    assert m1.discount_R(1.0) == pytest.approx(0.05, abs=1e-15)
    assert m1.discount_R(0.0) == 0.0


def test_discount_two_pieces():
    assert two_rate_market().discount_R(1.0) == pytest.approx(0.03, abs=1e-15)


@pytest.mark.parametrize("T,t,expected", [(1.0, 0.0, 2.0), (1.0, 1.0, 1.0), (3.0, 1.5, 2.5)])
def test_omega(T, t, expected):
    m = MarketModel.constant(T, 0.0, [0.1], [[0.2]])
    assert m.omega(t) == expected


def test_theta_norm_sq(m1):
    assert m1.theta_norm_sq(1.0) == pytest.approx(0.0625, abs=1e-16)
    assert m1.theta_norm_sq(0.5) == pytest.approx(0.03125, abs=1e-16)
    assert m1.theta_norm_sq(0.0) == 0.0


def test_theta_norm_sq_matches_oracle(m3):
    t = np.linspace(0.0, 1.5, 37)
    np.testing.assert_allclose(m3.theta_norm_sq(t), RAW_M3.k(t), atol=1e-15)


def test_time_outside_horizon_rejected(m1):
    with pytest.raises(DomainError):
        m1.theta_at(1.5)
    with pytest.raises(DomainError):
        m1.discount_R(-0.1)


# -- quadrature ------------------------------------------------------------------


def test_integrate_examples(m1):
    assert integrate(m1, lambda s: m1.theta_sq_at(s)) == pytest.approx(0.0625, abs=1e-15)
    assert integrate(m1, lambda s: np.zeros_like(s)) == 0.0
    assert integrate(m1, m1.omega) == pytest.approx(1.5, abs=1e-15)


def test_integrate_respects_breakpoints():
    m = two_rate_market()
    assert integrate(m, m.rate_at) == pytest.approx(0.03, abs=1e-15)


def test_integrate_reports_last_estimates(m1):
    with pytest.raises(NumericalError) as info:
        integrate(m1, lambda s: 1.0 / np.sqrt(np.abs(s - 0.3)), q=QuadratureSpec(order=4, max_refinements=3))
    assert len(info.value.estimates) == 2


def test_integrate_reversed_bounds(m1):
    with pytest.raises(DomainError):
        integrate(m1, m1.omega, 0.8, 0.2)


def test_quadrature_spec_validation():
    with pytest.raises(DomainError):
        QuadratureSpec(order=1)
    with pytest.raises(DomainError):
        QuadratureSpec(refinement_tolerance=0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 9))
def test_integrate_polynomials_exact(a, b, p):
    m = MarketModel.constant(1.0, 0.0, [0.1], [[0.2]])
    lo, hi = min(a, b), max(a, b)
    got = integrate(m, lambda s: s**p, lo, hi)
    assert got == pytest.approx((hi ** (p + 1) - lo ** (p + 1)) / (p + 1), rel=1e-13, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.5), min_size=1, max_size=6))
def test_cumulative_integral_matches_closed_form(ts):
    ts = np.sort(np.array(ts))
    grid = np.linspace(0.0, 1.5, 33)
    got = cumulative_integral(lambda s: np.exp(-s) * np.cos(3 * s), grid, ts)
    F = lambda t: (np.exp(-t) * (3 * np.sin(3 * t) - np.cos(3 * t)) + 1) / 10  # noqa: E731
    np.testing.assert_allclose(got, F(ts), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.5), st.floats(0.0, 1.5))
def test_discount_additive(s, t):
    m = make_rate_market()
    lo, hi = min(s, t), max(s, t)
    assert m.discount_R(hi) - m.discount_R(lo) == pytest.approx(integrate(m, m.rate_at, lo, hi), abs=1e-14)


def make_rate_market():
    return MarketModel.from_pieces(1.5, [
        {"t_start": 0.5 * i, "t_end": 0.5 * (i + 1), "r": r, "mu": [r + 0.05], "sigma": [[0.3]]}
        for i, r in enumerate([0.03, -0.01, 0.02])
    ])


# -- construction errors ---------------------------------------------------------------------


def test_singular_sigma_rejected():
    with pytest.raises(ModelError, match="sigma not invertible"):
        MarketModel.constant(1.0, 0.0, [0.1, 0.1], [[0.2, 0.4], [0.1, 0.2]])


def test_pieces_must_tile():
    with pytest.raises(ModelError, match="tile"):
        MarketModel.from_pieces(1.0, [
            {"t_start": 0.0, "t_end": 0.4, "r": 0.0, "mu": [0.1], "sigma": [[0.2]]},
            {"t_start": 0.5, "t_end": 1.0, "r": 0.0, "mu": [0.1], "sigma": [[0.2]]},
        ])
    with pytest.raises(ModelError, match="expected T"):
        MarketModel.from_pieces(1.0, [{"t_start": 0.0, "t_end": 0.9, "r": 0.0, "mu": [0.1], "sigma": [[0.2]]}])


@pytest.mark.parametrize("bad", [
    {"T": -1.0, "pieces": [{"t_start": 0.0, "t_end": 1.0, "r": 0.0, "mu": [0.1], "sigma": [[0.2]]}]},
    {"T": 1.0, "pieces": []},
    {"T": 1.0, "pieces": [{"t_start": 0.0, "t_end": 1.0, "r": 0.0, "mu": [0.1, 0.2], "sigma": [[0.2]]}]},
    {"T": 1.0, "pieces": [{"t_start": 0.0, "t_end": 1.0, "r": 0.0, "sigma": [[0.2]]}]},
    {"T": 1.0, "pieces": [{"t_start": 0.0, "t_end": 1.0, "r": float("nan"), "mu": [0.1], "sigma": [[0.2]]}]},
    {"pieces": []},
])
def test_malformed_configs(bad):
    with pytest.raises(ModelError):
        MarketModel.from_dict(bad)


def test_round_trip_json(tmp_path, m3):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"market": m3.to_dict()}))
    back = MarketModel.load(p)
    np.testing.assert_array_equal(back.theta_pieces, m3.theta_pieces)
    assert back.T == m3.T and back.d == 2
