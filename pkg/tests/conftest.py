from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest
from scipy.special import ndtri

from riskcap.market import MarketModel

mp.mp.dps = 40

ACCEPTANCE_LINES: list[str] = []


def make_m1() -> MarketModel:
    """d=1, T=1, r=0.05, mu=0.10, sigma=0.20, so theta = 0.25."""
    return MarketModel.constant(1.0, 0.05, [0.10], [[0.20]])


def make_m0() -> MarketModel:
    """mu = r: no excess return."""
    return MarketModel.constant(1.0, 0.05, [0.05], [[0.20]])


def make_m2() -> MarketModel:
    """theta = 1.5 on T = 1; with alpha = 1e-10 the cap binds strictly inside."""
    return MarketModel.constant(1.0, 0.02, [0.32], [[0.20]])


M3_THETAS = [(0.06, 0.08), (0.18, -0.24), (0.12, 0.16)]  # norms 0.1, 0.3, 0.2
M3_SIGMAS = [[[0.20, 0.05], [0.03, 0.25]], [[0.30, -0.10], [0.05, 0.20]], [[0.25, 0.00], [0.10, 0.15]]]
M3_RATES = [0.03, 0.04, 0.02]


def make_m3() -> MarketModel:
    """T = 1.5, three half-unit pieces, d = 2 with non-diagonal volatility."""
    pieces = []
    for i, (th, sig, r) in enumerate(zip(M3_THETAS, M3_SIGMAS, M3_RATES)):
        mu = r + np.array(sig) @ np.array(th)
        pieces.append({"t_start": 0.5 * i, "t_end": 0.5 * (i + 1), "r": r, "mu": list(mu), "sigma": sig})
    return MarketModel.from_pieces(1.5, pieces)


@pytest.fixture(scope="session")
def m1():
    return make_m1()


@pytest.fixture(scope="session")
def m0():
    return make_m0()


@pytest.fixture(scope="session")
def m2():
    return make_m2()


@pytest.fixture(scope="session")
def m3():
    return make_m3()


# -- high-precision oracles ----------------------------------------------------


def mp_quantile(alpha) -> mp.mpf:
    """Standard normal quantile; solved on the log-cdf scale so tiny alpha keeps full precision."""
    p = mp.mpf(alpha)
    if p == mp.mpf(0.5):
        return mp.mpf(0)
    start = float(ndtri(float(alpha)))
    return mp.findroot(lambda x: mp.log(mp.ncdf(x)) - mp.log(p), start)


def mp_tail(z) -> mp.mpf:
    return mp.erfc(mp.mpf(z) / mp.sqrt(2)) / 2


def mp_mills(y) -> mp.mpf:
    y = mp.mpf(y)
    return mp.exp(y * y / 2) * mp.sqrt(mp.pi / 2) * mp.erfc(y / mp.sqrt(2))


def mp_mills_quad(y) -> mp.mpf:
    """Direct tail integral; a second, structurally different oracle for moderate y."""
    y = mp.mpf(y)
    return mp.quad(lambda s: mp.exp(y * y / 2 - s * s / 2), [y, y + 1, y + 10, mp.inf])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
