import math

import numpy as np
import pytest

from oracles import lognormal_call_quadrature, smoothed_payoff_quadrature
from tsbs.market import (
    MarketParams,
    OptionKind,
    SubdiffusionParams,
    bs_price,
    parity_gap,
    payoff,
    pde_coefficients,
    smoothed_payoff,
)

TABLE = MarketParams(spot=1.0, strike=2.0, maturity=1.0, rate=0.5, volatility=0.5)


def test_classical_reference_price():
    # the classical value quoted alongside the near-Brownian column is 0.1276
    assert bs_price(TABLE) == pytest.approx(0.1276, abs=5e-5)


@pytest.mark.parametrize("kind", ["call", "put"])
@pytest.mark.parametrize(
    "m",
    [
        TABLE,
        MarketParams(1.0, 2.0, 0.5, 0.04, 1.0),
        MarketParams(100.0, 95.0, 0.25, 0.03, 0.2, dividend=0.02),
    ],
)
def test_bs_matches_quadrature(m, kind):
    assert bs_price(m, kind) == pytest.approx(lognormal_call_quadrature(m, m.maturity, kind), abs=1e-12)


def test_bs_vectorized_tau_and_expiry():
    taus = np.array([0.0, 0.25, 1.0])
    vals = bs_price(TABLE, "call", taus)
    assert vals[0] == 0.0
    assert vals[2] == pytest.approx(bs_price(TABLE))
    itm = TABLE.replace(spot=3.0)
    assert bs_price(itm, "put", 0.0) == 0.0
    assert bs_price(itm, "call", 0.0) == 1.0


def test_zero_strike_call_is_forward():
    m = TABLE.replace(strike=0.0, dividend=0.1)
    assert bs_price(m) == pytest.approx(math.exp(-0.1))


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        bs_price(TABLE, tau=-1.0)


def test_parity_closed_form():
    m = MarketParams(1.3, 1.1, 0.7, 0.05, 0.3, dividend=0.02)
    assert abs(parity_gap(bs_price(m, "call"), bs_price(m, "put"), m)) < 1e-12


def test_payoff_and_kind_parsing():
    assert payoff(3.0, 2.0) == 1.0
    assert payoff(3.0, 2.0, "PUT") == 0.0
    assert OptionKind.parse("Call") is OptionKind.CALL
    with pytest.raises(ValueError):
        OptionKind.parse("straddle")


@pytest.mark.parametrize("x", [-0.2, math.log(2.0) - 0.003, math.log(2.0), math.log(2.0) + 0.01, 1.5])
@pytest.mark.parametrize("kind", ["call", "put"])
def test_smoothed_payoff_is_window_average(x, kind):
    w = 0.02
    assert smoothed_payoff(x, 2.0, w, kind) == pytest.approx(
        smoothed_payoff_quadrature(x, 2.0, w, kind), abs=1e-13
    )


def test_smoothed_payoff_needs_positive_width():
    with pytest.raises(ValueError):
        smoothed_payoff(0.0, 2.0, 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(spot=0.0, strike=1, maturity=1, rate=0, volatility=0.2),
        dict(spot=1, strike=-1, maturity=1, rate=0, volatility=0.2),
        dict(spot=1, strike=1, maturity=0, rate=0, volatility=0.2),
        dict(spot=1, strike=1, maturity=1, rate=0, volatility=0.0),
        dict(spot=1, strike=1, maturity=1, rate=math.nan, volatility=0.2),
    ],
)
def test_market_validation(kwargs):
    with pytest.raises(ValueError):
        MarketParams(**kwargs)


def test_subdiffusion_validation():
    with pytest.raises(ValueError):
        SubdiffusionParams(1.0)
    with pytest.raises(ValueError):
        SubdiffusionParams(0.5, -0.1)
    with pytest.raises(ValueError):
        SubdiffusionParams(1e-11).check_supported()
    SubdiffusionParams(0.5, 0.0).check_supported()


def test_pde_coefficients():
    c = pde_coefficients(MarketParams(1, 1, 1, 0.08, 0.3, dividend=0.01))
    assert (c.diffusion, c.drift, c.discount) == pytest.approx((0.045, 0.08 - 0.01 - 0.045, 0.08))
