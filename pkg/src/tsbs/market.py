"""Contract/market parameters, the classical Black-Scholes formula and payoffs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr


class OptionKind(str, Enum):
    CALL = "call"
    PUT = "put"

    @classmethod
    def parse(cls, value: "OptionKind | str") -> "OptionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown option kind {value!r}, expected 'call' or 'put'") from None


@dataclass(frozen=True)
class MarketParams:
    """European contract on a dividend-paying asset.

    ``rate`` may be zero here; only the time-rescaling search insists on a
    strictly positive rate.
    """

    spot: float
    strike: float
    maturity: float
    rate: float
    volatility: float
    dividend: float = 0.0

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError(f"spot must be positive, got {self.spot}")
        if not self.strike >= 0:
            raise ValueError(f"strike must be nonnegative, got {self.strike}")
        if not self.maturity > 0:
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if not self.volatility > 0:
            raise ValueError(f"volatility must be positive, got {self.volatility}")
        for name in ("rate", "dividend"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def replace(self, **changes) -> "MarketParams":
        fields = {**self.__dict__, **changes}
        return MarketParams(**fields)


# Inputs closer to the edges than these are rejected by the FD solver and the
# stochastic oracles; Gamma(2 - alpha) and the memory weights stay finite, but
# the model degenerates there.
ALPHA_MIN = 1e-6
ALPHA_MAX = 1.0 - 1e-9


@dataclass(frozen=True)
class SubdiffusionParams:
    """Exponent ``alpha`` and tempering rate ``lam`` of the inverse subordinator.

    ``lam == 0`` is the untempered (plain subdiffusive) case.
    """

    alpha: float
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"tempering rate must be finite and >= 0, got {self.lam}")

    def check_supported(self) -> None:
        if self.alpha <= ALPHA_MIN or self.alpha >= ALPHA_MAX:
            raise ValueError(
                f"alpha={self.alpha} is outside the supported range "
                f"({ALPHA_MIN}, {ALPHA_MAX})"
            )

    @property
    def lam_alpha(self) -> float:
        return self.lam ** self.alpha


@dataclass(frozen=True)
class PdeCoefficients:
    diffusion: float
    drift: float
    discount: float


def pde_coefficients(m: MarketParams) -> PdeCoefficients:
    """Coefficients of the log-price operator ``a u_xx + b u_x - c u``."""
    a = 0.5 * m.volatility ** 2
    return PdeCoefficients(diffusion=a, drift=m.rate - m.dividend - a, discount=m.rate)


def norm_cdf(x):
    return ndtr(x)


def payoff(z, strike: float, kind: OptionKind | str = OptionKind.CALL):
    kind = OptionKind.parse(kind)
    z = np.asarray(z, dtype=float)
    if kind is OptionKind.CALL:
        out = np.maximum(z - strike, 0.0)
    else:
        out = np.maximum(strike - z, 0.0)
    return out[()] if out.ndim == 0 else out


def bs_price(m: MarketParams, kind: OptionKind | str = OptionKind.CALL, tau=None):
    """Black-Scholes value with continuous dividend yield.

    ``tau`` is the time to maturity (defaults to ``m.maturity``) and may be an
    array; entries equal to zero return the payoff. Puts come from parity.
    """
    kind = OptionKind.parse(kind)
    tau = np.asarray(m.maturity if tau is None else tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("time to maturity must be nonnegative")
    z, k, r, q, s = m.spot, m.strike, m.rate, m.dividend, m.volatility

    pos = tau > 0
    safe = np.where(pos, tau, 1.0)
    fwd = z * np.exp(-q * safe)
    disc = k * np.exp(-r * safe)
    if k > 0:
        sq = s * np.sqrt(safe)
        d1 = (math.log(z / k) + (r - q + 0.5 * s * s) * safe) / sq
        call = fwd * norm_cdf(d1) - disc * norm_cdf(d1 - sq)
    else:
        call = fwd
    call = np.where(pos, call, max(z - k, 0.0))
    if kind is OptionKind.PUT:
        # at tau == 0 fwd - disc collapses to z - k, so parity still gives the payoff
        call = call - np.where(pos, fwd - disc, z - k)
    return call[()] if call.ndim == 0 else call


def smoothed_payoff(x, strike: float, width: float, kind: OptionKind | str = OptionKind.CALL):
    """Payoff averaged over the log-price window ``[x - width, x + width]``.

    Evaluated in closed form: for a call the integrand is ``e^s - K`` above
    ``ln K`` and zero below. The put follows from the window average of
    ``e^s - K``, which is ``e^x sinh(width)/width - K``.
    """
    kind = OptionKind.parse(kind)
    if not width > 0:
        raise ValueError("smoothing width must be positive")
    x = np.asarray(x, dtype=float)
    hi = x + width
    if strike > 0:
        lo = np.maximum(x - width, math.log(strike))
    else:
        lo = x - width
    live = hi > lo
    lo_ = np.where(live, lo, hi)
    # e^hi - e^lo written through expm1 to keep accuracy for narrow windows
    val = np.exp(lo_) * np.expm1(hi - lo_) - strike * (hi - lo_)
    out = np.where(live, val / (2.0 * width), 0.0)
    if kind is OptionKind.PUT:
        out = out - (np.exp(x) * (math.sinh(width) / width) - strike)
    return out[()] if out.ndim == 0 else out


def parity_gap(call: float, put: float, m: MarketParams) -> float:
    """``C - P - (Z0 e^{-dT} - K e^{-rT})``."""
    fwd = m.spot * math.exp(-m.dividend * m.maturity) - m.strike * math.exp(-m.rate * m.maturity)
    return call - put - fwd
