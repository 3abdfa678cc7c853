"""Analytic stability/convergence conditions of the weighted scheme and time rescaling.

All conditions have the form ``lhs >= rhs``; a report carries both sides and
their difference. Memory sums go through :func:`math.fsum`, since margins of a
few ``1e-4`` are common and ``N`` may be large.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from tsbs.fd import GridSpec, MemoryWeights, memory_weights
from tsbs.market import MarketParams, PdeCoefficients, SubdiffusionParams

CONDITION_IDS = ("weighted-22", "implicit-oby1", "convergence-lemma")

# "max-then-add": sqrt(max(X1^2, X2^2) + Y^2), matching the bound used inside
# the stability proof. "literal": sqrt(max(X1^2, X2^2 + Y^2)).
GROUPINGS = ("max-then-add", "literal")


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    satisfied: bool
    lhs: float
    rhs: float
    margin: float
    parameters: dict = field(default_factory=dict)

    @classmethod
    def build(cls, condition: str, lhs: float, rhs: float, **parameters) -> "ConditionReport":
        if condition not in CONDITION_IDS:
            raise ValueError(f"unknown condition id {condition!r}")
        margin = lhs - rhs
        if math.isnan(margin):
            # inf - inf; treat an infinite left side as dominating
            margin = math.inf if lhs == math.inf else -math.inf
        return cls(condition, bool(margin >= 0), float(lhs), float(rhs), float(margin), parameters)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _weights_for(sub: SubdiffusionParams, N: int, dt: float, w: MemoryWeights | None):
    if w is None:
        return memory_weights(sub.alpha, N, dt)
    if w.N != N:
        raise ValueError(f"memory weights hold N={w.N}, grid has N={N}")
    return w


def check_weighted_stability(
    coeffs: PdeCoefficients,
    sub: SubdiffusionParams,
    grid: GridSpec,
    dt: float,
    w: MemoryWeights | None = None,
    grouping: str = "max-then-add",
) -> ConditionReport:
    """Sufficient stability condition of the weighted scheme for any ``theta``."""
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}")
    w = _weights_for(sub, grid.N, dt, w)
    a, b, c = coeffs.diffusion, coeffs.drift, coeffs.discount
    th, lam, d, dx, N = grid.theta, sub.lam, w.d, grid.dx, grid.N
    la = sub.lam_alpha
    grow = math.exp(lam * dt)

    lhs = min(
        abs((1 - th) * (c * d - d * la + 1) + th * grow),
        abs((1 - th) * (4 * a * d / dx ** 2 + c * d - d * la + 1) + th * grow),
    )

    base = (1 - w.b[1]) * (th + (1 - th) * math.exp(-lam * dt))
    x1 = base - 4 * a * d * th / dx ** 2 - c * d * th + la * d * th
    x2 = base - c * d * th + la * d * th
    y = b * d * th / dx
    if grouping == "max-then-add":
        root = math.sqrt(max(x1 * x1, x2 * x2) + y * y)
    else:
        root = math.sqrt(max(x1 * x1, x2 * x2 + y * y))

    j = np.arange(N)
    terms = (w.b[:-1] - w.b[1:]) * (th * np.exp(-lam * j * dt) + (1 - th) * np.exp(-lam * (j + 1) * dt))
    tail = math.fsum(terms[1:])
    full = math.fsum(terms)
    rhs = root + tail + abs(th * grow + 1 - th - d * la - full)
    return ConditionReport.build(
        "weighted-22",
        lhs,
        rhs,
        alpha=sub.alpha,
        lam=lam,
        theta=th,
        dt=dt,
        dx=dx,
        N=N,
        a=a,
        b=b,
        c=c,
        grouping=grouping,
    )


def check_implicit_condition(
    sub: SubdiffusionParams,
    c: float,
    dt: float,
    N: int,
    condition: str = "convergence-lemma",
) -> ConditionReport:
    """Conditions for the implicit (``theta = 0``) scheme.

    ``"convergence-lemma"``: ``2 d (c - lam^alpha) + 1 >= S``;
    ``"implicit-oby1"``: ``1 - d lam^alpha >= S``, where
    ``S = sum_{j<N} (b_j - b_{j+1}) e^{-lam dt (j+1)}``.
    """
    w = memory_weights(sub.alpha, N, dt)
    la = sub.lam_alpha
    j = np.arange(N)
    s = math.fsum((w.b[:-1] - w.b[1:]) * np.exp(-sub.lam * dt * (j + 1)))
    if condition == "convergence-lemma":
        if math.isinf(c):
            lhs = math.inf
        else:
            lhs = 2.0 * w.d * (c - la) + 1.0
    elif condition == "implicit-oby1":
        lhs = 1.0 - w.d * la
    else:
        raise ValueError(f"condition must be 'convergence-lemma' or 'implicit-oby1', got {condition!r}")
    return ConditionReport.build(condition, lhs, s, alpha=sub.alpha, lam=sub.lam, c=c, dt=dt, N=N)


def _rescaled_rate(r: float, beta: float) -> float:
    if beta == 1.0:
        return r
    try:
        # (1 + r)^(1/beta) - 1 without losing digits when the result is small
        return math.expm1(math.log1p(r) / beta)
    except OverflowError:
        raise ValueError(f"rescaled rate overflows at beta={beta:.3g}") from None


def rescale_parameters(
    m: MarketParams, sub: SubdiffusionParams, beta: float
) -> tuple[MarketParams, SubdiffusionParams]:
    """Change of time unit ``T* = beta T``.

    ``alpha`` is unchanged, ``lam* = lam / beta`` and the rate compounds as
    ``r* = (1 + r)^(1/beta) - 1``. Volatility is scaled as ``sigma / sqrt(beta)``
    to keep the total variance ``sigma^2 T``; this last step is our own choice,
    not part of the usual time-unit change.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not m.rate > 0:
        raise ValueError(f"time rescaling needs a positive rate, got r={m.rate}")
    m_new = m.replace(
        maturity=beta * m.maturity,
        rate=_rescaled_rate(m.rate, beta),
        volatility=m.volatility / math.sqrt(beta),
    )
    return m_new, SubdiffusionParams(sub.alpha, sub.lam / beta)


@dataclass(frozen=True)
class RescaleResult:
    beta: float
    market: MarketParams
    sub: SubdiffusionParams
    report: ConditionReport

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "market": asdict(self.market),
            "subdiffusion": asdict(self.sub),
            "report": self.report.to_dict(),
        }


class InfeasibleRescaling(ValueError):
    pass


BETA_FLOOR = 1e-9


def find_stabilizing_beta(
    m: MarketParams, sub: SubdiffusionParams, grid: GridSpec, refine: int = 40
) -> RescaleResult:
    """Largest ``beta <= 1`` (to bisection accuracy) passing the convergence lemma.

    Halves ``beta`` from 1 until the condition holds on the rescaled problem
    (same ``N``), then bisects between the passing value and the last failing
    one. Only ever returns a ``beta`` whose report is satisfied.
    """
    if not m.rate > 0:
        raise ValueError(f"time rescaling needs a positive rate, got r={m.rate}")

    def check(beta):
        m2, s2 = rescale_parameters(m, sub, beta)
        rep = check_implicit_condition(s2, m2.rate, grid.dt(m2.maturity), grid.N)
        return m2, s2, rep

    beta = 1.0
    m2, s2, rep = check(beta)
    if rep.satisfied:
        return RescaleResult(beta, m2, s2, rep)
    fail = beta
    while not rep.satisfied:
        fail = beta
        beta *= 0.5
        if beta < BETA_FLOOR:
            raise InfeasibleRescaling(
                f"no beta >= {BETA_FLOOR} satisfies the convergence condition "
                f"(alpha={sub.alpha}, lam={sub.lam}, r={m.rate}, N={grid.N})"
            )
        try:
            m2, s2, rep = check(beta)
        except ValueError as exc:
            raise InfeasibleRescaling(str(exc)) from None
    best = (beta, m2, s2, rep)
    lo, hi = beta, fail
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        cand = check(mid)
        if cand[2].satisfied:
            lo = mid
            best = (mid, *cand)
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return RescaleResult(*best)


def optimal_theta_subdiffusive(alpha: float) -> float:
    """``(2 - 2^(1-alpha)) / (3 - 2^(1-alpha))``, the untempered optimum."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = 2.0 ** (1.0 - alpha)
    return (2.0 - p) / (3.0 - p)
