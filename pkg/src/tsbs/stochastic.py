"""Monte Carlo and subordinated-binomial pricers for the tempered subdiffusive model.

The asset is a GBM run on the operational clock ``S(t)``, the first passage
of a tempered stable subordinator ``W`` above ``t``. Given ``S = S(T)`` the
option is worth the classical Black-Scholes (or CRR) value with time to
maturity ``S``, so the pricers average closed-form values over draws of
``S(T)``.

Every repetition ``i`` draws from its own generator
``PCG64(SeedSequence(seed, spawn_key=(i, ...)))``, so results do not depend on
how repetitions are scheduled.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import mpmath
import numpy as np
from scipy.stats import binom

from tsbs.market import MarketParams, OptionKind, SubdiffusionParams, bs_price, payoff

REJECTION_WARN = 30.0
MAX_PASSAGE_STEPS = 1 << 24


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self, sub: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, sub))
        return np.random.Generator(np.random.PCG64(ss))


def sample_stable_increment(alpha: float, dtau: float, rng: np.random.Generator, size=None):
    """Increment of the ``alpha``-stable subordinator over ``dtau``.

    Kanter's representation: with ``U ~ U(0, pi)`` and ``E ~ Exp(1)``,
    ``sin(aU) / sin(U)^(1/a) * (sin((1-a)U) / E)^((1-a)/a)`` has Laplace
    transform ``exp(-s^a)``; scaling by ``dtau^(1/a)`` gives ``exp(-dtau s^a)``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not dtau > 0:
        raise ValueError("dtau must be positive")
    u = math.pi * (1.0 - rng.random(size))  # (0, pi]
    e = rng.standard_exponential(size)
    x = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha) * (np.sin((1.0 - alpha) * u) / e) ** (
        (1.0 - alpha) / alpha
    )
    return dtau ** (1.0 / alpha) * x


def sample_tempered_increment(
    alpha: float, lam: float, dtau: float, rng: np.random.Generator, size=None
):
    """Increment of the tempered subordinator by exponential-tilting rejection.

    Proposals are stable increments accepted with probability ``exp(-lam X)``;
    the mean number of proposals per draw is ``exp(dtau lam^alpha)``.
    """
    if lam < 0:
        raise ValueError("tempering rate must be nonnegative")
    if lam == 0:
        return sample_stable_increment(alpha, dtau, rng, size)
    cost = dtau * lam ** alpha
    if cost > REJECTION_WARN:
        warnings.warn(
            f"rejection sampler expects exp({cost:.1f}) proposals per increment",
            RuntimeWarning,
            stacklevel=2,
        )
    if size is None:
        while True:
            x = sample_stable_increment(alpha, dtau, rng)
            if rng.random() <= math.exp(-lam * x):
                return x
    out = np.empty(size)
    pending = np.arange(out.size)
    flat = out.reshape(-1)
    while pending.size:
        x = sample_stable_increment(alpha, dtau, rng, pending.size)
        ok = rng.random(pending.size) <= np.exp(-lam * x)
        flat[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


@dataclass(frozen=True)
class SubordinatorSample:
    """Grid first passage ``S(t)``; ``value == steps * dtau``."""

    value: float
    steps: int
    dtau: float
    path: np.ndarray | None = None


class HorizonOverflow(RuntimeError):
    pass


def _first_passage(alpha, lam, levels, dtau, rng, keep_path=False):
    """Lattice indices of the first passage of ``W`` above each level (sorted)."""
    top = levels[-1]
    chunk = max(int(math.ceil(top / dtau)), 1)
    parts = []
    total = 0.0
    n = 0
    while total <= top:
        if n >= MAX_PASSAGE_STEPS:
            raise HorizonOverflow(
                f"W did not pass {top} within {n} steps of {dtau} (alpha={alpha}, lam={lam})"
            )
        inc = sample_tempered_increment(alpha, lam, dtau, rng, chunk)
        part = total + np.cumsum(inc)
        parts.append(part)
        total = part[-1]
        n += chunk
        chunk *= 2
    w = np.concatenate(parts)
    # first j (1-based) with W_j > level
    idx = np.searchsorted(w, levels, side="right") + 1
    return idx, (w if keep_path else None)


def inverse_subordinator_sample(
    alpha: float,
    lam: float,
    t: float,
    k: int,
    rng: np.random.Generator,
    keep_path: bool = False,
) -> SubordinatorSample:
    """First lattice time ``j * dtau`` with ``W > t``, ``dtau = t / k``.

    The horizon doubles until the passage occurs. The lattice overshoots the
    true passage time by less than ``dtau``.
    """
    if not t > 0 or k < 1:
        raise ValueError("need t > 0 and k >= 1")
    dtau = t / k
    idx, path = _first_passage(alpha, lam, np.array([t]), dtau, rng, keep_path)
    steps = int(idx[0])
    return SubordinatorSample(steps * dtau, steps, dtau, path)


@dataclass(frozen=True)
class PathParams:
    market: MarketParams
    sub: SubdiffusionParams
    drift: float


@dataclass(frozen=True)
class PathResult:
    t: np.ndarray
    gbm: np.ndarray
    tempered_gbm: np.ndarray
    inverse_subordinator: np.ndarray
    lattice_gbm: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,gbm,tempered_gbm,inverse_subordinator\n")
            for row in zip(self.t, self.gbm, self.tempered_gbm, self.inverse_subordinator):
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def simulate_tempered_gbm_path(p: PathParams, t_grid, stream: RngStream) -> PathResult:
    """One GBM path, its time change by ``S(t)``, and ``S(t)`` on a uniform grid.

    The Brownian motion and the subordinator use independent substreams. Both
    live on the operational lattice with the calendar step, so the time-changed
    path only takes values of the GBM on that lattice.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
        raise ValueError("time grid must be 1-D and start at 0")
    h = t[1] - t[0]
    if h <= 0 or not np.allclose(np.diff(t), h, rtol=1e-9, atol=0.0):
        raise ValueError("time grid must be uniform and increasing")
    m, sub = p.market, p.sub
    rng_w = stream.generator(0)
    rng_b = stream.generator(1)
    idx, _ = _first_passage(sub.alpha, sub.lam, t[1:], h, rng_w)
    idx = np.concatenate([[0], idx])
    n_lat = max(int(idx[-1]), t.size - 1)
    bm = np.concatenate([[0.0], np.cumsum(rng_b.standard_normal(n_lat) * math.sqrt(h))])
    tau = h * np.arange(n_lat + 1)
    lattice = m.spot * np.exp(p.drift * tau + m.volatility * bm)
    return PathResult(
        t=t,
        gbm=lattice[: t.size],
        tempered_gbm=lattice[idx],
        inverse_subordinator=h * idx,
        lattice_gbm=lattice,
    )


@dataclass(frozen=True)
class PricerEstimate:
    mean: float
    stderr: float
    M: int
    k: int
    seed: int
    method: str = "mc"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


CONVENTIONS = ("operational", "literal")


def _operational_times(m, sub, M, k, seed, convention):
    sub.check_supported()
    if M < 2:
        raise ValueError("need at least 2 repetitions")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    s = np.empty(M)
    for i in range(M):
        rng = RngStream(seed, i).generator()
        s[i] = inverse_subordinator_sample(sub.alpha, sub.lam, m.maturity, k, rng).value
    if convention == "operational":
        return s, np.ones(M, dtype=bool)
    # reading tau = T - S with a zero contribution once S passes T
    live = s <= m.maturity
    return np.where(live, m.maturity - s, 0.0), live


def _estimate(values, M, k, seed, method):
    return PricerEstimate(
        float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(M)), M, k, seed, method
    )


def mc_price(
    m: MarketParams,
    sub: SubdiffusionParams,
    kind: OptionKind | str = OptionKind.CALL,
    M: int = 400,
    k: int = 50,
    seed: int = 0,
    convention: str = "operational",
) -> PricerEstimate:
    """Average of Black-Scholes values over ``M`` draws of ``S(T)``.

    ``convention="operational"`` prices each draw with time to maturity
    ``S(T)``, which is the representation solved by the FD scheme.
    ``"literal"`` uses ``T - S(T)`` and zero when ``S(T) > T``.
    """
    tau, live = _operational_times(m, sub, M, k, seed, convention)
    vals = np.where(live, bs_price(m, kind, tau), 0.0)
    return _estimate(vals, M, k, seed, "mc")


def crr_tree_price(m: MarketParams, kind: OptionKind | str, tau: float, steps: int) -> float:
    """European Cox-Ross-Rubinstein value with ``steps`` periods over ``tau``."""
    kind = OptionKind.parse(kind)
    if steps < 1:
        raise ValueError("need at least one tree step")
    if tau <= 0:
        return float(payoff(m.spot, m.strike, kind))
    dt = tau / steps
    up = math.exp(m.volatility * math.sqrt(dt))
    down = 1.0 / up
    p = (math.exp((m.rate - m.dividend) * dt) - down) / (up - down)
    j = np.arange(steps + 1)
    terminal = m.spot * up ** j * down ** (steps - j)
    probs = binom.pmf(j, steps, p)
    return float(math.exp(-m.rate * tau) * np.dot(probs, payoff(terminal, m.strike, kind)))


def crr_price(
    m: MarketParams,
    sub: SubdiffusionParams,
    kind: OptionKind | str = OptionKind.CALL,
    M: int = 400,
    k: int = 40,
    seed: int = 0,
    subordinator_k: int | None = None,
    convention: str = "operational",
) -> PricerEstimate:
    """Average of ``k``-step binomial values over ``M`` draws of ``S(T)``.

    The subordinator lattice uses ``subordinator_k`` points (default ``k``);
    with equal seeds and lattice sizes the draws coincide with :func:`mc_price`.
    """
    sk = subordinator_k or k
    tau, live = _operational_times(m, sub, M, sk, seed, convention)
    vals = np.array([crr_tree_price(m, kind, s, k) if ok else 0.0 for s, ok in zip(tau, live)])
    return _estimate(vals, M, k, seed, "crr")


def expected_discount(alpha: float, lam: float, u: float, t: float) -> float:
    """``E exp(-u S(t))`` by numerical inversion of its Laplace transform in ``t``.

    The transform is ``((s+lam)^a - lam^a) / (s (u + (s+lam)^a - lam^a))``.
    """
    if u == 0:
        return 1.0
    a = mpmath.mpf(alpha)
    lm = mpmath.mpf(lam)

    def transform(s):
        psi = (s + lm) ** a - lm ** a
        return psi / (s * (u + psi))

    with mpmath.workdps(30):
        return float(mpmath.invertlaplace(transform, t, method="talbot"))


def model_forward(m: MarketParams, sub: SubdiffusionParams) -> float:
    """``Z0 E e^{-delta S(T)} - K E e^{-r S(T)}``: call minus put under the model."""
    return m.spot * expected_discount(sub.alpha, sub.lam, m.dividend, m.maturity) - m.strike * (
        expected_discount(sub.alpha, sub.lam, m.rate, m.maturity)
    )
