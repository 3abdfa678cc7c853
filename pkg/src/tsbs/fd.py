"""Weighted finite-difference scheme for the tempered time-fractional pricing PDE.

The unknown is ``u(x, t)``, the option value as a function of log-price ``x``
and time to maturity ``t``. The time operator is the tempered Caputo
derivative, discretised with the L1 formula whose memory weights are
``b_j = (j+1)^(1-alpha) - j^(1-alpha)``; space derivatives are central.

``theta`` blends the implicit scheme (``theta = 0``) with the explicit one
(``theta = 1``); the level-``k+1`` system matrix is ``C = theta I + (1-theta) A``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma

from tsbs.market import (
    MarketParams,
    OptionKind,
    PdeCoefficients,
    SubdiffusionParams,
    payoff,
    pde_coefficients,
    smoothed_payoff,
)

U0_WEIGHT_READINGS = ("printed", "uniform")


class SchemeError(ArithmeticError):
    """The level system could not be solved (zero pivot)."""


class StabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    n: int
    N: int
    theta: float = 0.0

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.n < 3:
            raise ValueError(f"need n >= 3 space intervals, got {self.n}")
        if self.N < 2:
            raise ValueError(f"need N >= 2 time steps, got {self.N}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    def dt(self, maturity: float) -> float:
        return maturity / self.N

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n + 1)

    def validate(self, m: MarketParams) -> None:
        for name, z in (("spot", m.spot), ("strike", m.strike)):
            if z <= 0:
                continue
            if not self.x_min < math.log(z) < self.x_max:
                raise ValueError(
                    f"ln({name})={math.log(z):.6g} is outside the grid "
                    f"({self.x_min:.6g}, {self.x_max:.6g})"
                )

    def aligned(self, spot: float) -> "GridSpec":
        """Translate the window by less than one step so ``ln spot`` is a node."""
        x0 = math.log(spot)
        pos = (x0 - self.x_min) / self.dx
        shift = (pos - math.floor(pos)) * self.dx
        if shift < 1e-12 * self.dx or self.dx - shift < 1e-12 * self.dx:
            return self
        if shift > 0.5 * self.dx:
            shift -= self.dx
        return GridSpec(self.x_min + shift, self.x_max + shift, self.n, self.N, self.theta)

    def with_counts(self, n: int | None = None, N: int | None = None) -> "GridSpec":
        return GridSpec(self.x_min, self.x_max, n or self.n, N or self.N, self.theta)


@dataclass(frozen=True)
class MemoryWeights:
    alpha: float
    b: np.ndarray
    d: float

    @property
    def N(self) -> int:
        return len(self.b) - 1


def memory_weights(alpha: float, N: int, dt: float) -> MemoryWeights:
    """L1 weights ``b_0..b_N`` and the scale ``d = Gamma(2-alpha) dt^alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if N < 1 or not dt > 0:
        raise ValueError("need N >= 1 and dt > 0")
    j = np.arange(1, N + 1, dtype=float)
    b = np.empty(N + 1)
    b[0] = 1.0
    # (j+1)^p - j^p = j^p * expm1(p * log1p(1/j)); avoids cancellation at large j
    b[1:] = j ** (1.0 - alpha) * np.expm1((1.0 - alpha) * np.log1p(1.0 / j))
    b.setflags(write=False)
    return MemoryWeights(alpha, b, float(gamma(2.0 - alpha) * dt ** alpha))


@dataclass(frozen=True)
class SchemeOperators:
    """Tridiagonal ``A`` (implicit), ``B`` (explicit) and ``C``, stored by diagonals.

    ``*_lower[i]`` couples row ``i+1`` to column ``i``; ``*_upper[i]`` couples
    row ``i`` to column ``i+1``.
    """

    a_lower: float
    a_diag: float
    a_upper: float
    b_lower: float
    b_diag: float
    b_upper: float
    theta: float
    size: int

    @property
    def c_lower(self) -> float:
        return (1.0 - self.theta) * self.a_lower

    @property
    def c_diag(self) -> float:
        return self.theta + (1.0 - self.theta) * self.a_diag

    @property
    def c_upper(self) -> float:
        return (1.0 - self.theta) * self.a_upper

    @staticmethod
    def _dense(lo, di, up, size):
        return np.diag(np.full(size, di)) + np.diag(np.full(size - 1, lo), -1) + np.diag(
            np.full(size - 1, up), 1
        )

    def dense_a(self) -> np.ndarray:
        return self._dense(self.a_lower, self.a_diag, self.a_upper, self.size)

    def dense_b(self) -> np.ndarray:
        return self._dense(self.b_lower, self.b_diag, self.b_upper, self.size)

    def dense_c(self) -> np.ndarray:
        return self._dense(self.c_lower, self.c_diag, self.c_upper, self.size)

    def apply_b(self, v: np.ndarray) -> np.ndarray:
        """``B`` times the interior of a full level ``v`` (length ``size + 2``).

        Boundary entries of ``v`` are ignored; they enter through ``G``.
        """
        inner = v[1:-1]
        out = self.b_diag * inner
        out[1:] += self.b_lower * inner[:-1]
        out[:-1] += self.b_upper * inner[1:]
        return out

    @property
    def diagonally_dominant(self) -> bool:
        return abs(self.c_diag) >= abs(self.c_lower) + abs(self.c_upper)

    @cached_property
    def _factors(self) -> tuple[list, list]:
        # Thomas elimination without pivoting; C is constant in time, so the
        # pivots are computed once per solve.
        lo, di, up = self.c_lower, self.c_diag, self.c_upper
        piv = [0.0] * self.size
        mult = [0.0] * self.size
        p = di
        for i in range(self.size):
            if i:
                mult[i] = lo / piv[i - 1]
                p = di - mult[i] * up
            if p == 0.0 or not math.isfinite(p):
                raise SchemeError(
                    f"zero pivot in row {i} of C (theta={self.theta}, diag={di:.6g}, "
                    f"lower={lo:.6g}, upper={up:.6g}); parameters violate the stability gate"
                )
            piv[i] = p
        return piv, mult

    def solve_c(self, rhs: np.ndarray) -> np.ndarray:
        if self.theta == 1.0:
            return np.array(rhs, dtype=float)
        piv, mult = self._factors
        up = self.c_upper
        y = rhs.tolist()
        for i in range(1, self.size):
            y[i] -= mult[i] * y[i - 1]
        y[-1] /= piv[-1]
        for i in range(self.size - 2, -1, -1):
            y[i] = (y[i] - up * y[i + 1]) / piv[i]
        return np.array(y)


def assemble_operators(
    coeffs: PdeCoefficients, sub: SubdiffusionParams, grid: GridSpec, w: MemoryWeights
) -> SchemeOperators:
    a, b, c, d = coeffs.diffusion, coeffs.drift, coeffs.discount, w.d
    dx = grid.dx
    diff = a * d / dx ** 2
    adv = b * d / (2.0 * dx)
    react = c * d - sub.lam_alpha * d
    return SchemeOperators(
        a_lower=-(diff - adv),
        a_diag=1.0 + 2.0 * diff + react,
        a_upper=-(diff + adv),
        b_lower=diff - adv,
        b_diag=-(2.0 * diff + react),
        b_upper=diff + adv,
        theta=grid.theta,
        size=grid.n - 1,
    )


def boundary_values(
    m: MarketParams, grid: GridSpec, kind: OptionKind | str = OptionKind.CALL
) -> tuple[np.ndarray, np.ndarray]:
    """Values at ``x_min`` and ``x_max`` for every time level.

    Calls use ``p = 0`` and ``q(t) = e^{x_max} - K e^{-r(T-t)}`` (dividend-adjusted
    when ``m.dividend != 0``); puts are the parity counterparts.
    """
    kind = OptionKind.parse(kind)
    t = grid.dt(m.maturity) * np.arange(grid.N + 1)
    rem = m.maturity - t
    far = math.exp(grid.x_max) * np.exp(-m.dividend * rem) - m.strike * np.exp(-m.rate * rem)
    near = math.exp(grid.x_min) * np.exp(-m.dividend * rem) - m.strike * np.exp(-m.rate * rem)
    if kind is OptionKind.CALL:
        return np.zeros_like(t), far
    return -near, np.zeros_like(t)


def boundary_vector(
    k: int,
    grid: GridSpec,
    coeffs: PdeCoefficients,
    w: MemoryWeights,
    left: float,
    right: float,
) -> np.ndarray:
    """``G^k``: boundary contributions to the first and last interior rows."""
    if not 0 <= k <= grid.N:
        raise ValueError(f"time level {k} outside 0..{grid.N}")
    diff = coeffs.diffusion * w.d / grid.dx ** 2
    adv = coeffs.drift * w.d / (2.0 * grid.dx)
    g = np.zeros(grid.n - 1)
    g[0] = (diff - adv) * left
    g[-1] += (diff + adv) * right
    return g


def history_weights(w: MemoryWeights, lam: float, dt: float, theta: float) -> np.ndarray:
    """``(b_j - b_{j+1}) ((1-theta) e^{-(j+1) lam dt} + theta e^{-j lam dt})`` for ``j < N``."""
    j = np.arange(w.N)
    diffs = w.b[:-1] - w.b[1:]
    return diffs * ((1.0 - theta) * np.exp(-(j + 1) * dt * lam) + theta * np.exp(-j * dt * lam))


def step(
    levels: np.ndarray,
    k: int,
    ops: SchemeOperators,
    w: MemoryWeights,
    boundary: Callable[[int], np.ndarray],
    lam: float,
    dt: float,
    theta: float,
    hist_w: np.ndarray | None = None,
    u0_weight: str = "printed",
) -> np.ndarray:
    """Advance to level ``k+1`` given full levels ``0..k`` (rows of ``levels``).

    ``boundary(j)`` returns ``G^j``. Returns the interior of level ``k+1``.

    ``u0_weight`` picks how the constant-in-history term is weighted: the
    first-step equation multiplies only ``d lam^alpha`` by ``e^{-lam dt}`` in
    its explicit part, while the general-step equation multiplies
    the whole ``(1 - d lam^alpha)``. ``"printed"`` follows each equation as
    written; ``"uniform"`` uses the first-step form on every level.
    """
    if u0_weight not in U0_WEIGHT_READINGS:
        raise ValueError(f"u0_weight must be one of {U0_WEIGHT_READINGS}")
    la = lam ** w.alpha
    d = w.d
    decay = math.exp(-lam * dt)
    u0 = levels[0, 1:-1]

    if k == 0 or u0_weight == "uniform":
        c0 = (1.0 - theta) * (1.0 - d * la) + theta * (1.0 - d * la * decay)
    else:
        c0 = (1.0 - theta) * (1.0 - d * la) + theta * (1.0 - d * la) * decay
    rhs = c0 * u0

    if k == 0:
        rhs = rhs + (1.0 - theta) * boundary(1) + theta * boundary(0)
    else:
        if hist_w is None:
            hist_w = history_weights(w, lam, dt, theta)
        h = hist_w[:k]
        # rows k, k-1, ..., 1 pair with j = 0..k-1
        rhs = rhs + h @ levels[k:0:-1, 1:-1] - h.sum() * u0
        rhs = rhs + (1.0 - theta) * boundary(k + 1) + theta * decay * boundary(k)
    if theta:
        rhs = rhs + theta * decay * ops.apply_b(levels[k])
    return ops.solve_c(rhs)


@dataclass(frozen=True)
class SolutionSurface:
    values: np.ndarray
    grid: GridSpec
    market: MarketParams
    sub: SubdiffusionParams
    kind: OptionKind = OptionKind.CALL
    smoothing: float | None = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def t(self) -> np.ndarray:
        return self.grid.dt(self.market.maturity) * np.arange(self.grid.N + 1)

    def price(self, spot: float | None = None) -> float:
        return price_at_spot(self, self.market.spot if spot is None else spot)

    def max_norm(self) -> float:
        v = self.values
        return float(np.max(np.abs(v))) if np.all(np.isfinite(v)) else math.inf

    def to_csv(self, path) -> None:
        """Write ``x,t,u`` rows, one time level after another."""
        x, t = self.x, self.t
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["x", "t", "u"])
            for k in range(len(t)):
                for i in range(len(x)):
                    out.writerow(
                        [format(x[i], ".17g"), format(t[k], ".17g"), format(self.values[k, i], ".17g")]
                    )


def initial_condition(
    x: np.ndarray, m: MarketParams, kind: OptionKind, smoothing: float | None
) -> np.ndarray:
    if smoothing:
        return smoothed_payoff(x, m.strike, smoothing, kind)
    return payoff(np.exp(x), m.strike, kind)


def solve(
    m: MarketParams,
    sub: SubdiffusionParams,
    grid: GridSpec,
    smoothing: float | None = None,
    kind: OptionKind | str = OptionKind.CALL,
    align: bool = True,
    u0_weight: str = "printed",
) -> SolutionSurface:
    """March the weighted scheme from expiry (``t = 0``) to ``t = T``.

    The whole history is kept, so cost is ``O(N^2 n)`` time and ``O(N n)``
    memory. With ``align`` the window is translated so that ``ln(spot)`` is a
    grid node. ``smoothing`` is the half-width of the payoff averaging window.
    """
    kind = OptionKind.parse(kind)
    sub.check_supported()
    if align:
        grid = grid.aligned(m.spot)
    grid.validate(m)

    coeffs = pde_coefficients(m)
    dt = grid.dt(m.maturity)
    w = memory_weights(sub.alpha, grid.N, dt)
    ops = assemble_operators(coeffs, sub, grid, w)
    if not ops.diagonally_dominant:
        warnings.warn(
            f"C is not diagonally dominant (theta={grid.theta}, alpha={sub.alpha}, "
            f"lam={sub.lam}, dx={grid.dx:.4g}, dt={dt:.4g}); check the stability gate",
            StabilityWarning,
            stacklevel=2,
        )

    left, right = boundary_values(m, grid, kind)
    levels = np.empty((grid.N + 1, grid.n + 1))
    levels[0] = initial_condition(grid.x, m, kind, smoothing)
    levels[:, 0] = left
    levels[:, -1] = right

    def g(j):
        return boundary_vector(j, grid, coeffs, w, left[j], right[j])

    hist_w = history_weights(w, sub.lam, dt, grid.theta)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.N):
            levels[k + 1, 1:-1] = step(
                levels, k, ops, w, g, sub.lam, dt, grid.theta, hist_w, u0_weight
            )
    levels.setflags(write=False)
    return SolutionSurface(levels, grid, m, sub, kind, smoothing)


def price_at_spot(s: SolutionSurface, spot: float) -> float:
    """Final-level value at ``x = ln(spot)``; cubic Lagrange off the nodes."""
    x0 = math.log(spot)
    g = s.grid
    if not g.x_min <= x0 <= g.x_max:
        raise ValueError(f"spot {spot} is outside the grid window")
    row = s.values[-1]
    pos = (x0 - g.x_min) / g.dx
    i = int(round(pos))
    if abs(pos - i) < 1e-9:
        return float(row[i])
    lo = min(max(int(math.floor(pos)) - 1, 0), g.n - 3)
    idx = np.arange(lo, lo + 4)
    xs = g.x_min + g.dx * idx
    total = 0.0
    for a in range(4):
        basis = 1.0
        for b in range(4):
            if a != b:
                basis *= (x0 - xs[b]) / (xs[a] - xs[b])
        total += basis * row[idx[a]]
    return float(total)


@dataclass
class ConvergenceResult:
    axis: str
    counts: list[int]
    errors: list[float]
    orders: list[float]
    reference: str
    conclusive: bool = field(default=True)

    @property
    def order(self) -> float:
        """Order from the finest pair of errors."""
        return self.orders[-1]

    def rows(self) -> list[dict]:
        out = []
        for i, cnt in enumerate(self.counts):
            out.append(
                {
                    "axis": self.axis,
                    "count": cnt,
                    "error": self.errors[i] if i < len(self.errors) else math.nan,
                    "order": self.orders[i - 1] if 0 < i <= len(self.orders) else math.nan,
                }
            )
        return out


def _norm_dx(v: np.ndarray, dx: float) -> float:
    return math.sqrt(dx * float(np.sum(v[1:-1] ** 2)))


def convergence_study(
    m: MarketParams,
    sub: SubdiffusionParams,
    grid: GridSpec,
    axis: str = "time",
    levels: int = 4,
    smoothing: bool = True,
    reference: str = "successive",
) -> ConvergenceResult:
    """Observed order of the scheme by self-convergence on nested grids.

    ``grid`` holds the coarsest count on the refined axis and the fixed count
    on the other. Errors are discrete L2 norms of final-level differences on
    the coarser grid's nodes. ``reference="successive"`` compares each level
    with the next finer one; ``"finest"`` compares every level with the finest.
    """
    if levels < 3:
        raise ValueError("need at least 3 refinement levels")
    if axis not in ("time", "space"):
        raise ValueError("axis must be 'time' or 'space'")
    if reference not in ("successive", "finest"):
        raise ValueError("reference must be 'successive' or 'finest'")
    base = grid.aligned(m.spot)
    if axis == "time":
        grids = [base.with_counts(N=base.N * 2 ** i) for i in range(levels)]
    else:
        grids = [base.with_counts(n=base.n * 2 ** i) for i in range(levels)]
    finals = []
    for gr in grids:
        width = gr.dx if smoothing else None
        s = solve(m, sub, gr, smoothing=width, align=False)
        finals.append(s.values[-1])

    def coarse(i, j):
        stride = (len(finals[j]) - 1) // (len(finals[i]) - 1)
        return finals[j][::stride]

    if reference == "successive":
        errs = [_norm_dx(finals[i] - coarse(i, i + 1), grids[i].dx) for i in range(levels - 1)]
    else:
        errs = [_norm_dx(finals[i] - coarse(i, levels - 1), grids[i].dx) for i in range(levels - 1)]
    orders = [math.log2(errs[i] / errs[i + 1]) if errs[i + 1] > 0 else math.inf for i in range(len(errs) - 1)]
    conclusive = all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    counts = [g.N if axis == "time" else g.n for g in grids]
    if not conclusive:
        warnings.warn(f"non-monotone {axis} error sequence {errs}; order estimate inconclusive")
    return ConvergenceResult(axis, counts, errs, orders, reference, conclusive)

