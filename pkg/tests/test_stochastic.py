import json
import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from oracles import crr_one_step, levy_median
from tsbs.market import MarketParams, SubdiffusionParams, bs_price
from tsbs.stochastic import (
    PathParams,
    RngStream,
    crr_price,
    crr_tree_price,
    expected_discount,
    inverse_subordinator_sample,
    mc_price,
    model_forward,
    sample_stable_increment,
    sample_tempered_increment,
    simulate_tempered_gbm_path,
)

FIG4 = MarketParams(spot=1.0, strike=2.0, maturity=0.5, rate=0.04, volatility=1.0)


def rng(seed=0, stream=0):
    return RngStream(seed, stream).generator()


# increments ----------------------------------------------------------------


def test_stable_increments_positive():
    x = sample_stable_increment(0.3, 0.01, rng(), 20_000)
    assert np.all(x > 0) and np.all(np.isfinite(x))


def test_half_stable_is_levy():
    # Laplace transform exp(-dtau sqrt(2 * s / 2)): Levy with scale c = dtau^2 / 2
    dtau = 0.7
    x = sample_stable_increment(0.5, dtau, rng(1), 100_000)
    med = levy_median(dtau ** 2 / 2)
    assert np.median(x) == pytest.approx(med, rel=0.02)
    assert stats.kstest(x, stats.levy(scale=dtau ** 2 / 2).cdf).pvalue > 0.01


def test_stable_self_scaling():
    a, dtau = 0.7, 0.05
    x = sample_stable_increment(a, dtau, rng(2), 10_000)
    y = dtau ** (1 / a) * sample_stable_increment(a, 1.0, rng(3), 10_000)
    assert stats.ks_2samp(x, y).pvalue > 0.01


def test_stable_rejects():
    with pytest.raises(ValueError):
        sample_stable_increment(1.0, 0.1, rng())
    with pytest.raises(ValueError):
        sample_stable_increment(0.5, 0.0, rng())


def test_untempered_shares_the_stable_stream():
    a = sample_tempered_increment(0.6, 0.0, 0.1, rng(5), 100)
    b = sample_stable_increment(0.6, 0.1, rng(5), 100)
    assert np.array_equal(a, b)
    assert sample_tempered_increment(0.6, 0.0, 0.1, rng(5)) == sample_stable_increment(0.6, 0.1, rng(5))


@pytest.mark.parametrize("alpha,lam,dtau", [(0.5, 1.0, 0.3), (0.8, 0.5, 1.0), (0.3, 2.0, 0.2)])
@pytest.mark.parametrize("u", [0.5, 1.0, 2.0])
def test_tempered_laplace_transform(alpha, lam, dtau, u):
    x = sample_tempered_increment(alpha, lam, dtau, rng(7), 100_000)
    e = np.exp(-u * x)
    target = math.exp(-dtau * ((u + lam) ** alpha - lam ** alpha))
    assert abs(e.mean() - target) <= 3 * e.std(ddof=1) / math.sqrt(e.size)


def test_scalar_tempered_draw():
    x = sample_tempered_increment(0.5, 1.0, 0.2, rng(9))
    assert isinstance(x, float) and x > 0


def test_tempering_lowers_the_mean():
    means = [sample_tempered_increment(0.7, lam, 0.5, rng(4), 100_000).mean() for lam in (0.0, 0.5, 1.0)]
    # the untempered mean is infinite; tempered means are alpha lam^(alpha-1) dtau
    assert means[0] > means[1] > means[2]
    assert means[2] == pytest.approx(0.7 * 0.5, rel=0.03)


def test_rejection_cost_warning():
    # escalate the warning so the (hopeless) sampling loop never starts
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(RuntimeWarning, match="proposals"):
            sample_tempered_increment(0.5, 1e4, 0.35, rng(), 1)
    with pytest.raises(ValueError):
        sample_tempered_increment(0.5, -1.0, 0.1, rng())


# inverse subordinator --------------------------------------------------------


def test_inverse_subordinator_on_the_lattice():
    s = inverse_subordinator_sample(0.7, 0.3, 1.0, 50, rng(1), keep_path=True)
    assert s.dtau == pytest.approx(0.02)
    assert s.value == pytest.approx(s.steps * s.dtau)
    w = s.path
    assert w[s.steps - 1] > 1.0
    assert s.steps == 1 or w[s.steps - 2] <= 1.0
    with pytest.raises(ValueError):
        inverse_subordinator_sample(0.7, 0.3, 0.0, 50, rng())
    with pytest.raises(ValueError):
        inverse_subordinator_sample(0.7, 0.3, 1.0, 0, rng())


def test_horizon_doubles_when_passage_is_slow():
    # with strong tempering W creeps, so S(1) is far beyond the first k steps
    s = inverse_subordinator_sample(0.9, 50.0, 1.0, 10, rng(2))
    assert s.value > 1.0


def test_near_brownian_clock():
    vals = [inverse_subordinator_sample(0.95, 0.0, 1.0, 200, rng(0, i)).value for i in range(10_000)]
    assert np.mean(vals) == pytest.approx(1.0, rel=0.05)


def test_mittag_leffler_check_of_expected_discount():
    # E exp(-u S(t)) = E_alpha(-u t^alpha); at alpha = 1/2 this is exp(z^2) erfc(z), z = u sqrt(t)
    from scipy.special import erfcx

    for u, t in [(0.5, 1.0), (1.0, 0.3), (2.0, 2.0)]:
        assert expected_discount(0.5, 0.0, u, t) == pytest.approx(erfcx(u * math.sqrt(t)), rel=1e-10)
    assert expected_discount(0.5, 0.3, 0.0, 1.0) == 1.0


def test_double_laplace_functional():
    # integrate the MC estimate of E exp(-u S(t)) against exp(-s t) over a t-grid
    alpha, lam, u, s = 0.7, 0.5, 1.0, 2.0
    t_grid = np.linspace(0.0, 8.0, 81)
    h = t_grid[1]
    M = 4000
    vals = np.zeros((M, t_grid.size))
    for i in range(M):
        p = PathParams(MarketParams(1.0, 1.0, 1.0, 0.0, 0.1), SubdiffusionParams(alpha, lam), 0.0)
        path = simulate_tempered_gbm_path(p, t_grid, RngStream(123, i))
        vals[i] = np.exp(-u * path.inverse_subordinator)
    weights = np.exp(-s * t_grid)
    per_draw = integrate.simpson(vals * weights, x=t_grid, axis=1)
    psi = (s + lam) ** alpha - lam ** alpha
    target = psi / (s * (u + psi))
    # the lattice overshoot of S is below h; bound its effect on the functional by u h / s
    se = per_draw.std(ddof=1) / math.sqrt(M)
    assert abs(per_draw.mean() - target) <= 3 * se + u * h / s


def test_monotone_in_t_on_a_shared_path():
    p = PathParams(MarketParams(1.0, 1.0, 1.0, 0.0, 1.0), SubdiffusionParams(0.6, 0.2), 0.0)
    path = simulate_tempered_gbm_path(p, np.linspace(0, 3, 301), RngStream(5))
    s = path.inverse_subordinator
    assert s[0] == 0 and np.all(np.diff(s) >= 0)


# paths -------------------------------------------------------------------------

FIG1 = PathParams(MarketParams(1.0, 1.0, 1.0, 0.0, 1.0), SubdiffusionParams(0.9, 1.0), drift=1.0)


def _flat_fraction(path):
    return float(np.mean(np.diff(path.inverse_subordinator) == 0))


def test_path_has_flat_periods(tmp_path):
    path = simulate_tempered_gbm_path(FIG1, np.linspace(0, 1, 1001), RngStream(2024))
    assert _flat_fraction(path) > 0
    lattice = set(path.lattice_gbm.tolist())
    assert all(v in lattice for v in path.tempered_gbm)
    assert np.array_equal(path.gbm, path.lattice_gbm[: path.t.size])
    out = tmp_path / "p.csv"
    path.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,gbm,tempered_gbm,inverse_subordinator"
    back = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 2], path.tempered_gbm)


def test_flat_periods_vanish_in_the_degenerate_limit():
    fast = PathParams(FIG1.market, SubdiffusionParams(0.99, 100.0), 1.0)
    t = np.linspace(0, 1, 1001)
    fig1 = np.mean([_flat_fraction(simulate_tempered_gbm_path(FIG1, t, RngStream(1, i))) for i in range(5)])
    lim = np.mean([_flat_fraction(simulate_tempered_gbm_path(fast, t, RngStream(1, i))) for i in range(5)])
    assert lim < 0.05 and lim < fig1 / 4


def test_path_reproducible_and_validated():
    t = np.linspace(0, 1, 101)
    a = simulate_tempered_gbm_path(FIG1, t, RngStream(3))
    b = simulate_tempered_gbm_path(FIG1, t, RngStream(3))
    assert np.array_equal(a.tempered_gbm, b.tempered_gbm)
    with pytest.raises(ValueError):
        simulate_tempered_gbm_path(FIG1, np.array([0.0, 0.1, 0.3]), RngStream(3))
    with pytest.raises(ValueError):
        simulate_tempered_gbm_path(FIG1, np.array([0.1, 0.2]), RngStream(3))


# pricers -------------------------------------------------------------------------


def test_pricer_determinism_and_json():
    sub = SubdiffusionParams(0.8, 0.1)
    a = mc_price(FIG4, sub, M=200, k=50, seed=7)
    b = mc_price(FIG4, sub, M=200, k=50, seed=7)
    assert a == b
    d = json.loads(a.to_json())
    assert {"mean", "stderr", "M", "k", "seed"} <= set(d)
    c = crr_price(FIG4, sub, M=50, k=40, seed=7)
    assert c == crr_price(FIG4, sub, M=50, k=40, seed=7)


def test_pricer_arguments():
    sub = SubdiffusionParams(0.8, 0.1)
    with pytest.raises(ValueError):
        mc_price(FIG4, sub, M=1)
    with pytest.raises(ValueError):
        mc_price(FIG4, sub, M=10, convention="other")
    with pytest.raises(ValueError):
        crr_tree_price(FIG4, "call", 0.5, 0)


def test_stderr_scales_with_repetitions():
    sub = SubdiffusionParams(0.8, 0.1)
    a = mc_price(FIG4, sub, M=500, k=50, seed=1)
    b = mc_price(FIG4, sub, M=2000, k=50, seed=1)
    assert a.stderr / b.stderr == pytest.approx(2.0, rel=0.2)


def test_mc_positive_and_monotone_in_strike():
    sub = SubdiffusionParams(0.7, 0.2)
    prices = [mc_price(FIG4.replace(strike=k), sub, M=300, seed=4).mean for k in (0.5, 1.0, 1.5, 2.0, 3.0)]
    assert all(p >= 0 for p in prices)
    assert all(a >= b for a, b in zip(prices, prices[1:]))


def test_zero_strike_call_draws():
    # K = 0, no dividends: every draw is worth Z0 exactly under the operational clock
    est = mc_price(FIG4.replace(strike=0.0), SubdiffusionParams(0.8, 0.1), M=100, seed=2)
    assert est.mean == pytest.approx(1.0, abs=1e-15) and est.stderr < 1e-15


def test_literal_convention_zero_strike_matches_its_own_quadrature():
    # under the literal reading a K = 0 call pays Z0 on draws with S <= T and 0 otherwise
    m, sub = FIG4.replace(strike=0.0), SubdiffusionParams(0.8, 0.1)
    est = mc_price(m, sub, M=400, k=50, seed=3, convention="literal")
    s = np.array([inverse_subordinator_sample(0.8, 0.1, 0.5, 50, RngStream(3, i).generator()).value for i in range(400)])
    assert est.mean == pytest.approx(float(np.mean(s <= 0.5)), abs=1e-15)


def test_crr_one_step_hand_formula():
    assert crr_tree_price(FIG4, "call", 0.5, 1) == pytest.approx(crr_one_step(FIG4, 0.5), rel=1e-14)
    m = FIG4.replace(strike=0.9)
    assert crr_tree_price(m, "put", 0.5, 1) == pytest.approx(crr_one_step(m, 0.5, "put"), rel=1e-14)
    assert crr_tree_price(m, "call", 0.0, 5) == pytest.approx(0.1)


def test_crr_converges_to_black_scholes():
    m = MarketParams(1.0, 2.0, 1.0, 0.5, 0.5)
    assert abs(crr_tree_price(m, "call", 1.0, 400) - bs_price(m)) < 1e-3


def test_crr_near_brownian_subordination():
    m = MarketParams(1.0, 2.0, 1.0, 0.5, 0.5)
    est = crr_price(m, SubdiffusionParams(0.999, 0.0), M=50, k=400, seed=1, subordinator_k=400)
    assert abs(est.mean - bs_price(m)) < 1e-3 + 3 * est.stderr


def test_mc_and_crr_share_draws():
    sub = SubdiffusionParams(0.8, 0.05)
    mc = mc_price(FIG4, sub, M=400, k=50, seed=9)
    crr = crr_price(FIG4, sub, M=400, k=40, seed=9, subordinator_k=50)
    assert abs(mc.mean - crr.mean) <= 3 * math.hypot(mc.stderr, crr.stderr)


def test_parity_against_model_forward():
    m = MarketParams(1.0, 2.0, 1.0, 0.5, 0.5)
    sub = SubdiffusionParams(0.5, 0.0)
    M = 4000
    call = mc_price(m, sub, "call", M=M, k=200, seed=5)
    put = mc_price(m, sub, "put", M=M, k=200, seed=5)
    # draw-by-draw differences share the S sample, so their spread is small
    s = np.array([inverse_subordinator_sample(0.5, 0.0, 1.0, 200, RngStream(5, i).generator()).value for i in range(M)])
    diffs = 1.0 - 2.0 * np.exp(-0.5 * s)
    assert call.mean - put.mean == pytest.approx(diffs.mean(), abs=1e-12)
    se = diffs.std(ddof=1) / math.sqrt(M)
    assert abs(call.mean - put.mean - model_forward(m, sub)) <= 3 * se + 2e-3
