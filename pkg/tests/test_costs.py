import csv
import math

import numpy as np
import pytest

from darkpool_impact.costs import (
    COMPONENTS,
    AdmissibilityError,
    block_rng,
    check_liquidation,
    mc_costs,
    mc_expected_cost,
    realized_cost_direct,
    realized_cost_lemma,
    write_path_csv,
)
from darkpool_impact.audit import single_update_roundtrip_cost
from darkpool_impact.model import ModelParams, OrderSizeLaw
from darkpool_impact.policy import PathRealization, TradingPolicy, simulate_batch


def hand_path(x0, T, rates, breaks, fills=(), fill_times=(), prices=None, p0=100.0):
    return PathRealization.from_schedule(x0, T, breaks, rates, fill_times, fills, prices=prices, p0=p0)


def test_constant_rate_liquidation_by_hand():
    p = ModelParams.build(gamma=1.0, eta=1.0, alpha=0.7, kappa=0.4)
    path = hand_path(1.0, 1.0, [-1.0], [0.0, 1.0])
    br = realized_cost_direct(p, path)
    assert br.total == pytest.approx(1.5, abs=1e-12)
    assert realized_cost_lemma(p, path) == pytest.approx(1.5, abs=1e-12)


def test_empty_strategy_costs_nothing():
    p = ModelParams.build(gamma=1.0, eta=1.0)
    path = hand_path(0.0, 1.0, [0.0], [0.0, 1.0])
    assert realized_cost_direct(p, path).total == 0.0
    assert realized_cost_lemma(p, path) == 0.0


def test_filled_round_trip_path_matches_formula_given_fill():
    # buy 1 in the dark at 0.4, cancel, sell it back over (1, 10]
    p = ModelParams.build(gamma=1.0, eta=1.0)
    T, r = 10.0, 1.0
    path = hand_path(0.0, T, [0.0, -1.0 / (T - r)], [0.0, r, T], fills=[1.0], fill_times=[0.4])
    expected = 1.0 / (T - r) + 0.5  # eta X^2/(T - r) + phi(X)
    assert realized_cost_direct(p, path).total == pytest.approx(expected, abs=1e-12)
    assert realized_cost_lemma(p, path) == pytest.approx(expected, abs=1e-12)


def test_martingale_term_vanishes_without_volatility():
    p = ModelParams.build(gamma=0.8, eta=1.3, alpha=0.2, beta_eta=0.1, kappa=0.5, theta=2.0)
    path = hand_path(2.0, 3.0, [-0.5, 0.1, -0.8], [0.0, 1.0, 2.0, 3.0], fills=[-0.8], fill_times=[1.5], p0=50.0)
    # with a constant price, shifting the price level changes nothing
    shifted = hand_path(2.0, 3.0, [-0.5, 0.1, -0.8], [0.0, 1.0, 2.0, 3.0], fills=[-0.8], fill_times=[1.5], p0=0.0)
    assert realized_cost_lemma(p, path) == pytest.approx(realized_cost_lemma(p, shifted), abs=1e-12)
    assert realized_cost_direct(p, path).total == pytest.approx(realized_cost_lemma(p, path), abs=1e-12)


def test_direct_and_alternative_formula_agree_with_a_moving_price():
    p = ModelParams.build(gamma=0.8, eta=1.3, nu=0.6, alpha=0.5, beta_eta=0.3, kappa=0.5)
    prices = lambda t: 100.0 + math.sin(3 * t) + 0.2 * t
    path = hand_path(2.0, 3.0, [-0.5, 0.1, -0.6], [0.0, 1.0, 2.0, 3.0], fills=[-0.8, -0.2], fill_times=[1.5, 1.7],
                     prices=prices)
    d = realized_cost_direct(p, path).total
    assert d == pytest.approx(realized_cost_lemma(p, path), rel=1e-12)


def test_liquidation_check_examples():
    assert check_liquidation(None, hand_path(0.0, 1.0, [0.0], [0.0, 1.0]))
    assert check_liquidation(None, hand_path(1.0, 1.0, [-1.0], [0.0, 1.0]))
    assert not check_liquidation(None, hand_path(1.0, 1.0, [0.0], [0.0, 1.0]))


def test_non_liquidating_path_is_rejected():
    p = ModelParams.build(gamma=1.0, eta=1.0)
    with pytest.raises(AdmissibilityError):
        realized_cost_direct(p, hand_path(1.0, 1.0, [0.0], [0.0, 1.0]))
    with pytest.raises(AdmissibilityError):
        realized_cost_lemma(p, hand_path(1.0, 1.0, [-0.5], [0.0, 1.0]))


def test_empty_policy_mc_is_exactly_zero():
    p = ModelParams.build(gamma=1.0, eta=1.0, sigma=0.3)
    res = mc_expected_cost(p, TradingPolicy.liquidation(), 0.0, 1.0, 1000, seed=1)
    assert res.mean == 0.0 and res.se == 0.0


def test_round_trip_mc_matches_analytic(plain_params):
    pol = TradingPolicy.round_trip(0.0, 1.0, 1.0)
    res = mc_expected_cost(plain_params, pol, 0.0, 10.0, 100_000, seed=3)
    analytic = (1 / 9 + 1 / 2) * (1 - math.exp(-1))
    assert analytic == pytest.approx(0.38630, abs=1e-5)
    assert abs(res.mean - analytic) <= 3 * res.se


def test_mc_is_reproducible_and_block_order_independent(plain_params):
    pol = TradingPolicy.schedule([0.0, 0.5, 1.0], [-0.5, -0.2], x_hat=-0.6)
    p = ModelParams.build(gamma=1.0, eta=1.0, sigma=0.4, mu=OrderSizeLaw.exponential(0.5))
    a = mc_costs(p, pol, 1.0, 2.0, 3000, seed=42, block_size=500)
    b = mc_costs(p, pol, 1.0, 2.0, 3000, seed=42, block_size=500)
    np.testing.assert_array_equal(a["cost_total"], b["cost_total"])
    # evaluating the blocks in reverse order gives the same per-path costs
    rev = []
    for k in reversed(range(6)):
        batch = simulate_batch(p, pol, 1.0, 2.0, 500, block_rng(42, k), p0=0.0)
        rev.insert(0, realized_cost_direct(p, batch).total)
    np.testing.assert_array_equal(np.concatenate(rev), a["cost_total"])


def test_scaling_doubles_positions_quadruples_costs():
    base = dict(gamma=0.7, eta=1.2, alpha=0.4, beta_eta=0.3, kappa=0.6, theta=1.5)
    p1 = ModelParams.build(**base, mu=OrderSizeLaw.exponential(0.8))
    p2 = ModelParams.build(**base, mu=OrderSizeLaw.exponential(1.6))
    pol1 = TradingPolicy.schedule([0.0, 0.4, 1.0], [-0.5, 0.3], x_hat=-1.2, xi_min=0.3, on_fill="halt")
    pol2 = TradingPolicy.schedule([0.0, 0.4, 1.0], [-1.0, 0.6], x_hat=-2.4, xi_min=0.6, on_fill="halt")
    b1 = simulate_batch(p1, pol1, 1.5, 3.0, 2000, np.random.default_rng(4), p0=0.0)
    b2 = simulate_batch(p2, pol2, 3.0, 3.0, 2000, np.random.default_rng(4), p0=0.0)
    np.testing.assert_allclose(realized_cost_direct(p2, b2).total, 4 * realized_cost_direct(p1, b1).total,
                               rtol=1e-12, atol=1e-12)
    q = ModelParams.build(gamma=1.0, eta=1.0, alpha=0.3, beta_eta=0.2, kappa=0.5)
    assert single_update_roundtrip_cost(q, 0.6, 2.0, 0.5, 4.0) == pytest.approx(
        4 * single_update_roundtrip_cost(q, 0.3, 1.0, 0.5, 4.0), rel=1e-12)


def test_sell_only_programs_have_nonnegative_cost():
    rng = np.random.default_rng(12)
    for i in range(8):
        p = ModelParams.build(gamma=rng.uniform(0.2, 2), eta=rng.uniform(0.2, 2), theta=rng.uniform(0.3, 3),
                              mu=OrderSizeLaw.exponential(rng.uniform(0.3, 3)))
        x0, T = rng.uniform(0.5, 3), rng.uniform(1, 4)
        rho = rng.uniform(0.1, 0.9) * T
        breaks = np.sort(np.concatenate([[0.0, rho], rng.uniform(0, rho, 2)]))
        rates = -rng.uniform(0, 1, 3) * x0 / T
        x_hat = -rng.uniform(0, 1) * x0
        pol = TradingPolicy.schedule(breaks, rates, x_hat=x_hat, xi_min=0.0,
                                     on_fill=("continue", "halt", "liquidate")[i % 3])
        res = mc_expected_cost(p, pol, x0, T, 20_000, seed=i)
        assert res.mean >= -3 * res.se


def test_sigma_does_not_move_expected_cost():
    p = ModelParams.build(gamma=1.0, eta=0.5, alpha=0.5, beta_eta=0.2, theta=2.0, mu=OrderSizeLaw.exponential(1.0))
    pol = TradingPolicy.schedule([0.0, 1.0, 2.0], [-0.5, 0.2], x_hat=-1.5, xi_min=0.5, on_fill="halt")
    a = mc_expected_cost(p, pol, 2.0, 4.0, 50_000, seed=1)
    b = mc_expected_cost(p.with_sigma(0.5), pol, 2.0, 4.0, 50_000, seed=2, p0=100.0, price_steps=8)
    assert abs(a.mean - b.mean) <= 3 * math.hypot(a.se, b.se)


def test_path_csv(tmp_path):
    p = ModelParams.build(gamma=1.0, eta=1.0, mu=OrderSizeLaw.exponential(1.0))
    pol = TradingPolicy.schedule([0.0, 1.0], [-0.3], x_hat=-0.5)
    data = mc_costs(p, pol, 1.0, 2.0, 50, seed=0)
    out = tmp_path / "paths.csv"
    write_path_csv(out, data)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["path_id", "tau1", "fill_total", "cost_total", *COMPONENTS]
    assert len(rows) == 51
    total = sum(float(rows[1][4 + k]) for k in range(len(COMPONENTS)))
    assert total == pytest.approx(float(rows[1][3]), abs=1e-12)
