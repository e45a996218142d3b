"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from darkpool_impact.audit import (
    ManipulationRecipe,
    best_three_phase_rho,
    construct_manipulation,
    equality_case_gain,
    equality_case_gain_integral,
    infinite_dp_bound,
    largeT_linear_cost,
    manipulation_candidates,
    single_update_roundtrip_cost,
    three_phase_cost,
)
from darkpool_impact.costs import mc_expected_cost, realized_cost_direct, realized_cost_lemma
from darkpool_impact.model import ModelParams, OrderSizeLaw, f_value
from darkpool_impact.numerics import expint_ei
from darkpool_impact.optimizer import (
    SingleUpdatePolicy,
    cost_gradient,
    discrete_residual,
    optimize_single_update,
    pure_exchange_cost,
    solve_euler_lagrange,
)
from darkpool_impact.policy import TradingPolicy, simulate_batch
from oracles import direct_single_update_minimum, ei_quadrature

N_MC = 100_000


def _random_triple(rng):
    mu = [
        OrderSizeLaw.infinite(),
        OrderSizeLaw.exponential(rng.uniform(0.2, 3)),
        OrderSizeLaw.lognormal(rng.normal(), rng.uniform(0.2, 1)),
        OrderSizeLaw.discrete([0.3, 1.5, math.inf], [0.4, 0.4, 0.2]),
    ][rng.integers(4)]
    p = ModelParams.build(
        gamma=rng.uniform(0.05, 3), eta=rng.uniform(0.05, 3), nu=rng.choice([1.0, rng.uniform(0.3, 2)]),
        sigma=rng.choice([0.0, rng.uniform(0.01, 2)]), alpha=rng.uniform(0, 1), beta_eta=rng.uniform(0, 2),
        beta_nu=rng.uniform(0.5, 2), kappa=rng.uniform(0, 1), theta=rng.uniform(0.1, 5), mu=mu,
    )
    T = rng.uniform(0.5, 5)
    rho = rng.uniform(0.05, 0.95) * T
    k = int(rng.integers(1, 5))
    breaks = np.concatenate([[0.0], np.sort(rng.uniform(0, rho, k - 1)), [rho]])
    x_hat = rng.normal(0, 2)
    pol = TradingPolicy.schedule(
        breaks, rng.normal(0, 2, k), x_hat=x_hat, xi_min=rng.uniform(0, 1) * abs(x_hat),
        on_fill=str(rng.choice(["continue", "halt", "liquidate"])), cancel_on_first_arrival=bool(rng.integers(2)),
    )
    batch = simulate_batch(p, pol, rng.normal(0, 3), T, 1, rng, p0=rng.uniform(-50, 150),
                           price_steps=int(rng.integers(0, 20)))
    return p, batch


def test_criterion_01_cost_formula_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        p, batch = _random_triple(rng)
        d = float(realized_cost_direct(p, batch).total[0])
        alt = float(realized_cost_lemma(p, batch)[0])
        worst = max(worst, abs(d - alt) / max(abs(d), abs(alt), 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed <= 60
    record_criterion(1, "cost-formula equivalence", ok, f"1000 triples, max rel gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def _regular_round_trips():
    """Round-trip policies (zero initial position) under nonnegative-cost parameters."""
    cases = []
    for gamma, eta, theta, nu, mu in [
        (1.0, 1.0, 1.0, 1.0, OrderSizeLaw.infinite()),
        (2.0, 0.5, 3.0, 1.0, OrderSizeLaw.exponential(1.0)),
        (0.5, 1.5, 0.5, 0.5, OrderSizeLaw.infinite()),
        (1.0, 0.3, 2.0, 1.0, OrderSizeLaw.lognormal(0.0, 0.5)),
    ]:
        p = ModelParams.build(gamma=gamma, eta=eta, nu=nu, theta=theta, alpha=1.0, beta_eta=gamma / 2, mu=mu)
        T = 4.0
        pols = [
            TradingPolicy.round_trip(0.0, 1.0, 1.0),
            TradingPolicy.round_trip(0.3, -2.0, 2.0),
            TradingPolicy.schedule([0.0, 1.5], [0.0], x_hat=3.0, cancel_on_first_arrival=True, kind="proof-recipe"),
            TradingPolicy.schedule([0.0, 2.0], [0.0], x_hat=-5.0, xi_min=5.0, kind="proof-recipe"),
            TradingPolicy.schedule([0.0, 2.0], [-0.5], x_hat=1.0, on_fill="halt", kind="proof-recipe"),
            TradingPolicy.schedule([0.0, 0.5, 3.0], [1.0, -0.4], x_hat=-2.0, xi_min=0.5, on_fill="liquidate"),
        ]
        cases += [(p, pol, T) for pol in pols]
    return cases


def test_criterion_02_no_manipulation_under_full_regularity():
    start = time.perf_counter()
    cases = _regular_round_trips()
    worst = math.inf
    ok = len(cases) >= 20
    for i, (p, pol, T) in enumerate(cases):
        res = mc_expected_cost(p, pol, 0.0, T, N_MC, seed=100 + i)
        # lower bound (gamma/2) X0^2 is 0 for round trips
        worst = min(worst, (res.mean + 3 * res.se) / max(res.se, 1e-300))
        ok = ok and res.mean >= -3 * res.se
        if pol.kind == "single-update" and pol.cancel_on_first_arrival:
            ok = ok and single_update_roundtrip_cost(p, -pol.rates[0], pol.x_hat, pol.rho, T) >= 0.0
    elapsed = time.perf_counter() - start
    ok = ok and elapsed <= 300
    record_criterion(2, "regularity: round trips never profitable", ok,
                     f"{len(cases)} policies x {N_MC} paths, min (mean+3SE)/SE {worst:.1f}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_critical_horizon():
    p = ModelParams.build(gamma=1.0, eta=1.0, theta=1.0, alpha=1.0)
    negatives = [c for c in manipulation_candidates(p, 3.0) if c.predicted_cost < 0]
    ok = len(negatives) >= 1
    lines = []
    for i, rec in enumerate(negatives):
        res = mc_expected_cost(p, rec.to_policy(p), rec.x0, 3.0, N_MC, seed=300 + i)
        ok = ok and res.mean + 3 * res.se < 0 and abs(res.mean - rec.predicted_cost) <= 3 * res.se
        lines.append(f"{rec.kind} {res.mean:.4f}+-{res.se:.4f}")
    # below the critical horizon every single-update round trip on the grid is costly
    T = 1.9
    mags = np.concatenate([[0.0], np.geomspace(1e-4, 10, 25)])
    xs = np.concatenate([-mags[1:], mags])
    rs = T * np.linspace(0.01, 0.99, 25)
    worst = min(single_update_roundtrip_cost(p, x, xh, r, T) for x in xs for xh in xs for r in rs)
    worst_wait = min(largeT_linear_cost(p, xh, e, T) for xh in xs if xh != 0 for e in rs)
    ok = ok and worst >= 0.0 and worst_wait >= 0.0 and construct_manipulation(p, T) is None
    record_criterion(3, "critical horizon T* = 2", ok,
                     f"T=3: {'; '.join(lines)}; T=1.9 min grid cost {min(worst, worst_wait):.2e}")
    assert ok


def test_criterion_04_sublinear_impact():
    p = ModelParams.build(gamma=1.0, eta=1.0, nu=0.5, theta=1.0, alpha=1.0)
    T = 1.0
    rec = construct_manipulation(p, T)
    ok = rec is not None and rec.kind == "sublinear"
    x_hat = rec.x_hat
    f = lambda y: f_value(p.h, y)
    ok = ok and 0.5 * p.gamma * x_hat ** 2 > 0.5 * T * f(2 * x_hat / T)
    rho = 0.5 * T
    analytic = (1 - math.exp(-p.theta * rho)) * (0.5 * T * f(2 * x_hat / T) - 0.5 * p.gamma * x_hat ** 2)
    ok = ok and analytic < 0 and math.isclose(analytic, rec.predicted_cost, rel_tol=1e-12)
    res = mc_expected_cost(p, rec.to_policy(p), 0.0, T, N_MC, seed=400)
    ok = ok and abs(res.mean - analytic) <= 3 * res.se
    record_criterion(4, "sublinear impact manipulation", ok,
                     f"x_hat={x_hat:.3g}, analytic {analytic:.3f}, MC {res.mean:.3f}+-{res.se:.3f}")
    assert ok


def test_criterion_05_alpha0_limits():
    p = ModelParams.build(gamma=1.0, eta=1.0, theta=1.0)
    x0, x_hat = 10.0, -20.0
    bound = infinite_dp_bound(p, x0)
    ok = bound == (-20.0, -50.0)
    means = []
    for T in (50.0, 100.0, 200.0):
        rho, analytic = best_three_phase_rho(p, x0, x_hat, T)
        rec = ManipulationRecipe("alpha0-threephase", T, x_hat, 0.0, rho, x0=x0, predicted_cost=analytic)
        res = mc_expected_cost(p, rec.to_policy(p), x0, T, N_MC, seed=7)
        means.append((T, res.mean, res.se, analytic))
    ok = ok and all(b[1] < a[1] for a, b in zip(means, means[1:]))
    final = means[-1]
    ok = ok and abs(final[1] + 50.0) <= 0.5 + 3 * final[2]
    detail = ", ".join(f"T={T:g}: {m:.2f}+-{s:.2f} (analytic {a:.2f})" for T, m, s, a in means)
    record_criterion(5, "alpha=0 limits toward -50", ok, f"bound {bound}; {detail}")
    assert ok


def test_criterion_06_dichotomy():
    eq = ModelParams.build(gamma=2.0, eta=1.0, theta=1.0)
    ok = True
    for rho in np.linspace(0.0, 30.0, 301):
        g = equality_case_gain(1.0, rho)
        ok = ok and g >= 0 and math.isclose(equality_case_gain_integral(1.0, 2.0, rho), g, rel_tol=1e-10, abs_tol=1e-15)
    worst = math.inf
    for T in (1.0, 5.0, 50.0):
        worst = min(worst, min(c.predicted_cost for c in manipulation_candidates(eq, T)))
        for rho in np.linspace(0.01, 0.99, 50) * T:
            for xh in (-10.0, -1.0, -0.01, 0.01, 1.0, 10.0):
                worst = min(worst, three_phase_cost(eq, 0.0, xh, rho, T))
        ok = ok and construct_manipulation(eq, T) is None
    ok = ok and worst >= -1e-12
    above = ModelParams.build(gamma=3.0, eta=1.0, theta=1.0)
    rec = construct_manipulation(above, 50.0)
    ok = ok and rec is not None and rec.predicted_cost < 0
    res = mc_expected_cost(above, rec.to_policy(above), rec.x0, 50.0, N_MC, seed=600)
    ok = ok and abs(res.mean - rec.predicted_cost) <= 3 * res.se
    record_criterion(6, "dichotomy at gamma/eta = 2 theta", ok,
                     f"boundary min analytic {worst:.2e}; x1.5: {rec.kind} analytic {rec.predicted_cost:.4f}, "
                     f"MC {res.mean:.4f}+-{res.se:.4f}")
    assert ok


def test_criterion_07_optimizer_sanity():
    start = time.perf_counter()
    lin = ModelParams.build(gamma=1.0, eta=1.0, theta=1e-8, alpha=1.0, beta_eta=0.5)
    got = optimize_single_update(lin, 1.0, 2.0, fixed_x_hat=0.0).cost
    target = pure_exchange_cost(lin, 1.0, 2.0)
    err_lin = abs(got - target) / target
    p = ModelParams.build(gamma=1.0, eta=1.0, theta=1.0, alpha=1.0, beta_eta=0.5)
    cost = optimize_single_update(p, 1.0, 2.0).cost
    oracle, _ = direct_single_update_minimum(1.0, 1.0, 1.0, 1.0, 2.0, n=200)
    err = abs(cost - oracle) / abs(oracle)
    elapsed = time.perf_counter() - start
    ok = err_lin <= 1e-4 and 0.5 <= cost <= 1.0 and err <= 1e-3 and elapsed <= 300
    record_criterion(7, "optimizer sanity", ok,
                     f"linear limit rel err {err_lin:.1e}; cost {cost:.6f} vs direct {oracle:.6f} "
                     f"(rel {err:.1e}), {elapsed:.1f}s")
    assert ok


def test_criterion_08_euler_lagrange_residual():
    rng = np.random.default_rng(8)
    worst_res = worst_grad = 0.0
    for _ in range(10):
        g = rng.uniform(0.3, 2)
        p = ModelParams.build(gamma=g, eta=rng.uniform(0.3, 2), theta=rng.uniform(0.2, 2), alpha=1.0, beta_eta=g / 2)
        T = rng.uniform(1, 4)
        rho = rng.uniform(0.2, 0.9) * T
        x0, x_hat, term = rng.uniform(-2, 2), rng.uniform(-3, 3), rng.uniform(-2, 2)
        tr = solve_euler_lagrange(p, x0, x_hat, rho, T, term)
        worst_res = max(worst_res, discrete_residual(p, x_hat, T, tr))
        grad = cost_gradient(p, T, SingleUpdatePolicy(x_hat, tr, x0))
        worst_grad = max(worst_grad, float(np.max(np.abs(grad))))
    ok = worst_res <= 1e-8 and worst_grad <= 1e-6
    record_criterion(8, "Euler-Lagrange residual and gradient", ok,
                     f"max residual {worst_res:.1e}, max gradient {worst_grad:.1e}")
    assert ok


def test_criterion_09_ei_accuracy():
    pts = np.geomspace(1e-6, 50.0, 50)
    worst = 0.0
    for x in np.concatenate([-pts, pts]):
        ref = ei_quadrature(float(x))
        worst = max(worst, abs(expint_ei(float(x)) - ref) / abs(ref))
    ok = worst <= 1e-12
    record_criterion(9, "Ei accuracy", ok, f"100 points, max rel err {worst:.1e}")
    assert ok


def test_criterion_10_sigma_invariance():
    p = ModelParams.build(gamma=1.0, eta=0.7, theta=1.5, alpha=0.4, beta_eta=0.3, kappa=0.5,
                          mu=OrderSizeLaw.exponential(1.0))
    cases = [
        (TradingPolicy.liquidation(), 1.0, 2.0),
        (TradingPolicy.round_trip(0.3, -1.0, 1.0), 0.0, 3.0),
        (TradingPolicy.schedule([0.0, 1.0, 2.0], [-0.5, 0.2], x_hat=-1.5, xi_min=0.5, on_fill="halt"), 2.0, 4.0),
        (TradingPolicy.schedule([0.0, 1.5], [-0.8], x_hat=-1.0, on_fill="liquidate"), 2.0, 3.0),
        (TradingPolicy.schedule([0.0, 0.5, 1.0], [1.0, -1.0], x_hat=2.0, xi_min=0.2, cancel_on_first_arrival=True),
         0.5, 2.0),
    ]
    ok = True
    worst = 0.0
    for i, (pol, x0, T) in enumerate(cases):
        a = mc_expected_cost(p, pol, x0, T, N_MC, seed=1000 + i)
        b = mc_expected_cost(p.with_sigma(0.5), pol, x0, T, N_MC, seed=2000 + i, p0=100.0, price_steps=10)
        z = abs(a.mean - b.mean) / math.hypot(a.se, b.se)
        worst = max(worst, z)
        ok = ok and z <= 3.0
    record_criterion(10, "sigma invariance", ok, f"5 policies, max |diff|/combined SE {worst:.2f}")
    assert ok
