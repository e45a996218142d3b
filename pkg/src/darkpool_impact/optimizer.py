"""Optimal single-update liquidation with linear impact and infinite dark liquidity.

The regime is alpha = 1, beta(y) = (gamma/2) y, kappa = 0 and every arriving
order fills the dark order completely. Until the first arrival (or the
cancellation time ``rho``) the exchange follows a deterministic inventory
path ``X0(t)``; afterwards the remaining position is sold at a constant rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .model import ModelParams
from .numerics import OptimizerOptions, QuadratureError, expint_ei, integrate_adaptive, nelder_mead
from .policy import TradingPolicy

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class NumericalFailure(RuntimeError):
    pass


def require_regime(params: ModelParams):
    p = params
    ok = (
        p.h.is_linear
        and p.alpha == 1.0
        and p.kappa == 0.0
        and p.beta.is_linear
        and math.isclose(p.beta.eta, 0.5 * p.gamma, rel_tol=1e-12)
        and p.mu.is_infinite
    )
    if not ok:
        raise ValueError(
            "single-update optimizer needs linear h, alpha = 1, kappa = 0, "
            "beta(y) = (gamma/2) y and infinite dark liquidity"
        )


@dataclass
class Trajectory:
    """Pre-update inventory, continuous and piecewise linear on ``grid``."""

    grid: np.ndarray
    inventory: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        inv = np.asarray(self.inventory)
        # extended-precision solutions keep their precision
        self.inventory = inv.astype(np.longdouble if inv.dtype == np.longdouble else float)
        if self.grid.shape != self.inventory.shape or self.grid.size < 2:
            raise ValueError("grid and inventory need the same length >= 2")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def terminal(self) -> float:
        return float(self.inventory[-1])

    @property
    def rho(self) -> float:
        return float(self.grid[-1])

    @property
    def rates(self) -> np.ndarray:
        return np.diff(self.inventory) / np.diff(self.grid)

    def at(self, t):
        return np.interp(t, self.grid, self.inventory)

    def write_csv(self, path):
        """Columns t, X, xi (the rate on the segment starting at t; the last
        row repeats the final segment rate)."""
        rates = self.rates
        node_rates = np.concatenate([rates, rates[-1:]])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "X", "xi"])
            for t, x, r in zip(self.grid, self.inventory, node_rates):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(r))])


@dataclass
class SingleUpdatePolicy:
    x_hat: float
    trajectory: Optional[Trajectory]  # None means rho = 0: nothing before the update
    x0: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def rho(self) -> float:
        return 0.0 if self.trajectory is None else self.trajectory.rho

    @classmethod
    def linear(cls, x0: float, x_hat: float, rho: float, terminal: float) -> "SingleUpdatePolicy":
        if rho == 0.0:
            return cls(x_hat=x_hat, trajectory=None, x0=x0)
        return cls(x_hat=x_hat, trajectory=Trajectory([0.0, rho], [x0, terminal]), x0=x0)

    @classmethod
    def immediate_liquidation(cls, x0: float) -> "SingleUpdatePolicy":
        return cls(x_hat=0.0, trajectory=None, x0=x0)

    def to_trading_policy(self) -> TradingPolicy:
        """Executable form: dark order without minimum quantity, switch to the
        liquidating rate at the first fill."""
        if self.trajectory is None:
            return TradingPolicy(x_hat=self.x_hat, on_fill="liquidate", kind="single-update", name="single-update")
        return TradingPolicy.schedule(
            self.trajectory.grid,
            self.trajectory.rates,
            x_hat=self.x_hat,
            xi_min=0.0,
            on_fill="liquidate",
            kind="single-update",
            name="single-update",
        )


def post_update_rate(update_time: float, position: float, x_hat: float, T: float, filled: bool) -> float:
    """Constant rate that ends flat at ``T`` after the update."""
    if not update_time < T:
        raise ValueError("update time must be < T")
    remaining = position + x_hat if filled else position
    return -remaining / (T - update_time)


# ---------------------------------------------------------------------------
# expected cost


def _weight(params: ModelParams, T: float):
    eta, th = params.h.eta, params.theta
    return lambda t: eta * th * np.exp(-th * t) / (T - t)


def _decay_integral(theta: float, a, b):
    """``int_a^b e^{-theta s} ds`` without cancellation."""
    return np.exp(-theta * a) * (-np.expm1(-theta * (b - a))) / theta


def single_update_cost(
    params: ModelParams, x0: float, T: float, policy: SingleUpdatePolicy, tol: float = 1e-10
) -> float:
    """Expected cost of a single-update policy with the optimal post-update rate."""
    require_regime(params)
    rho = policy.rho
    if not (0.0 <= rho < T):
        raise ValueError("need 0 <= rho < T")
    g, eta, th = params.gamma, params.h.eta, params.theta
    cost = 0.5 * g * x0 * x0
    if policy.trajectory is None:
        return cost + eta * x0 * x0 / T
    tr = policy.trajectory
    if not math.isclose(tr.inventory[0], x0, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("trajectory must start at x0")
    a, b = tr.grid[:-1], tr.grid[1:]
    r = tr.rates
    cost += float(np.sum(eta * r * r * _decay_integral(th, a, b)))
    cost += eta * math.exp(-th * rho) * tr.terminal ** 2 / (T - rho)
    w = _weight(params, T)
    x_hat = policy.x_hat
    total_width = rho
    for k in range(a.size):
        x_a, slope = tr.inventory[k], r[k]
        lo = a[k]

        def integrand(t, x_a=x_a, slope=slope, lo=lo):
            z = x_a + slope * (t - lo) + x_hat
            return w(t) * z * z

        cost += integrate_adaptive(integrand, lo, b[k], tol=tol * (b[k] - lo) / total_width)
    return float(cost)


def exact_cost_fast(params: ModelParams, x0: float, T: float, policy: SingleUpdatePolicy) -> float:
    """Same functional with 10-point Gauss-Legendre per segment (vectorized)."""
    require_regime(params)
    g, eta, th = params.gamma, params.h.eta, params.theta
    cost = 0.5 * g * x0 * x0
    if policy.trajectory is None:
        return cost + eta * x0 * x0 / T
    tr = policy.trajectory
    a, b = tr.grid[:-1], tr.grid[1:]
    r = tr.rates
    cost += float(np.sum(eta * r * r * _decay_integral(th, a, b)))
    cost += eta * math.exp(-th * tr.rho) * tr.terminal ** 2 / (T - tr.rho)
    half = 0.5 * (b - a)
    s = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    z = tr.inventory[:-1, None] + r[:, None] * (s - a[:, None]) + policy.x_hat
    cost += float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * _weight(params, T)(s) * z * z))
    return float(cost)


def cost_gradient(params: ModelParams, T: float, policy: SingleUpdatePolicy) -> np.ndarray:
    """Gradient of the expected cost with respect to the interior inventory
    nodes of a piecewise-linear trajectory (terminal value held fixed)."""
    require_regime(params)
    tr = policy.trajectory
    eta, th = params.h.eta, params.theta
    a, b = tr.grid[:-1], tr.grid[1:]
    dt = b - a
    r = tr.rates
    W = _decay_integral(th, a, b)
    # d/dX_j of sum eta r_k^2 W_k
    flux = 2.0 * eta * r * W / dt
    grad = np.zeros(tr.grid.size)
    grad[:-1] -= flux
    grad[1:] += flux
    half = 0.5 * dt
    s = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    lam = (s - a[:, None]) / dt[:, None]
    z = tr.inventory[:-1, None] + r[:, None] * (s - a[:, None]) + policy.x_hat
    core = 2.0 * half[:, None] * _GL_WEIGHTS[None, :] * _weight(params, T)(s) * z
    grad[:-1] += np.sum(core * (1.0 - lam), axis=1)
    grad[1:] += np.sum(core * lam, axis=1)
    return grad[1:-1]


# ---------------------------------------------------------------------------
# Euler-Lagrange boundary value problem


def _discrete_system(params: ModelParams, x_hat: float, rho: float, T: float, n: int):
    t = np.linspace(0.0, rho, n + 1)
    h = rho / n
    W = _decay_integral(params.theta, t[:-1], t[1:])
    q = _weight(params, T)(t) * h
    q[0] *= 0.5
    q[-1] *= 0.5
    return t, h, W, q


def _thomas_extended(off, diag, rhs) -> np.ndarray:
    """Symmetric tridiagonal solve by elimination in extended precision."""
    off = off.astype(np.longdouble)
    diag = diag.astype(np.longdouble)
    d = rhs.astype(np.longdouble)
    c = np.zeros_like(diag)
    m = diag.size
    c[0] = diag[0]
    for i in range(1, m):
        w = off[i - 1] / c[i - 1]
        c[i] = diag[i] - w * off[i - 1]
        d[i] = d[i] - w * d[i - 1]
    x = np.zeros_like(diag)
    x[-1] = d[-1] / c[-1]
    for i in range(m - 2, -1, -1):
        x[i] = (d[i] - off[i] * x[i + 1]) / c[i]
    return x


def _solve_interior(params, x0, x_hat, rho, T, terminal, n, extended=False):
    eta = params.h.eta
    t, h, W, q = _discrete_system(params, x_hat, rho, T, n)
    if extended:
        h, W, q = np.longdouble(h), W.astype(np.longdouble), q.astype(np.longdouble)
    m = n - 1
    c = eta / (h * h)
    diag = c * (W[:-1] + W[1:]) + q[1:-1]
    off = -c * W[1:-1]
    rhs = -q[1:-1] * x_hat
    rhs[0] += c * W[0] * x0
    rhs[-1] += c * W[-1] * terminal
    if extended:
        interior = _thomas_extended(off, diag, rhs)
        x = np.concatenate([[np.longdouble(x0)], interior, [np.longdouble(terminal)]])
        if not np.all(np.isfinite(x)):
            raise NumericalFailure("non-finite Euler-Lagrange solution")
        return t, x
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    try:
        interior = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular Euler-Lagrange system: {exc}") from exc
    x = np.concatenate([[x0], interior, [terminal]])
    if not np.all(np.isfinite(x)):
        raise NumericalFailure("non-finite Euler-Lagrange solution")
    return t, x


def discrete_cost(params, x0, x_hat, T, t, x) -> float:
    """Objective whose exact minimizer the BVP solver returns (trapezoid weights
    for the fill term, exact integrals elsewhere)."""
    eta, th = params.h.eta, params.theta
    rho = t[-1]
    n = t.size - 1
    _, h, W, q = _discrete_system(params, x_hat, rho, T, n)
    dx = np.diff(x)
    return (
        0.5 * params.gamma * x0 * x0
        + float(np.sum(eta * dx * dx / (h * h) * W))
        + eta * math.exp(-th * rho) * x[-1] ** 2 / (T - rho)
        + float(np.sum(q * (x + x_hat) ** 2))
    )


def discrete_residual(params: ModelParams, x_hat: float, T: float, traj: Trajectory) -> float:
    """Max-norm residual of the discrete Euler-Lagrange equations, scaled to
    approximate ``-X'' + theta X' + theta (X + x_hat)/(T - t)``."""
    t, x = traj.grid, traj.inventory
    n = t.size - 1
    eta = params.h.eta
    _, h, W, q = _discrete_system(params, x_hat, t[-1], T, n)
    if x.dtype == np.longdouble:
        h, W, q = np.longdouble(h), W.astype(np.longdouble), q.astype(np.longdouble)
    dx = np.diff(x)
    eq = (W[:-1] * dx[:-1] - W[1:] * dx[1:]) / (h * h) + q[1:-1] / eta * (x[1:-1] + x_hat)
    scale = h * np.exp(-params.theta * t[1:-1])
    return float(np.max(np.abs(eq / scale))) if eq.size else 0.0


def solve_euler_lagrange(
    params: ModelParams,
    x0: float,
    x_hat: float,
    rho: float,
    T: float,
    terminal: float,
    n: int = 2000,
    richardson: bool = False,
) -> Trajectory:
    """Minimizing pre-update inventory with fixed endpoints.

    The exact first-order conditions of a second-order accurate discretization
    of the cost functional form a symmetric tridiagonal system. With
    ``richardson`` the solution on ``n`` intervals is combined with the one on
    ``2n`` intervals to cancel the leading error term. The system is solved in
    extended precision: second differences on a fine grid amplify the rounding
    of double-precision values beyond the residual tolerance.
    """
    require_regime(params)
    if not (0.0 < rho < T):
        raise ValueError("need 0 < rho < T")
    if n < 2:
        raise ValueError("need at least two intervals")
    t, x = _solve_interior(params, x0, x_hat, rho, T, terminal, n, extended=True)
    if richardson:
        _, x2 = _solve_interior(params, x0, x_hat, rho, T, terminal, 2 * n, extended=True)
        x = (4.0 * x2[::2] - x) / 3.0
    return Trajectory(t, x)


def richardson_gap(params, x0, x_hat, rho, T, terminal, n: int = 2000) -> float:
    """Max difference between the solutions on ``n`` and ``2n`` intervals."""
    _, x1 = _solve_interior(params, x0, x_hat, rho, T, terminal, n)
    _, x2 = _solve_interior(params, x0, x_hat, rho, T, terminal, 2 * n)
    return float(np.max(np.abs(x2[::2] - x1)))


# ---------------------------------------------------------------------------
# closed forms


def closed_form_trajectory(
    params: ModelParams, x0: float, x_hat: float, rho: float, T: float, terminal: float, n: int = 2000
) -> Trajectory:
    """Exponential-integral formula for the pre-update inventory, evaluated as
    printed (including its leading ``-x_hat``)."""
    th = params.theta
    t = np.linspace(0.0, rho, n + 1)
    ei_T = expint_ei(-T * th)
    ei_rho = expint_ei(th * (rho - T))
    ei_t = np.array([expint_ei((s - T) * th) for s in t])
    eT = math.exp(th * T)
    denom = th * T * eT * (T - rho) * (ei_T - ei_rho) - rho + T * (1.0 - math.exp(th * rho))
    k = x0 - terminal - x_hat
    body = (
        -np.exp(th * t) * rho * x0
        + (t - T) * (x0 * math.exp(th * rho) - terminal - x_hat)
        + th * (T - t) * eT * (ei_t * (T * k - rho * x0) + x0 * (rho - T) * ei_rho + T * (terminal + x_hat) * ei_T)
        + np.exp(th * t) * T * k
    )
    return Trajectory(t, -x_hat + body / denom)


def homogeneous_basis(theta: float, T: float, t):
    """Two solutions of ``-Z'' + theta Z' + theta Z/(T - t) = 0``."""
    t = np.asarray(t, dtype=float)
    y1 = T - t
    ei = np.array([expint_ei(theta * (s - T)) for s in np.atleast_1d(t)]).reshape(t.shape)
    y2 = np.exp(theta * t) + theta * (T - t) * math.exp(theta * T) * ei
    return y1, y2


def exact_trajectory(
    params: ModelParams, x0: float, x_hat: float, rho: float, T: float, terminal: float, n: int = 2000
) -> Trajectory:
    """Euler-Lagrange solution assembled from the homogeneous basis and the
    particular solution ``-x_hat``, fitted to both endpoints."""
    th = params.theta
    t = np.linspace(0.0, rho, n + 1)
    y1, y2 = homogeneous_basis(th, T, t)
    m = np.array([[y1[0], y2[0]], [y1[-1], y2[-1]]])
    c = np.linalg.solve(m, np.array([x0 + x_hat, terminal + x_hat]))
    return Trajectory(t, -x_hat + c[0] * y1 + c[1] * y2)


@dataclass(frozen=True)
class ClosedFormCheck:
    status: str  # confirmed | discrepant
    max_abs_diff: float
    rel_diff: float
    start_error: float  # formula value at 0 minus x0
    end_error: float  # formula value at rho minus the terminal value
    solves_ode: bool  # matches the ODE solution through its own endpoints


def check_closed_form(params, x0, x_hat, rho, T, terminal, n: int = 2000, threshold: float = 1e-6) -> ClosedFormCheck:
    """Compare the printed formula with the BVP solution in max norm."""
    ref = solve_euler_lagrange(params, x0, x_hat, rho, T, terminal, n=n, richardson=True)
    cf = closed_form_trajectory(params, x0, x_hat, rho, T, terminal, n=n)
    diff = float(np.max(np.abs(cf.inventory - ref.inventory)))
    scale = max(1.0, float(np.max(np.abs(ref.inventory))), abs(x_hat))
    rel = diff / scale
    own = exact_trajectory(params, cf.inventory[0], x_hat, rho, T, cf.inventory[-1], n=n)
    solves = float(np.max(np.abs(own.inventory - cf.inventory))) <= threshold * scale
    return ClosedFormCheck(
        "confirmed" if rel <= threshold else "discrepant",
        diff,
        rel,
        float(cf.inventory[0] - x0),
        float(cf.inventory[-1] - terminal),
        bool(solves),
    )


# ---------------------------------------------------------------------------
# outer optimization


@dataclass
class OptimizationOutcome:
    policy: SingleUpdatePolicy
    cost: float
    converged: bool
    benchmark_cost: float
    starts: list


def pure_exchange_cost(params: ModelParams, x0: float, T: float) -> float:
    return 0.5 * params.gamma * x0 * x0 + params.h.eta * x0 * x0 / T


def optimize_single_update(
    params: ModelParams,
    x0: float,
    T: float,
    opts: OptimizerOptions = OptimizerOptions(),
    fixed_x_hat: Optional[float] = None,
    n_inner: int = 400,
    n_final: int = 2000,
) -> OptimizationOutcome:
    """Nelder-Mead over (rho, x_hat, terminal) around the inner BVP solve."""
    require_regime(params)
    if not T > 0:
        raise ValueError("T must be > 0")
    lo_rho, hi_rho = 1e-4 * T, T * (1.0 - 1e-6)
    bx = 4.0 * abs(x0) + 1.0
    bt = 2.0 * abs(x0) + 1.0
    free_hat = fixed_x_hat is None

    def unpack(v):
        if free_hat:
            return v[0], v[1], v[2]
        return v[0], fixed_x_hat, v[1]

    def objective(v):
        rho, xh, term = unpack(v)
        t, x = _solve_interior(params, x0, xh, rho, T, term, n_inner)
        return discrete_cost(params, x0, xh, T, t, x)

    box = [(lo_rho, hi_rho)] + ([(-bx, bx)] if free_hat else []) + [(-bt, bt)]
    starts = []
    fracs = (0.25, 0.5, 0.75, 0.95)
    hats = (-x0, 0.0) if free_hat else (fixed_x_hat,)
    for i in range(opts.n_starts):
        f = fracs[i % len(fracs)]
        xh = hats[(i // len(fracs)) % len(hats)]
        rho = f * T
        term = x0 * (1.0 - f)
        v = [rho] + ([xh] if free_hat else []) + [term]
        v = [min(max(c, b[0]), b[1]) for c, b in zip(v, box)]
        starts.append(v)

    best = None
    all_results = []
    for s in starts:
        res = nelder_mead(objective, s, box=box, opts=opts)
        all_results.append({"start": list(map(float, s)), "value": res.value, "converged": res.converged})
        if best is None or res.value < best.value:
            best = res
    rho, xh, term = unpack(best.arg)
    traj = solve_euler_lagrange(params, x0, xh, rho, T, term, n=n_final)
    policy = SingleUpdatePolicy(x_hat=float(xh), trajectory=traj, x0=x0)
    try:
        cost = single_update_cost(params, x0, T, policy)
    except QuadratureError:
        cost = exact_cost_fast(params, x0, T, policy)
    bench = pure_exchange_cost(params, x0, T)
    if cost > bench:
        policy = SingleUpdatePolicy.immediate_liquidation(x0)
        cost = bench
    policy.meta = {"rho": float(rho), "x_hat": float(xh), "terminal": float(term)}
    return OptimizationOutcome(policy, float(cost), bool(best.converged), bench, all_results)
