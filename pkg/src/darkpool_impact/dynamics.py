"""Dark-pool arrivals, the minimum-quantity matching rule, and price processes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ACParams, ModelParams, OrderSizeLaw, impact_value


@dataclass(frozen=True)
class ArrivalStream:
    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        sizes = np.asarray(self.sizes, dtype=float)
        if times.shape != sizes.shape or times.ndim != 1:
            raise ValueError("times and sizes must be 1-d arrays of equal length")
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("arrival times must be positive and strictly increasing")
        if np.any(~(sizes > 0)):
            raise ValueError("matching-order sizes must be > 0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return self.times.size

    def count(self, t: float) -> int:
        """Number of arrivals in ``(0, t]``."""
        return int(np.searchsorted(self.times, t, side="right"))


@dataclass(frozen=True)
class FillSequence:
    executed: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_executed(cls, executed) -> "FillSequence":
        executed = np.asarray(executed, dtype=float)
        return cls(executed=executed, cumulative=np.cumsum(executed))

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0


@dataclass(frozen=True)
class PricePath:
    grid: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> float:
        i = int(np.searchsorted(self.grid, t))
        if i >= self.grid.size or not math.isclose(self.grid[i], t, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"time {t} is not a grid point")
        return float(self.values[i])


def _check_rate_and_horizon(theta: float, horizon: float):
    if not (theta > 0 and math.isfinite(theta)):
        raise ValueError(f"theta must be > 0, got {theta}")
    if not (horizon > 0):
        raise ValueError(f"horizon must be > 0, got {horizon}")


def sample_arrivals(theta: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson(theta) arrival instants in ``(0, horizon]``."""
    _check_rate_and_horizon(theta, horizon)
    times = []
    t = 0.0
    chunk = max(8, int(theta * horizon * 1.5) + 8)
    while True:
        gaps = rng.exponential(1.0 / theta, chunk)
        stamps = t + np.cumsum(gaps)
        inside = stamps[stamps <= horizon]
        times.append(inside)
        if inside.size < chunk:
            break
        t = float(stamps[-1])
    return np.concatenate(times)


def sample_arrival_stream(
    theta: float, horizon: float, mu: OrderSizeLaw, rng: np.random.Generator
) -> ArrivalStream:
    times = sample_arrivals(theta, horizon, rng)
    return ArrivalStream(times=times, sizes=mu.sample(rng, times.size))


def sample_arrivals_batch(
    theta: float, horizon: float, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """Arrival times for ``n_paths`` independent streams, padded with ``inf``.

    Row ``i`` holds the arrivals of path ``i`` in ``(0, horizon]`` in increasing
    order followed by ``inf``.
    """
    _check_rate_and_horizon(theta, horizon)
    lam = theta * horizon
    k = max(1, int(lam + 6.0 * math.sqrt(lam) + 6))
    stamps = np.cumsum(rng.exponential(1.0 / theta, (n_paths, k)), axis=1)
    while np.any(stamps[:, -1] <= horizon):
        extra = stamps[:, -1:] + np.cumsum(rng.exponential(1.0 / theta, (n_paths, k)), axis=1)
        stamps = np.concatenate([stamps, extra], axis=1)
    stamps[stamps > horizon] = np.inf
    width = max(1, int(np.max(np.sum(np.isfinite(stamps), axis=1))))
    return stamps[:, :width]


def match_orders(x_hat: float, xi_min: float, sizes) -> FillSequence:
    """Execute incoming matching orders against a resting dark order.

    Orders smaller than ``xi_min`` are skipped; the others are taken in full
    while they fit and the crossing order takes the residual. Nothing is
    executed once the dark order is complete.
    """
    if xi_min < 0 or xi_min > abs(x_hat):
        raise ValueError(f"minimum quantity must lie in [0, |x_hat|], got {xi_min}")
    executed = match_orders_batch(x_hat, xi_min, np.asarray(sizes, dtype=float)[None, :])[0]
    return FillSequence.from_executed(executed)


def match_orders_batch(x_hat, xi_min, sizes: np.ndarray, active=None) -> np.ndarray:
    """Vectorized matching over rows of ``sizes``.

    ``x_hat`` and ``xi_min`` may be scalars or per-row arrays. ``active``
    (same shape as ``sizes``) masks arrivals that can still trade, e.g. those
    before the cancellation time.
    """
    sizes = np.asarray(sizes, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    xi_min = np.asarray(xi_min, dtype=float)
    target = np.abs(x_hat)[..., None] if x_hat.ndim else abs(float(x_hat))
    threshold = xi_min[..., None] if xi_min.ndim else float(xi_min)
    eligible = sizes >= threshold
    if active is not None:
        eligible &= active
    offered = np.where(eligible, sizes, 0.0)
    filled = np.minimum(np.cumsum(offered, axis=-1), target)
    taken = np.diff(filled, axis=-1, prepend=0.0)
    sign = np.sign(x_hat)[..., None] if x_hat.ndim else math.copysign(1.0, float(x_hat))
    out = sign * taken
    out[out == 0] = 0.0  # drop negative zeros
    return out


def fill_process(stream: ArrivalStream, fills: FillSequence, rho: float, t: float) -> float:
    """Cumulative dark fill ``Z`` stopped at ``rho`` and evaluated at ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = stream.count(min(t, rho))
    return float(np.sum(fills.executed[:n]))


def sample_price_path(sigma: float, grid, p0: float, rng: np.random.Generator) -> PricePath:
    """Zero-drift arithmetic Brownian motion observed on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    if not sigma >= 0:
        raise ValueError("sigma must be >= 0")
    values = np.full(grid.shape, float(p0))
    if sigma > 0 and grid.size > 1:
        steps = sigma * np.sqrt(np.diff(grid)) * rng.standard_normal(grid.size - 1)
        values[1:] += np.cumsum(steps)
    return PricePath(grid=grid, values=values)


def affected_price(ac: ACParams, p0_t, cum_exchange, rate):
    """Exchange price: unaffected price plus permanent and temporary impact."""
    return p0_t + ac.gamma * cum_exchange + impact_value(ac.h, rate)


def dark_exec_price(params: ModelParams, p0_tau, cum_exchange, rate_at_tau):
    """Dark-pool execution price; only a ``kappa`` share of temporary impact."""
    return p0_tau + params.gamma * cum_exchange + params.kappa * impact_value(params.h, rate_at_tau)
