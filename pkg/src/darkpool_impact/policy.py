"""Trading policies and construction of realized paths (single or batched)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    ArrivalStream,
    FillSequence,
    PricePath,
    match_orders_batch,
    sample_arrivals_batch,
)
from .model import ModelParams

ON_FILL_MODES = ("continue", "halt", "liquidate")
POLICY_KINDS = ("deterministic-schedule", "single-update", "proof-recipe")


@dataclass(frozen=True)
class TradingPolicy:
    """Dark order plus a piecewise-constant exchange schedule with one update.

    The exchange trades at ``rates[k]`` on ``(breaks[k], breaks[k+1]]`` until
    the update time, then at the constant rate that liquidates the remaining
    position exactly at the horizon. The update happens at ``rho`` unless
    ``on_fill == "liquidate"``, in which case it happens at the first dark fill
    (and the dark order is cancelled there). With ``on_fill == "halt"`` the
    exchange stops trading from the first fill until ``rho``. The dark order is
    cancelled at ``rho``, or at the first arrival when
    ``cancel_on_first_arrival`` is set.
    """

    x_hat: float = 0.0
    xi_min: float = 0.0
    rho: float = 0.0
    breaks: tuple = (0.0,)
    rates: tuple = ()
    cancel_on_first_arrival: bool = False
    on_fill: str = "continue"
    kind: str = "deterministic-schedule"
    name: str = ""

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "rates", rates)
        if not (self.rho >= 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be finite and >= 0, got {self.rho}")
        if self.xi_min < 0 or self.xi_min > abs(self.x_hat) * (1 + 1e-12):
            raise ValueError(f"xi_min must lie in [0, |x_hat|], got {self.xi_min}")
        if len(breaks) != len(rates) + 1:
            raise ValueError("need exactly one more break than rates")
        if breaks[0] != 0.0 or not math.isclose(breaks[-1], self.rho, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError("schedule breaks must run from 0 to rho")
        if any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
            raise ValueError("schedule breaks must be strictly increasing")
        if not all(math.isfinite(r) for r in rates):
            raise ValueError("rates must be finite")
        if self.on_fill not in ON_FILL_MODES:
            raise ValueError(f"on_fill must be one of {ON_FILL_MODES}")
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"kind must be one of {POLICY_KINDS}")

    # constructors -------------------------------------------------------

    @classmethod
    def liquidation(cls, name: str = "pure-exchange") -> "TradingPolicy":
        """Liquidate at a constant exchange rate over the whole horizon."""
        return cls(name=name)

    @classmethod
    def schedule(
        cls,
        breaks,
        rates,
        x_hat: float = 0.0,
        xi_min: float = 0.0,
        on_fill: str = "continue",
        cancel_on_first_arrival: bool = False,
        kind: str = "deterministic-schedule",
        name: str = "",
    ) -> "TradingPolicy":
        breaks = tuple(breaks)
        return cls(
            x_hat=x_hat,
            xi_min=xi_min,
            rho=breaks[-1],
            breaks=breaks,
            rates=tuple(rates),
            on_fill=on_fill,
            cancel_on_first_arrival=cancel_on_first_arrival,
            kind=kind,
            name=name,
        )

    @classmethod
    def round_trip(cls, x: float, x_hat: float, r: float, name: str = "") -> "TradingPolicy":
        """Trade at ``-x`` on ``[0, r]`` with an all-or-nothing dark order of
        size ``x_hat`` that is cancelled at ``min(tau_1, r)``; unwind after ``r``."""
        if not r > 0:
            raise ValueError("round trip needs r > 0")
        return cls(
            x_hat=x_hat,
            xi_min=abs(x_hat),
            rho=r,
            breaks=(0.0, r),
            rates=(0.0 - x,),
            cancel_on_first_arrival=True,
            on_fill="continue",
            kind="single-update",
            name=name or "single-update round trip",
        )

    # helpers ------------------------------------------------------------

    @property
    def cumulative(self) -> np.ndarray:
        b = np.asarray(self.breaks)
        return np.concatenate([[0.0], np.cumsum(np.diff(b) * np.asarray(self.rates))])

    def pre_update_rate(self, t):
        """Scheduled rate at ``t`` (in force on ``(b_k, b_{k+1}]``)."""
        t = np.asarray(t, dtype=float)
        if not self.rates:
            return np.zeros_like(t)
        idx = np.searchsorted(np.asarray(self.breaks), t, side="left") - 1
        idx = np.clip(idx, 0, len(self.rates) - 1)
        return np.asarray(self.rates)[idx]

    def pre_update_position(self, t, x0: float):
        """``x0`` plus the scheduled exchange trades on ``[0, t]``, ``t <= rho``."""
        if not self.rates:
            return np.full_like(np.asarray(t, dtype=float), x0)
        return x0 + np.interp(t, self.breaks, self.cumulative)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "x_hat": self.x_hat,
            "xi_min": self.xi_min,
            "rho": self.rho,
            "breaks": list(self.breaks),
            "rates": list(self.rates),
            "cancel_on_first_arrival": self.cancel_on_first_arrival,
            "on_fill": self.on_fill,
        }


@dataclass
class PathBatch:
    """Realized paths on a common padded segment layout.

    Segment ``k`` of row ``i`` is ``(breaks[i, k], breaks[i, k+1]]`` with
    constant exchange rate ``rates[i, k]``; ``fills[i, k]`` is the dark fill
    executed at the right end of that segment. ``prices`` holds the unaffected
    price at every break. Zero-length segments are padding.
    """

    x0: float
    T: float
    breaks: np.ndarray
    rates: np.ndarray
    fills: np.ndarray
    prices: np.ndarray
    rho: np.ndarray
    arrival_times: np.ndarray
    arrival_sizes: np.ndarray
    arrival_fills: np.ndarray
    tau1: np.ndarray = field(default=None)

    @property
    def n_paths(self) -> int:
        return self.breaks.shape[0]

    def path(self, i: int) -> "PathRealization":
        keep = np.isfinite(self.arrival_times[i])
        times = self.arrival_times[i][keep]
        return PathRealization(
            x0=self.x0,
            T=self.T,
            breaks=self.breaks[i].copy(),
            rates=self.rates[i].copy(),
            fills=self.fills[i].copy(),
            prices=self.prices[i].copy(),
            rho=float(self.rho[i]),
            arrivals=ArrivalStream(times=times, sizes=self.arrival_sizes[i][keep]),
            fill_sequence=FillSequence.from_executed(self.arrival_fills[i][keep]),
        )


@dataclass
class PathRealization:
    """One realized world: arrivals, fills, price path and executed schedule."""

    x0: float
    T: float
    breaks: np.ndarray
    rates: np.ndarray
    fills: np.ndarray
    prices: np.ndarray
    rho: float
    arrivals: Optional[ArrivalStream] = None
    fill_sequence: Optional[FillSequence] = None

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        self.fills = np.asarray(self.fills, dtype=float)
        self.prices = np.asarray(self.prices, dtype=float)
        m = self.rates.size
        if self.breaks.size != m + 1 or self.fills.size != m or self.prices.size != m + 1:
            raise ValueError("inconsistent segment layout")
        if np.any(np.diff(self.breaks) < 0):
            raise ValueError("breaks must be nondecreasing")

    @property
    def price(self) -> PricePath:
        return PricePath(grid=self.breaks, values=self.prices)

    @classmethod
    def from_schedule(
        cls,
        x0: float,
        T: float,
        breaks,
        rates,
        fill_times=(),
        fill_amounts=(),
        rho: Optional[float] = None,
        prices=None,
        p0: float = 100.0,
    ) -> "PathRealization":
        """Build a path by hand; fill times are inserted as breaks.

        ``prices`` may be a callable ``t -> P0_t`` or ``None`` for a constant
        price ``p0``.
        """
        breaks = [float(b) for b in breaks]
        rates = [float(r) for r in rates]
        grid = sorted(set(breaks) | {float(t) for t in fill_times})
        seg_rates = []
        for a, b in zip(grid[:-1], grid[1:]):
            mid = 0.5 * (a + b)
            k = int(np.searchsorted(breaks, mid)) - 1
            seg_rates.append(rates[min(max(k, 0), len(rates) - 1)])
        fills = np.zeros(len(grid) - 1)
        for t, y in zip(fill_times, fill_amounts):
            fills[grid.index(float(t)) - 1] += y
        if prices is None:
            pv = np.full(len(grid), float(p0))
        else:
            pv = np.array([prices(t) for t in grid], dtype=float)
        if rho is None:
            rho = max(fill_times) if len(fill_times) else 0.0
        times = np.asarray(fill_times, dtype=float)
        return cls(
            x0=x0,
            T=T,
            breaks=np.asarray(grid),
            rates=np.asarray(seg_rates),
            fills=fills,
            prices=pv,
            rho=float(rho),
            arrivals=ArrivalStream(times=times, sizes=np.abs(np.asarray(fill_amounts, dtype=float)))
            if len(times)
            else None,
            fill_sequence=FillSequence.from_executed(fill_amounts),
        )


def simulate_batch(
    params: ModelParams,
    policy: TradingPolicy,
    x0: float,
    T: float,
    n_paths: int,
    rng: np.random.Generator,
    p0: float = 100.0,
    price_steps: int = 0,
) -> PathBatch:
    """Sample ``n_paths`` worlds and realize ``policy`` on each of them."""
    if not T > 0:
        raise ValueError("T must be > 0")
    if not policy.rho < T:
        raise ValueError(f"cancellation time rho={policy.rho} must be < T={T}")
    n = int(n_paths)
    r = policy.rho
    theta = params.theta
    mu = params.mu

    # arrivals: only the first one can matter under these conditions
    first_only = policy.cancel_on_first_arrival or mu.is_infinite or policy.x_hat == 0.0
    tau1 = rng.exponential(1.0 / theta, n)
    if first_only or r == 0.0:
        times = tau1[:, None].copy()
    else:
        rest = sample_arrivals_batch(theta, r, n, rng)
        times = np.concatenate([tau1[:, None], tau1[:, None] + rest], axis=1)
    times[times > r] = np.inf
    sizes = mu.sample(rng, times.shape)

    # cancellation and fills
    rho_real = np.full(n, float(r))
    if policy.cancel_on_first_arrival:
        rho_real = np.minimum(rho_real, tau1)
    active = times <= rho_real[:, None]
    y = match_orders_batch(policy.x_hat, policy.xi_min, sizes, active)
    filled = y != 0.0
    first_fill = np.where(filled.any(axis=1), np.where(filled, times, np.inf).min(axis=1), np.inf)
    if policy.on_fill == "liquidate":
        rho_real = np.minimum(rho_real, first_fill)
        y = np.where(times <= rho_real[:, None], y, 0.0)
        switch = np.minimum(first_fill, r)
    else:
        switch = np.full(n, float(r))
    halt_at = first_fill if policy.on_fill == "halt" else np.full(n, np.inf)

    # position right after the update
    pre_end = np.minimum(switch, halt_at)
    x_switch = policy.pre_update_position(pre_end, x0) + y.sum(axis=1)
    post_rate = -x_switch / (T - switch)

    # breaks: fills first so that ties attach the fill to the positive-length segment
    det = list(policy.breaks) + [T]
    if price_steps:
        det += list(np.linspace(0.0, T, int(price_steps) + 1))
    det = np.unique(np.asarray(det, dtype=float))
    fill_t = np.where(np.isfinite(times), times, T)
    extra = np.stack([rho_real, switch, np.where(np.isfinite(halt_at), np.minimum(halt_at, T), T)], axis=1)
    all_t = np.concatenate([fill_t, extra, np.broadcast_to(det, (n, det.size))], axis=1)
    all_y = np.concatenate([y, np.zeros_like(extra), np.zeros((n, det.size))], axis=1)
    order = np.argsort(all_t, axis=1, kind="stable")
    b = np.take_along_axis(all_t, order, axis=1)
    amounts = np.take_along_axis(all_y, order, axis=1)

    mid = 0.5 * (b[:, 1:] + b[:, :-1])
    pre = policy.pre_update_rate(mid)
    pre = np.where(mid > halt_at[:, None], 0.0, pre)
    rates = np.where(mid < switch[:, None], pre, post_rate[:, None])
    rates = np.where(b[:, 1:] > b[:, :-1], rates, 0.0)
    seg_fills = amounts[:, 1:]

    prices = np.full(b.shape, float(p0))
    if params.sigma > 0:
        steps = params.sigma * np.sqrt(np.diff(b, axis=1)) * rng.standard_normal((n, b.shape[1] - 1))
        prices[:, 1:] += np.cumsum(steps, axis=1)

    return PathBatch(
        x0=float(x0),
        T=float(T),
        breaks=b,
        rates=rates,
        fills=seg_fills,
        prices=prices,
        rho=rho_real,
        arrival_times=times,
        arrival_sizes=sizes,
        arrival_fills=y,
        tau1=tau1,
    )
