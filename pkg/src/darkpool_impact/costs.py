"""Realized liquidation costs (two independent formulas) and Monte Carlo means."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import ModelParams, f_value, impact_value
from .policy import PathBatch, PathRealization, TradingPolicy, simulate_batch

Path = Union[PathRealization, PathBatch]

BLOCK_SIZE = 16384


class AdmissibilityError(ValueError):
    """A realized path violates the liquidation constraint."""


@dataclass
class CostBreakdown:
    """Cost components; each field is a float for one path or an array for a batch."""

    face_value: object
    exchange_expense: object
    virtual_permanent: object
    dark_expense: object
    slippage: object

    @property
    def total(self):
        return (
            self.face_value
            + self.exchange_expense
            + self.virtual_permanent
            + self.dark_expense
            + self.slippage
        )

    def as_dict(self) -> dict:
        return {
            "face_value": self.face_value,
            "exchange_expense": self.exchange_expense,
            "virtual_permanent": self.virtual_permanent,
            "dark_expense": self.dark_expense,
            "slippage": self.slippage,
            "total": self.total,
        }


COMPONENTS = ("face_value", "exchange_expense", "virtual_permanent", "dark_expense", "slippage")


def liquidation_residual(path: Path, x0: Optional[float] = None):
    x0 = path.x0 if x0 is None else x0
    dt = np.diff(path.breaks, axis=-1)
    return x0 + np.sum(path.rates * dt, axis=-1) + np.sum(path.fills, axis=-1)


def liquidation_tolerance(x0: float) -> float:
    return 1e-9 * (1.0 + abs(x0))


def check_liquidation(policy: Optional[TradingPolicy], path: Path) -> bool:
    """True when the path ends flat (all rows, for a batch)."""
    res = liquidation_residual(path)
    ok = bool(np.all(np.abs(res) <= liquidation_tolerance(path.x0)))
    if policy is not None:
        ok = ok and bool(np.all(np.asarray(path.rho) < path.T))
        fills = np.abs(np.sum(path.fills, axis=-1))
        ok = ok and bool(np.all(fills <= abs(policy.x_hat) * (1 + 1e-12) + 1e-15))
    return ok


def _require_liquidation(path: Path, x0: float):
    res = liquidation_residual(path, x0)
    bad = np.abs(res) > liquidation_tolerance(x0)
    if np.any(bad):
        worst = float(np.max(np.abs(res)))
        raise AdmissibilityError(f"liquidation constraint violated (|residual| = {worst:.3e})")


def _segments(path: Path):
    b = path.breaks
    dt = np.diff(b, axis=-1)
    r = path.rates
    y = path.fills
    traded = r * dt
    cum_end = np.cumsum(traded, axis=-1)
    cum_start = cum_end - traded
    z_end = np.cumsum(y, axis=-1)
    z_start = z_end - y
    return dt, r, y, cum_start, cum_end, z_start


def realized_cost_direct(params: ModelParams, path: Path, x0: Optional[float] = None) -> CostBreakdown:
    """Cost from its definition: face value, exchange and dark expenses.

    The exchange integral of the unaffected price uses the price at the right
    end of each segment; together with the left-point stochastic integral of
    the alternative representation this keeps the two formulas identical on
    every path.
    """
    x0 = path.x0 if x0 is None else float(x0)
    _require_liquidation(path, x0)
    g, a = params.gamma, params.alpha
    p = path.prices
    dt, r, y, cum_start, cum_end, z_start = _segments(path)

    face = x0 * p[..., 0]
    exchange = (
        np.sum(r * dt * p[..., 1:], axis=-1)
        + g * np.sum(r * (cum_start * dt + 0.5 * r * dt * dt), axis=-1)
        + np.sum(f_value(params.h, r) * dt, axis=-1)
    )
    virtual = a * g * (np.sum(z_start * r * dt, axis=-1) + np.sum(z_start * y, axis=-1))
    dark_price = p[..., 1:] + g * cum_end + params.kappa * impact_value(params.h, r)
    dark = np.sum(y * dark_price, axis=-1)
    slip = np.sum(f_value(params.beta, y), axis=-1)
    return CostBreakdown(
        face_value=_scalarize(face),
        exchange_expense=_scalarize(exchange),
        virtual_permanent=_scalarize(virtual),
        dark_expense=_scalarize(dark),
        slippage=_scalarize(slip),
    )


def realized_cost_lemma(params: ModelParams, path: Path, x0: Optional[float] = None):
    """Cost as martingale term plus quadratic permanent term plus fill terms."""
    x0 = path.x0 if x0 is None else float(x0)
    _require_liquidation(path, x0)
    g, a = params.gamma, params.alpha
    p = path.prices
    dt, r, y, cum_start, cum_end, z_start = _segments(path)

    x_left = x0 + cum_start + z_start  # position on the open segment
    martingale = -np.sum(x_left * np.diff(p, axis=-1), axis=-1)
    permanent = 0.5 * g * (x0 + np.sum(y, axis=-1)) ** 2
    temporary = np.sum(f_value(params.h, r) * dt, axis=-1)
    x_after = x0 + cum_end + z_start + y
    per_fill = (
        g * cum_end
        - g * a * x_after
        + params.kappa * impact_value(params.h, r)
    ) * y + f_value(params.beta, y)
    return _scalarize(martingale + permanent + temporary + np.sum(per_fill, axis=-1))


def _scalarize(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class MCResult:
    mean: float
    se: float
    n_paths: int
    seed: int

    def __iter__(self):
        yield self.mean
        yield self.se


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for block ``block`` of a run with master seed ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(block),)))


def default_block_size(policy: TradingPolicy, price_steps: int = 0) -> int:
    """Paths per block, smaller for schedules with many breaks."""
    width = len(policy.breaks) + int(price_steps) + 8
    return int(min(BLOCK_SIZE, max(64, 2_000_000 // width)))


def simulate_paths(
    params: ModelParams,
    policy: TradingPolicy,
    x0: float,
    T: float,
    n_paths: int,
    seed: int,
    p0: float = 100.0,
    price_steps: int = 0,
    block_size: Optional[int] = None,
):
    """Yield ``(first_path_id, PathBatch)`` blocks in a fixed order.

    Each block draws from its own generator keyed by (seed, block index), so
    the paths do not depend on how blocks are scheduled.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if block_size is None:
        block_size = default_block_size(policy, price_steps)
    n_blocks = -(-int(n_paths) // block_size)
    for k in range(n_blocks):
        m = min(block_size, n_paths - k * block_size)
        batch = simulate_batch(params, policy, x0, T, m, block_rng(seed, k), p0=p0, price_steps=price_steps)
        yield k * block_size, batch


def mc_costs(
    params: ModelParams,
    policy: TradingPolicy,
    x0: float,
    T: float,
    n_paths: int,
    seed: int,
    p0: float = 0.0,
    price_steps: int = 0,
    block_size: Optional[int] = None,
) -> dict:
    """Per-path costs and diagnostics as a dict of arrays."""
    cols = {k: [] for k in ("tau1", "fill_total", *COMPONENTS)}
    for _, batch in simulate_paths(params, policy, x0, T, n_paths, seed, p0, price_steps, block_size):
        if not check_liquidation(policy, batch):
            raise AdmissibilityError("policy violates admissibility on a sampled path")
        br = realized_cost_direct(params, batch)
        cols["tau1"].append(batch.tau1)
        cols["fill_total"].append(batch.fills.sum(axis=1))
        for c in COMPONENTS:
            cols[c].append(np.broadcast_to(getattr(br, c), (batch.n_paths,)))
    out = {k: np.concatenate(v) for k, v in cols.items()}
    out["cost_total"] = sum(out[c] for c in COMPONENTS)
    out["path_id"] = np.arange(int(n_paths))
    return out


def mc_expected_cost(
    params: ModelParams,
    policy: TradingPolicy,
    x0: float,
    T: float,
    n_paths: int,
    seed: int,
    p0: float = 0.0,
    price_steps: int = 0,
) -> MCResult:
    """Sample mean and standard error of the realized cost."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    costs = mc_costs(params, policy, x0, T, n_paths, seed, p0=p0, price_steps=price_steps)["cost_total"]
    mean = float(np.mean(costs))
    se = float(np.std(costs, ddof=1) / math.sqrt(costs.size))
    return MCResult(mean=mean, se=se, n_paths=int(n_paths), seed=int(seed))


def write_path_csv(path, data: dict):
    """Per-path CSV: path_id, tau1, fill_total, cost_total, then components."""
    header = ["path_id", "tau1", "fill_total", "cost_total", *COMPONENTS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(data["path_id"])):
            row = [int(data["path_id"][i])]
            for k in header[1:]:
                v = float(data[k][i])
                row.append(repr(v) if math.isfinite(v) else "")
            w.writerow(row)
