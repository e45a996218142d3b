"""Regularity audits, analytic expected costs of the manipulation recipes, and
construction of executable recipes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .model import ModelParams, OrderSizeLaw, f_value, impact_value, phi
from .numerics import golden_section
from .policy import TradingPolicy

RECIPE_KINDS = ("gap-roundtrip", "largeT-linear", "sublinear", "alpha0-threephase", "alpha1-unbounded")
CLASSIFICATIONS = ("regular-all-T", "regular-below-T*", "irregular-all-T", "unclassified")

# threshold below which an analytic cost counts as strictly negative
NEGATIVE_TOL = 1e-12


def signed_log_grid(n_per_side: int = 120, lo: float = 1e-6, hi: float = 1e6) -> np.ndarray:
    """Sorted grid ``-hi .. -lo, 0, lo .. hi`` (241 points by default)."""
    pos = np.geomspace(lo, hi, n_per_side)
    return np.concatenate([-pos[::-1], [0.0], pos])


def lambda0(theta: float) -> float:
    """Smallest arrival rate ``(1 - e^{-theta d}) / d`` over ``d`` in ``(0, 1]``."""
    if not theta > 0:
        raise ValueError("theta must be > 0")
    return -math.expm1(-theta)


def lambda1(mu: OrderSizeLaw, x: float) -> float:
    """Probability that an incoming order has size at least ``x``."""
    if not x > 0:
        raise ValueError("x must be > 0")
    return mu.tail(x)


def arrival_before(theta: float, r: float) -> float:
    """``P[tau_1 <= r]``."""
    return -math.expm1(-theta * r)


def truncated_first_moment(theta: float, r: float) -> float:
    """``E[tau_1; tau_1 <= r] = (1 - e^{-theta r}(1 + theta r)) / theta``."""
    return float(special.gammainc(2.0, theta * r)) / theta


# ---------------------------------------------------------------------------
# condition checks


@dataclass(frozen=True)
class FullRegularityVerdict:
    """Check of the conditions giving nonnegative expected liquidation costs."""

    alpha_ok: bool
    kappa_ok: bool
    slippage_ok: bool
    witness: Optional[float] = None
    method: str = "symbolic"

    @property
    def passed(self) -> bool:
        return self.alpha_ok and self.kappa_ok and self.slippage_ok


@dataclass(frozen=True)
class HorizonVerdict:
    """Necessary slippage inequality for no manipulation at horizon ``T``."""

    T: float
    passed: bool
    witness: Optional[float] = None


def audit_nonnegative_costs(params: ModelParams) -> FullRegularityVerdict:
    """alpha == 1, kappa == 0 and ``|beta(y)| >= (gamma/2)|y|`` for all y."""
    alpha_ok = params.alpha == 1.0
    kappa_ok = params.kappa == 0.0
    half_gamma = 0.5 * params.gamma
    beta = params.beta
    if beta.is_linear:
        ok = beta.eta >= half_gamma * (1.0 - 1e-12)
        return FullRegularityVerdict(alpha_ok, kappa_ok, ok, None if ok else 1.0, "symbolic")
    y = signed_log_grid()
    lhs = np.abs(impact_value(beta, y))
    rhs = half_gamma * np.abs(y)
    bad = lhs < rhs * (1.0 - 1e-12)
    witness = float(y[np.argmax(bad)]) if bad.any() else None
    return FullRegularityVerdict(alpha_ok, kappa_ok, not bad.any(), witness, "grid")


def audit_horizon_slippage(params: ModelParams, T: float) -> HorizonVerdict:
    """``beta(y) y >= gamma (alpha - 1/2) y^2 + y h(-y/T)`` on the signed grid."""
    if not T > 0:
        raise ValueError("T must be > 0")
    y = signed_log_grid()
    lhs = f_value(params.beta, y)
    rhs = params.gamma * (params.alpha - 0.5) * y * y + y * impact_value(params.h, -y / T)
    bad = lhs < rhs - 1e-12 * (np.abs(lhs) + np.abs(rhs))
    witness = float(y[np.argmax(bad)]) if bad.any() else None
    return HorizonVerdict(T=float(T), passed=not bad.any(), witness=witness)


# ---------------------------------------------------------------------------
# regimes and the critical horizon


def _beta_zero(p: ModelParams) -> bool:
    return p.beta.is_zero


def regime_of(params: ModelParams) -> str:
    """Name of the analyzed regime the parameters fall into."""
    p = params
    if audit_nonnegative_costs(p).passed:
        return "full-regularity"
    if p.alpha == 1.0 and p.kappa == 0.0 and _beta_zero(p) and p.h.is_linear:
        return "alpha1-linear"
    if p.alpha == 1.0 and _beta_zero(p) and p.h.nu < 1.0:
        return "alpha1-sublinear"
    if p.alpha == 0.0 and p.kappa == 0.0 and _beta_zero(p) and p.h.is_linear and p.mu.is_infinite:
        return "alpha0-infinite-liquidity"
    return "unanalyzed"


@dataclass(frozen=True)
class CriticalHorizon:
    value: Optional[float]
    status: str  # exact | infinite | finite-unknown | unclassified
    lower_bound: Optional[float] = None
    reference: str = ""


def critical_horizon(params: ModelParams) -> CriticalHorizon:
    """Horizon below which no round trip has negative expected cost."""
    p = params
    regime = regime_of(p)
    lower = 2.0 * p.h.eta / p.gamma if (p.kappa == 0.0 and p.h.is_linear and _beta_zero(p)) else None
    if regime == "full-regularity":
        return CriticalHorizon(math.inf, "infinite", lower, "nonnegative expected liquidation costs")
    if regime == "alpha1-linear":
        return CriticalHorizon(2.0 * p.h.eta / p.gamma, "exact", lower, "alpha=1 with linear temporary impact")
    if regime == "alpha1-sublinear":
        return CriticalHorizon(0.0, "exact", None, "alpha=1 with sublinear temporary impact")
    if regime == "alpha0-infinite-liquidity":
        if p.gamma / p.h.eta <= 2.0 * p.theta:
            return CriticalHorizon(math.inf, "infinite", lower, "alpha=0, infinite dark liquidity, gamma/eta <= 2 theta")
        return CriticalHorizon(None, "finite-unknown", lower, "alpha=0, infinite dark liquidity, gamma/eta > 2 theta")
    return CriticalHorizon(None, "unclassified", lower, "outside the analyzed regimes")


def classify(params: ModelParams) -> str:
    ch = critical_horizon(params)
    if ch.status == "unclassified":
        return "unclassified"
    if ch.value is not None and math.isinf(ch.value):
        return "regular-all-T"
    if ch.value == 0.0:
        return "irregular-all-T"
    return "regular-below-T*"


def manipulation_expected_at(params: ModelParams, T: float) -> Optional[bool]:
    """Whether manipulation exists at horizon ``T``; ``None`` when unknown.

    The boundary ``T == T*`` counts as no manipulation.
    """
    ch = critical_horizon(params)
    if ch.status in ("exact", "infinite"):
        return T > ch.value
    if ch.lower_bound is not None and T <= ch.lower_bound:
        return False
    return None


# ---------------------------------------------------------------------------
# analytic expected costs


def single_update_roundtrip_cost(params: ModelParams, x: float, x_hat: float, r: float, T: float) -> float:
    """Expected cost of the round trip: rate ``-x`` on ``[0, r]``, dark order
    ``x_hat`` with minimum quantity ``|x_hat|`` cancelled at ``min(tau_1, r)``,
    then a constant rate that ends flat at ``T``."""
    if not (0.0 < r < T):
        raise ValueError(f"need 0 < r < T, got r={r}, T={T}")
    p = params
    h = p.h
    tail = p.mu.tail(abs(x_hat)) if x_hat != 0 else 1.0
    prob = arrival_before(p.theta, r) * tail
    rest = T - r
    cost = r * f_value(h, -x) + rest * f_value(h, r * x / rest) * (1.0 - prob)
    if x_hat != 0.0:
        cost += prob * (
            rest * f_value(h, (r * x - x_hat) / rest)
            + phi(p, x_hat)
            + p.kappa * impact_value(h, -x) * x_hat
        )
        cost -= p.gamma * (1.0 - p.alpha) * x * x_hat * tail * truncated_first_moment(p.theta, r)
    return float(cost)


def _capped_moment_sum(mu: OrderSizeLaw, cap: float, terms) -> float:
    """``E[sum_k c_k min(Y, cap)^{p_k}]`` for ``terms = [(c_k, p_k)]``."""
    return sum(c * mu.capped_moment(cap, pw) for c, pw in terms if c != 0.0)


def largeT_linear_cost(params: ModelParams, x_hat: float, eps: float, T: float) -> float:
    """No exchange trading until ``eps``; the first arrival before ``eps``
    fills ``min(size, |x_hat|)``, unwound at a constant rate on ``(eps, T]``."""
    if not (0.0 < eps < T):
        raise ValueError("need 0 < eps < T")
    p = params
    cap = abs(x_hat)
    rest = T - eps
    terms = [
        (0.5 * p.gamma - p.alpha * p.gamma, 2.0),
        (p.beta.eta, 1.0 + p.beta.nu),
        (p.h.eta * rest ** (-p.h.nu), 1.0 + p.h.nu),
    ]
    return arrival_before(p.theta, eps) * _capped_moment_sum(p.mu, cap, terms)


def sublinear_recipe_cost(params: ModelParams, x_hat: float, T: float) -> float:
    """All-or-nothing dark order until ``T/2``, unwound over ``(T/2, T]``."""
    p = params
    if x_hat == 0.0:
        return 0.0
    lam = p.theta * p.mu.tail(abs(x_hat))
    rho = 0.5 * T
    return -math.expm1(-lam * rho) * (rho * f_value(p.h, x_hat / rho) + phi(p, x_hat))


def sublinear_threshold(params: ModelParams, T: float) -> Optional[float]:
    """Dark order size above which the unwind is cheaper than the permanent gain
    (alpha=1, beta=0, power-law impact with exponent below 1)."""
    p = params
    nu = p.h.nu
    if nu >= 1.0 or p.h.eta == 0.0:
        return None
    return (2.0 * p.h.eta * (2.0 / T) ** nu / p.gamma) ** (1.0 / (1.0 - nu))


def _require_alpha0_regime(params: ModelParams):
    if regime_of(params) != "alpha0-infinite-liquidity":
        raise ValueError(
            "formula needs alpha = kappa = 0, beta = 0, linear temporary impact and infinite dark liquidity"
        )


def three_phase_cost(params: ModelParams, x0: float, x_hat: float, rho: float, T: float) -> float:
    """Exact finite-horizon expected cost of the three-phase strategy.

    Trade at ``-(gamma/2eta) x_hat`` until the fill or ``rho``, pause until
    ``rho``, then liquidate at a constant rate.
    """
    _require_alpha0_regime(params)
    if not (0.0 < rho < T):
        raise ValueError("need 0 < rho < T")
    g, eta, th = params.gamma, params.h.eta, params.theta
    c = g / (2.0 * eta)
    prob = arrival_before(th, rho)
    e_s = prob / th
    e_s2 = 2.0 * float(special.gammainc(2.0, th * rho)) / (th * th)
    e_fs = truncated_first_moment(th, rho)
    e_xrho2 = (
        x0 * x0
        + c * c * x_hat * x_hat * e_s2
        + prob * x_hat * x_hat
        - 2.0 * x0 * c * x_hat * e_s
        + 2.0 * x0 * x_hat * prob
        - 2.0 * c * x_hat * x_hat * e_fs
    )
    return (
        0.5 * g * (x0 * x0 + prob * (2.0 * x0 * x_hat + x_hat * x_hat))
        + eta * c * c * x_hat * x_hat * e_s
        + eta / (T - rho) * e_xrho2
        - g * g / (2.0 * eta) * x_hat * x_hat * e_fs
    )


def best_three_phase_rho(params: ModelParams, x0: float, x_hat: float, T: float) -> tuple[float, float]:
    """Cancellation time minimizing the finite-horizon three-phase cost."""
    return _minimize_scalar(lambda r: three_phase_cost(params, x0, x_hat, r, T), 1e-6 * T, T * (1 - 1e-6))


def alpha0_limit_cost(params: ModelParams, x0: float, x_hat: float) -> float:
    """Long-horizon limit of the three-phase cost."""
    _require_alpha0_regime(params)
    g, eta, th = params.gamma, params.h.eta, params.theta
    return 0.5 * g * (x0 + x_hat) ** 2 - g * g * x_hat * x_hat / (4.0 * eta * th)


def infinite_dp_bound(params: ModelParams, x0: float) -> tuple[float, float]:
    """Minimizer over the dark order of the long-horizon cost and its value.

    Requires ``gamma/eta < 2 theta``.
    """
    _require_alpha0_regime(params)
    g, eta, th = params.gamma, params.h.eta, params.theta
    d = 2.0 * eta * th - g
    if not d > 0:
        raise ValueError("bound needs gamma/eta < 2 theta")
    x_hat = -2.0 * eta * th * x0 / d
    value = -g * g * x0 * x0 / (2.0 * d)
    return (x_hat + 0.0, value + 0.0)


def equality_case_gain(theta: float, rho: float) -> float:
    """Closed form ``(1/2) theta rho e^{-theta rho}`` of the round-trip lower bound
    per unit ``gamma x_hat^2`` at ``gamma/eta = 2 theta``."""
    return 0.5 * theta * rho * math.exp(-theta * rho)


def equality_case_gain_integral(theta: float, gamma_over_eta: float, rho: float) -> float:
    """``int_0^rho theta e^{-theta t} (1/2 - gamma t / (4 eta)) dt`` by its pieces."""
    a = 0.5 * arrival_before(theta, rho)
    b = gamma_over_eta / (4.0 * theta) * float(special.gammainc(2.0, theta * rho))
    return a - b


def alpha1_unbounded_cost(params: ModelParams, x0: float, x_hat: float, T: float) -> float:
    """Wait until ``T/2`` with a dark order (no minimum quantity), then unwind
    the position at a constant rate; infinite dark liquidity, alpha = 1."""
    p = params
    if not (p.alpha == 1.0 and p.mu.is_infinite):
        raise ValueError("formula needs alpha = 1 and infinite dark liquidity")
    prob = arrival_before(p.theta, 0.5 * T)
    half = 0.5 * T
    return (
        0.5 * p.gamma * x0 * x0
        + (1.0 - prob) * half * f_value(p.h, x0 / half)
        + prob * (half * f_value(p.h, (x0 + x_hat) / half) + phi(p, x_hat))
    )


# ---------------------------------------------------------------------------
# recipes


@dataclass(frozen=True)
class ManipulationRecipe:
    kind: str
    T: float
    x_hat: float
    xi_min: float
    r: float
    x: float = 0.0
    x0: float = 0.0
    predicted_cost: Optional[float] = None
    formula: str = ""

    def __post_init__(self):
        if self.kind not in RECIPE_KINDS:
            raise ValueError(f"unknown recipe kind {self.kind!r}")

    def to_policy(self, params: Optional[ModelParams] = None) -> TradingPolicy:
        if self.kind == "gap-roundtrip":
            return TradingPolicy.round_trip(self.x, self.x_hat, self.r, name=self.kind)
        if self.kind == "largeT-linear":
            return TradingPolicy.schedule(
                [0.0, self.r], [0.0], x_hat=self.x_hat, xi_min=0.0,
                cancel_on_first_arrival=True, kind="proof-recipe", name=self.kind,
            )
        if self.kind == "sublinear":
            return TradingPolicy.schedule(
                [0.0, self.r], [0.0], x_hat=self.x_hat, xi_min=abs(self.x_hat),
                kind="proof-recipe", name=self.kind,
            )
        if self.kind == "alpha0-threephase":
            if params is None:
                raise ValueError("three-phase recipe needs the model parameters")
            rate = -params.gamma / (2.0 * params.h.eta) * self.x_hat
            return TradingPolicy.schedule(
                [0.0, self.r], [rate], x_hat=self.x_hat, xi_min=0.0,
                on_fill="halt", kind="proof-recipe", name=self.kind,
            )
        return TradingPolicy.schedule(
            [0.0, self.r], [0.0], x_hat=self.x_hat, xi_min=0.0, kind="proof-recipe", name=self.kind,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "x0": self.x0,
            "x": self.x,
            "x_hat": self.x_hat,
            "xi_min": self.xi_min,
            "r": self.r,
            "predicted_cost": self.predicted_cost,
            "formula": self.formula,
        }


def recipe_cost(params: ModelParams, recipe: ManipulationRecipe) -> float:
    """Analytic expected cost of a recipe."""
    k = recipe.kind
    if k == "gap-roundtrip":
        return single_update_roundtrip_cost(params, recipe.x, recipe.x_hat, recipe.r, recipe.T)
    if k == "largeT-linear":
        return largeT_linear_cost(params, recipe.x_hat, recipe.r, recipe.T)
    if k == "sublinear":
        return sublinear_recipe_cost(params, recipe.x_hat, recipe.T)
    if k == "alpha0-threephase":
        return three_phase_cost(params, recipe.x0, recipe.x_hat, recipe.r, recipe.T)
    return alpha1_unbounded_cost(params, recipe.x0, recipe.x_hat, recipe.T)


def _minimize_scalar(fn, lo: float, hi: float, n_grid: int = 65) -> tuple[float, float]:
    """Coarse grid followed by golden-section refinement around the best point."""
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([fn(v) for v in grid])
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, n_grid - 1)]
    arg, val = golden_section(fn, a, b, tol=1e-12)
    if vals[i] < val:
        return float(grid[i]), float(vals[i])
    return float(arg), float(val)


def _largeT_candidate(params, T, size):
    lo, hi = 1e-6 * T, T * (1.0 - 1e-6)
    eps, val = _minimize_scalar(lambda e: largeT_linear_cost(params, size, e, T), lo, hi)
    return ManipulationRecipe("largeT-linear", T, size, 0.0, eps, predicted_cost=val, formula="wait-then-unwind")


def _sublinear_candidate(params, T, size):
    mags = np.geomspace(1e-6 * size, 1e6 * size, 121)
    vals = np.array([sublinear_recipe_cost(params, m, T) for m in mags])
    neg = np.flatnonzero(vals < -NEGATIVE_TOL)
    if neg.size == 0:
        i = int(np.argmin(vals))
    else:
        # costs may decrease without bound; stay within a few times the onset
        limit = max(size, 4.0 * mags[neg[0]])
        ok = mags <= limit * (1 + 1e-12)
        i = int(np.argmin(np.where(ok, vals, np.inf)))
    return ManipulationRecipe(
        "sublinear", T, float(mags[i]), float(mags[i]), 0.5 * T,
        predicted_cost=float(vals[i]), formula="all-or-nothing-until-half-horizon",
    )


def _three_phase_candidate(params, T, size, x0=0.0):
    rho, val = best_three_phase_rho(params, x0, size, T)
    return ManipulationRecipe(
        "alpha0-threephase", T, size, 0.0, rho, x0=x0, predicted_cost=val, formula="three-phase-finite-horizon",
    )


def _gap_candidate(params, T, size):
    signs = (-1.0, 1.0)
    mags = np.geomspace(1e-6, 1.0, 13)
    xs = np.concatenate([[0.0], -mags * size, mags * size])
    hats = np.concatenate([-mags[::-1] * size, mags * size])
    rs = T * np.array([0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99])
    best = (math.inf, None)
    for xh in hats:
        for r in rs:
            for x in xs:
                v = single_update_roundtrip_cost(params, x, xh, r, T)
                if v < best[0]:
                    best = (v, (x, xh, r))
    val, (x, xh, r) = best
    # refine the pre-fill rate magnitude in [1e-6, 1] times its sign and size
    for s in signs:
        fn = lambda m: single_update_roundtrip_cost(params, s * m * size, xh, r, T)
        m, v = golden_section(fn, 1e-6, 1.0, tol=1e-10)
        if v < val:
            val, x = v, s * m * size
    return ManipulationRecipe(
        "gap-roundtrip", T, float(xh), abs(float(xh)), float(r), x=float(x),
        predicted_cost=float(val), formula="single-update-round-trip",
    )


def manipulation_candidates(params: ModelParams, T: float, size: float = 1.0) -> list:
    """Every applicable recipe with its optimized analytic cost."""
    if not T > 0:
        raise ValueError("T must be > 0")
    if not size > 0:
        raise ValueError("size must be > 0")
    out = [_largeT_candidate(params, T, size)]
    if params.h.nu < 1.0:
        out.append(_sublinear_candidate(params, T, size))
    if regime_of(params) == "alpha0-infinite-liquidity":
        out.append(_three_phase_candidate(params, T, size))
    out.append(_gap_candidate(params, T, size))
    return out


def construct_manipulation(params: ModelParams, T: float, size: float = 1.0) -> Optional[ManipulationRecipe]:
    """First recipe (in a fixed priority order) with negative analytic cost,
    or ``None`` when none is found."""
    for rec in manipulation_candidates(params, T, size):
        if rec.predicted_cost is not None and rec.predicted_cost < -NEGATIVE_TOL * max(1.0, size * size):
            return rec
    return None


# ---------------------------------------------------------------------------
# report


@dataclass
class AuditReport:
    full_regularity: FullRegularityVerdict
    horizon: Optional[HorizonVerdict]
    critical_horizon: CriticalHorizon
    classification: str
    recipe: Optional[ManipulationRecipe] = None
    notes: list = field(default_factory=list)

    def to_record(self) -> dict:
        fr = self.full_regularity
        ch = self.critical_horizon
        rec = {
            "nonnegative_costs_pass": fr.passed,
            "alpha_ok": fr.alpha_ok,
            "kappa_ok": fr.kappa_ok,
            "slippage_bound_ok": fr.slippage_ok,
            "slippage_bound_witness": fr.witness,
            "critical_horizon": _num(ch.value),
            "critical_horizon_status": ch.status,
            "critical_horizon_lower_bound": ch.lower_bound,
            "classification": self.classification,
            "notes": list(self.notes),
        }
        if self.horizon is not None:
            rec.update(
                horizon=self.horizon.T,
                horizon_slippage_pass=self.horizon.passed,
                horizon_slippage_witness=self.horizon.witness,
            )
        rec["recipe"] = self.recipe.to_dict() if self.recipe is not None else "none-found"
        return rec

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_record().items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    lines.append(f"recipe.{kk}: {vv}")
            elif isinstance(v, list):
                for item in v:
                    lines.append(f"note: {item}")
            else:
                lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def _num(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf"
    return v


def audit(params: ModelParams, T: Optional[float] = None, size: float = 1.0) -> AuditReport:
    """Run every check; with ``T`` also the horizon check and recipe search."""
    fr = audit_nonnegative_costs(params)
    ch = critical_horizon(params)
    notes = [f"regime: {regime_of(params)}", f"critical horizon basis: {ch.reference}"]
    if not params.mu.tail_condition_holds():
        notes.append("order-size law is bounded; arrival-size tail condition fails")
    hv = audit_horizon_slippage(params, T) if T is not None else None
    recipe = construct_manipulation(params, T, size) if T is not None else None
    if fr.passed:
        notes.append("nonnegative expected liquidation costs for every horizon")
    return AuditReport(fr, hv, ch, classify(params), recipe, notes)
