"""Parameter types, impact functions and the shared scalar cost formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats


@dataclass(frozen=True)
class ImpactFunction:
    """Power-law impact ``h(x) = eta * sgn(x) * |x|**nu``.

    ``nu == 1`` is the linear case ``h(x) = eta * x``; ``eta == 0`` gives the
    zero function (only meaningful as a slippage function).
    """

    eta: float = 0.0
    nu: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be finite and > 0, got {self.nu}")

    @classmethod
    def linear(cls, eta: float) -> "ImpactFunction":
        return cls(eta=eta, nu=1.0)

    @classmethod
    def zero(cls) -> "ImpactFunction":
        return cls(eta=0.0, nu=1.0)

    @property
    def kind(self) -> str:
        return "linear" if self.nu == 1.0 else "power-law"

    @property
    def is_linear(self) -> bool:
        return self.nu == 1.0

    @property
    def is_zero(self) -> bool:
        return self.eta == 0.0

    def __call__(self, x):
        return impact_value(self, x)


def impact_value(h: ImpactFunction, x):
    """Price offset ``h(x)`` for trade rate ``x`` (scalar or array)."""
    if h.nu == 1.0:
        return h.eta * x
    if np.ndim(x) == 0:
        x = float(x)
        return math.copysign(h.eta * abs(x) ** h.nu, x) if x != 0 else 0.0
    x = np.asarray(x, dtype=float)
    return h.eta * np.sign(x) * np.abs(x) ** h.nu


def f_value(h: ImpactFunction, x):
    """Cost rate ``f(x) = x * h(x)``; nonnegative and zero only at zero."""
    if h.nu == 1.0:
        return h.eta * x * x
    if np.ndim(x) == 0:
        return h.eta * abs(float(x)) ** (1.0 + h.nu)
    return h.eta * np.abs(np.asarray(x, dtype=float)) ** (1.0 + h.nu)


@dataclass(frozen=True)
class OrderSizeLaw:
    """Law of the sizes of incoming matching orders in the dark pool.

    kind is one of ``infinite`` (every matching order is unbounded),
    ``exponential`` (``mean``), ``lognormal`` (``location``, ``scale`` of the
    underlying normal) or ``discrete`` (``atoms``, ``weights``; atoms may
    include ``inf``).
    """

    kind: str = "infinite"
    mean: Optional[float] = None
    location: Optional[float] = None
    scale: Optional[float] = None
    atoms: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind == "infinite":
            return
        if self.kind == "exponential":
            if self.mean is None or not (self.mean > 0 and math.isfinite(self.mean)):
                raise ValueError("exponential order-size law needs a finite mean > 0")
        elif self.kind == "lognormal":
            if self.location is None or self.scale is None or not self.scale > 0:
                raise ValueError("lognormal order-size law needs location and scale > 0")
        elif self.kind == "discrete":
            atoms = tuple(float(a) for a in self.atoms)
            weights = tuple(float(w) for w in self.weights)
            if not atoms or len(atoms) != len(weights):
                raise ValueError("discrete order-size law needs matching atoms and weights")
            if any(not a > 0 for a in atoms):
                raise ValueError("order-size atoms must be > 0")
            if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, rel_tol=1e-9):
                raise ValueError("order-size weights must be >= 0 and sum to 1")
            object.__setattr__(self, "atoms", atoms)
            object.__setattr__(self, "weights", weights)
        else:
            raise ValueError(f"unknown order-size law kind {self.kind!r}")

    @classmethod
    def infinite(cls) -> "OrderSizeLaw":
        return cls("infinite")

    @classmethod
    def exponential(cls, mean: float) -> "OrderSizeLaw":
        return cls("exponential", mean=mean)

    @classmethod
    def lognormal(cls, location: float, scale: float) -> "OrderSizeLaw":
        return cls("lognormal", location=location, scale=scale)

    @classmethod
    def discrete(cls, atoms, weights) -> "OrderSizeLaw":
        return cls("discrete", atoms=tuple(atoms), weights=tuple(weights))

    @property
    def is_infinite(self) -> bool:
        return self.kind == "infinite"

    def tail(self, x: float) -> float:
        """``mu([x, inf])``."""
        x = float(x)
        if x <= 0 or self.kind == "infinite":
            return 1.0
        if math.isinf(x):
            return self.tail_at_infinity()
        if self.kind == "exponential":
            return math.exp(-x / self.mean)
        if self.kind == "lognormal":
            return float(stats.norm.sf((math.log(x) - self.location) / self.scale))
        return float(sum(w for a, w in zip(self.atoms, self.weights) if a >= x))

    def tail_at_infinity(self) -> float:
        if self.kind == "infinite":
            return 1.0
        if self.kind == "discrete":
            return float(sum(w for a, w in zip(self.atoms, self.weights) if math.isinf(a)))
        return 0.0

    def tail_condition_holds(self) -> bool:
        """True when every finite level is exceeded with positive probability."""
        if self.kind == "discrete":
            return self.tail_at_infinity() > 0
        return True

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "infinite":
            return np.full(size, np.inf)
        if self.kind == "exponential":
            return rng.exponential(self.mean, size)
        if self.kind == "lognormal":
            return np.exp(rng.normal(self.location, self.scale, size))
        idx = rng.choice(len(self.atoms), size=size, p=np.asarray(self.weights))
        return np.asarray(self.atoms)[idx]

    def capped_moment(self, cap: float, power: float) -> float:
        """``E[min(Y, cap)**power]`` for ``cap >= 0`` and ``power > 0``."""
        cap = float(cap)
        if cap <= 0:
            return 0.0
        if self.kind == "infinite":
            return cap ** power
        if self.kind == "discrete":
            return float(sum(w * min(a, cap) ** power for a, w in zip(self.atoms, self.weights)))
        if self.kind == "exponential" and power == 2.0:
            m = self.mean
            u = cap / m
            # 2 m^2 (1 - e^{-u}(1 + u)), written to avoid cancellation for small u
            return 2.0 * m * m * float(special.gammainc(2.0, u))
        if self.kind == "lognormal" and power == 2.0:
            mu, s = self.location, self.scale
            z = (math.log(cap) - mu) / s
            below = math.exp(2 * mu + 2 * s * s) * float(stats.norm.cdf(z - 2 * s))
            return below + cap * cap * float(stats.norm.sf(z))
        # E[min(Y,c)^p] = int_0^c p y^{p-1} P(Y > y) dy
        from .numerics import integrate_adaptive

        def integrand(y):
            y = np.asarray(y, dtype=float)
            return power * y ** (power - 1.0) * np.array([self.tail(v) for v in y])

        return integrate_adaptive(integrand, 0.0, cap, tol=1e-12 * max(1.0, cap ** power))


@dataclass(frozen=True)
class ACParams:
    """Exchange-side parameters: permanent impact, temporary impact, volatility."""

    gamma: float
    h: ImpactFunction
    sigma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class DarkPoolParams:
    """Dark-pool parameters: cross-venue impact, slippage, arrivals, sizes."""

    alpha: float = 0.0
    beta: ImpactFunction = field(default_factory=ImpactFunction.zero)
    kappa: float = 0.0
    theta: float = 1.0
    mu: OrderSizeLaw = field(default_factory=OrderSizeLaw.infinite)

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be > 0, got {self.theta}")


@dataclass(frozen=True)
class ModelParams:
    ac: ACParams
    dp: DarkPoolParams

    @classmethod
    def build(
        cls,
        gamma: float,
        eta: float,
        nu: float = 1.0,
        sigma: float = 0.0,
        alpha: float = 0.0,
        beta_eta: float = 0.0,
        beta_nu: float = 1.0,
        kappa: float = 0.0,
        theta: float = 1.0,
        mu: Optional[OrderSizeLaw] = None,
    ) -> "ModelParams":
        """Flat constructor, convenient for scripts and tests."""
        return cls(
            ac=ACParams(gamma=gamma, h=ImpactFunction(eta, nu), sigma=sigma),
            dp=DarkPoolParams(
                alpha=alpha,
                beta=ImpactFunction(beta_eta, beta_nu),
                kappa=kappa,
                theta=theta,
                mu=mu if mu is not None else OrderSizeLaw.infinite(),
            ),
        )

    # shortcuts used throughout the formulas
    @property
    def gamma(self) -> float:
        return self.ac.gamma

    @property
    def h(self) -> ImpactFunction:
        return self.ac.h

    @property
    def sigma(self) -> float:
        return self.ac.sigma

    @property
    def alpha(self) -> float:
        return self.dp.alpha

    @property
    def beta(self) -> ImpactFunction:
        return self.dp.beta

    @property
    def kappa(self) -> float:
        return self.dp.kappa

    @property
    def theta(self) -> float:
        return self.dp.theta

    @property
    def mu(self) -> OrderSizeLaw:
        return self.dp.mu

    def with_sigma(self, sigma: float) -> "ModelParams":
        return ModelParams(ac=ACParams(self.gamma, self.h, sigma), dp=self.dp)

    def to_dict(self) -> dict:
        mu = self.mu
        law = {"kind": mu.kind}
        if mu.kind == "exponential":
            law["mean"] = mu.mean
        elif mu.kind == "lognormal":
            law.update(location=mu.location, scale=mu.scale)
        elif mu.kind == "discrete":
            law.update(atoms=list(mu.atoms), weights=list(mu.weights))
        return {
            "gamma": self.gamma,
            "eta": self.h.eta,
            "nu": self.h.nu,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "beta_eta": self.beta.eta,
            "beta_nu": self.beta.nu,
            "kappa": self.kappa,
            "theta": self.theta,
            "order_size": law,
        }


def phi(params: ModelParams, y):
    """Net dark-fill cost ``(gamma/2) y^2 - alpha gamma y^2 + beta(y) y``."""
    g, a = params.gamma, params.alpha
    return (0.5 * g - a * g) * y * y + f_value(params.beta, y)
