"""YAML experiment configuration: parsing, defaults and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .model import ModelParams, OrderSizeLaw
from .policy import ON_FILL_MODES, TradingPolicy

EXPERIMENT_KINDS = ("audit", "cost", "simulate", "manipulate", "optimize")
OUTPUT_FORMATS = ("json", "txt", "csv")

MODEL_DEFAULTS = {
    "nu": 1.0,
    "sigma": 0.0,
    "alpha": 0.0,
    "kappa": 0.0,
    "beta_eta": 0.0,
    "beta_nu": 1.0,
    "order_size": {"kind": "infinite"},
}

EXPERIMENT_DEFAULTS = {
    "x0": 0.0,
    "T": None,
    "n_paths": 100000,
    "seed": 12345,
    "size": 1.0,
    "p0": 100.0,
    "price_steps": 0,
    "fixed_x_hat": None,
    "n_final": 2000,
    "policy": None,
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    kind: str
    x0: float = 0.0
    T: Optional[float] = None
    n_paths: int = 100000
    seed: int = 12345
    size: float = 1.0
    p0: float = 100.0
    price_steps: int = 0
    fixed_x_hat: Optional[float] = None
    n_final: int = 2000
    policy: Optional[TradingPolicy] = None


@dataclass
class OutputConfig:
    dir: str = "out"
    formats: tuple = OUTPUT_FORMATS


@dataclass
class Config:
    model: ModelParams
    experiment: ExperimentConfig
    output: OutputConfig
    echo: dict = field(default_factory=dict)


def _number(section: str, key: str, value, positive=False, nonneg=False, allow_none=False):
    name = f"{section}.{key}"
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if positive and not value > 0:
        raise ConfigError(name, f"must be > 0, got {value}")
    if nonneg and not value >= 0:
        raise ConfigError(name, f"must be >= 0, got {value}")
    return value


def _integer(section, key, value, minimum):
    name = f"{section}.{key}"
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(name, f"must be >= {minimum}")
    return value


def _reject_unknown(section: str, given: dict, allowed):
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ConfigError(f"{section}.{extra[0]}", "unknown key")


def _order_size(raw) -> tuple[OrderSizeLaw, dict]:
    sec = "model.order_size"
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError(sec, "expected a mapping with a 'kind'")
    kind = raw["kind"]
    try:
        if kind == "infinite":
            _reject_unknown(sec, raw, ["kind"])
            return OrderSizeLaw.infinite(), {"kind": kind}
        if kind == "exponential":
            _reject_unknown(sec, raw, ["kind", "mean"])
            mean = _number(sec, "mean", raw.get("mean"), positive=True)
            return OrderSizeLaw.exponential(mean), {"kind": kind, "mean": mean}
        if kind == "lognormal":
            _reject_unknown(sec, raw, ["kind", "location", "scale"])
            loc = _number(sec, "location", raw.get("location"))
            scale = _number(sec, "scale", raw.get("scale"), positive=True)
            return OrderSizeLaw.lognormal(loc, scale), {"kind": kind, "location": loc, "scale": scale}
        if kind == "discrete":
            _reject_unknown(sec, raw, ["kind", "atoms", "weights"])
            atoms = [math.inf if a in ("inf", ".inf") else a for a in raw.get("atoms", [])]
            law = OrderSizeLaw.discrete(atoms, raw.get("weights", []))
            return law, {"kind": kind, "atoms": [str(a) if math.isinf(a) else a for a in law.atoms],
                         "weights": list(law.weights)}
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(sec, str(exc)) from exc
    raise ConfigError(f"{sec}.kind", f"unknown kind {kind!r}")


def parse_model(raw: dict) -> tuple[ModelParams, dict]:
    sec = "model"
    if not isinstance(raw, dict):
        raise ConfigError(sec, "expected a mapping")
    keys = ["gamma", "eta", "theta", *MODEL_DEFAULTS]
    _reject_unknown(sec, raw, keys)
    for req in ("gamma", "eta", "theta"):
        if req not in raw:
            raise ConfigError(f"{sec}.{req}", "required")
    vals = {**MODEL_DEFAULTS, **raw}
    gamma = _number(sec, "gamma", vals["gamma"], positive=True)
    eta = _number(sec, "eta", vals["eta"], positive=True)
    theta = _number(sec, "theta", vals["theta"], positive=True)
    nu = _number(sec, "nu", vals["nu"], positive=True)
    sigma = _number(sec, "sigma", vals["sigma"], nonneg=True)
    alpha = _number(sec, "alpha", vals["alpha"])
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"{sec}.alpha", f"must lie in [0, 1], got {alpha}")
    kappa = _number(sec, "kappa", vals["kappa"], nonneg=True)
    beta_eta = _number(sec, "beta_eta", vals["beta_eta"], nonneg=True)
    beta_nu = _number(sec, "beta_nu", vals["beta_nu"], positive=True)
    mu, mu_echo = _order_size(vals["order_size"])
    params = ModelParams.build(
        gamma=gamma, eta=eta, nu=nu, sigma=sigma, alpha=alpha, beta_eta=beta_eta,
        beta_nu=beta_nu, kappa=kappa, theta=theta, mu=mu,
    )
    echo = dict(gamma=gamma, eta=eta, nu=nu, sigma=sigma, alpha=alpha, kappa=kappa, theta=theta,
                beta_eta=beta_eta, beta_nu=beta_nu, order_size=mu_echo)
    return params, echo


POLICY_KEYS = ("type", "x", "x_hat", "r", "xi_min", "breaks", "rates", "on_fill", "cancel_on_first_arrival")


def parse_policy(raw: dict, T: Optional[float]) -> tuple[TradingPolicy, dict]:
    sec = "experiment.policy"
    if not isinstance(raw, dict):
        raise ConfigError(sec, "expected a mapping")
    _reject_unknown(sec, raw, POLICY_KEYS)
    ptype = raw.get("type", "schedule")
    try:
        if ptype == "liquidation":
            pol = TradingPolicy.liquidation()
        elif ptype == "round_trip":
            x = _number(sec, "x", raw.get("x", 0.0))
            x_hat = _number(sec, "x_hat", raw.get("x_hat", 0.0))
            r = _number(sec, "r", raw.get("r"), positive=True)
            pol = TradingPolicy.round_trip(x, x_hat, r)
        elif ptype == "schedule":
            x_hat = _number(sec, "x_hat", raw.get("x_hat", 0.0))
            xi_min = _number(sec, "xi_min", raw.get("xi_min", 0.0), nonneg=True)
            if xi_min > abs(x_hat):
                raise ConfigError(f"{sec}.xi_min", f"must not exceed |x_hat| = {abs(x_hat)}")
            on_fill = raw.get("on_fill", "continue")
            if on_fill not in ON_FILL_MODES:
                raise ConfigError(f"{sec}.on_fill", f"must be one of {ON_FILL_MODES}")
            breaks = raw.get("breaks", [0.0])
            rates = raw.get("rates", [])
            if not isinstance(breaks, list) or not isinstance(rates, list):
                raise ConfigError(f"{sec}.breaks", "breaks and rates must be lists")
            pol = TradingPolicy.schedule(
                [_number(sec, "breaks", b) for b in breaks],
                [_number(sec, "rates", v) for v in rates],
                x_hat=x_hat,
                xi_min=xi_min,
                on_fill=on_fill,
                cancel_on_first_arrival=bool(raw.get("cancel_on_first_arrival", False)),
            )
        else:
            raise ConfigError(f"{sec}.type", f"unknown policy type {ptype!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(sec, str(exc)) from exc
    if T is not None and not pol.rho < T:
        raise ConfigError(f"{sec}.r", f"cancellation time {pol.rho} must be < T = {T}")
    echo = {"type": ptype, **pol.to_dict()}
    return pol, echo


def parse_experiment(raw: dict, kind_override: Optional[str] = None) -> tuple[ExperimentConfig, dict]:
    sec = "experiment"
    if not isinstance(raw, dict):
        raise ConfigError(sec, "expected a mapping")
    _reject_unknown(sec, raw, ["kind", *EXPERIMENT_DEFAULTS])
    kind = kind_override or raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"{sec}.kind", f"must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    vals = {**EXPERIMENT_DEFAULTS, **raw}
    x0 = _number(sec, "x0", vals["x0"])
    T = _number(sec, "T", vals["T"], positive=True, allow_none=True)
    if T is None and kind != "audit":
        raise ConfigError(f"{sec}.T", f"required for kind {kind!r}")
    n_paths = _integer(sec, "n_paths", vals["n_paths"], 2)
    seed = _integer(sec, "seed", vals["seed"], 0)
    size = _number(sec, "size", vals["size"], positive=True)
    p0 = _number(sec, "p0", vals["p0"])
    price_steps = _integer(sec, "price_steps", vals["price_steps"], 0)
    fixed = _number(sec, "fixed_x_hat", vals["fixed_x_hat"], allow_none=True)
    n_final = _integer(sec, "n_final", vals["n_final"], 2)
    policy, policy_echo = None, None
    if vals["policy"] is not None:
        policy, policy_echo = parse_policy(vals["policy"], T)
    elif kind in ("cost", "simulate"):
        raise ConfigError(f"{sec}.policy", f"required for kind {kind!r}")
    exp = ExperimentConfig(kind, x0, T, n_paths, seed, size, p0, price_steps, fixed, n_final, policy)
    echo = dict(kind=kind, x0=x0, T=T, n_paths=n_paths, seed=seed, size=size, p0=p0,
                price_steps=price_steps, fixed_x_hat=fixed, n_final=n_final, policy=policy_echo)
    return exp, echo


def parse_output(raw) -> tuple[OutputConfig, dict]:
    sec = "output"
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(sec, "expected a mapping")
    _reject_unknown(sec, raw, ["dir", "formats"])
    formats = tuple(raw.get("formats", OUTPUT_FORMATS))
    for f in formats:
        if f not in OUTPUT_FORMATS:
            raise ConfigError(f"{sec}.formats", f"unknown format {f!r}")
    out = OutputConfig(dir=str(raw.get("dir", "out")), formats=formats)
    return out, {"dir": out.dir, "formats": list(formats)}


def config_from_dict(raw: dict, kind_override: Optional[str] = None) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping with model, experiment and output sections")
    _reject_unknown("<root>", raw, ["model", "experiment", "output"])
    if "model" not in raw:
        raise ConfigError("model", "required")
    model, m_echo = parse_model(raw["model"])
    exp, e_echo = parse_experiment(raw.get("experiment", {}), kind_override)
    out, o_echo = parse_output(raw.get("output"))
    return Config(model, exp, out, {"model": m_echo, "experiment": e_echo, "output": o_echo})


def load_config(path, kind_override: Optional[str] = None) -> Config:
    """Read, validate and complete a YAML configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        raise ConfigError("<file>", f"parse error at {where}: {getattr(exc, 'problem', exc)}") from exc
    return config_from_dict(raw, kind_override)
