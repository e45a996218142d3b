"""Command-line entry point and experiment orchestration."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .audit import (
    audit,
    construct_manipulation,
    single_update_roundtrip_cost,
)
from .config import EXPERIMENT_KINDS, Config, ConfigError, load_config
from .costs import (
    AdmissibilityError,
    mc_costs,
    mc_expected_cost,
    realized_cost_direct,
    realized_cost_lemma,
    simulate_paths,
    write_path_csv,
)
from .numerics import QuadratureError
from .optimizer import NumericalFailure, check_closed_form, optimize_single_update

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

CSV_HELP = """\
output files (in --out):
  summary.json    machine-readable record: config echo, results, version, seed
  report.txt      one "key: value" per line, plus runtime
  paths.csv       (simulate) path_id, tau1, fill_total, cost_total, face_value,
                  exchange_expense, virtual_permanent, dark_expense, slippage
                  tau1 is the first dark-pool arrival time; costs in price x shares
  trajectory.csv  (optimize) t, X, xi: pre-update inventory and exchange rate

exit codes: 0 success, 2 invalid configuration or policy, 3 numerical failure
"""


@dataclass
class Report:
    kind: str
    config: dict
    results: dict
    seed: int
    version: str = __version__
    runtime: float = 0.0
    files: list = field(default_factory=list)

    def record(self) -> dict:
        """Deterministic machine-readable record (no timing)."""
        return {
            "kind": self.kind,
            "version": self.version,
            "seed": self.seed,
            "config": self.config,
            "results": self.results,
        }

    def to_text(self) -> str:
        lines = [f"kind: {self.kind}", f"version: {self.version}", f"seed: {self.seed}"]
        lines += _flatten("", self.results)
        lines.append(f"runtime_seconds: {self.runtime:.3f}")
        return "\n".join(lines) + "\n"


def _flatten(prefix, obj):
    out = []
    for k, v in obj.items():
        out += _flatten_key(prefix + str(k), v)
    return out


def _flatten_key(key, v):
    if isinstance(v, dict):
        lines = []
        for k, vv in v.items():
            lines += _flatten_key(f"{key}.{k}", vv)
        return lines
    if isinstance(v, list):
        if all(not isinstance(x, (dict, list)) for x in v):
            return [f"{key}: {', '.join(str(x) for x in v)}"]
        lines = []
        for i, x in enumerate(v):
            lines += _flatten_key(f"{key}.{i}", x)
        return lines
    return [f"{key}: {v}"]


def _clean(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _mc_block(res, analytic=None, formula=None):
    out = {"mc_mean": res.mean, "mc_se": res.se, "n_paths": res.n_paths}
    if analytic is not None:
        out["analytic"] = analytic
        out["formula"] = formula
        out["within_3se"] = abs(res.mean - analytic) <= 3.0 * res.se
    return out


def _run_audit(cfg: Config) -> dict:
    e = cfg.experiment
    rep = audit(cfg.model, e.T, e.size)
    return rep.to_record()


def _run_cost(cfg: Config) -> dict:
    e, p, pol = cfg.experiment, cfg.model, cfg.experiment.policy
    res = mc_expected_cost(p, pol, e.x0, e.T, e.n_paths, e.seed, p0=e.p0, price_steps=e.price_steps)
    analytic = formula = None
    is_round_trip = (
        pol.cancel_on_first_arrival
        and pol.on_fill == "continue"
        and len(pol.rates) == 1
        and pol.xi_min == abs(pol.x_hat)
    )
    if is_round_trip and e.x0 == 0.0 and pol.rho > 0:
        analytic = single_update_roundtrip_cost(p, -pol.rates[0], pol.x_hat, pol.rho, e.T)
        formula = "single-update-round-trip"
    return {"policy": pol.to_dict(), **_mc_block(res, analytic, formula)}


def _run_simulate(cfg: Config, out_dir: str, files: list) -> dict:
    e, p, pol = cfg.experiment, cfg.model, cfg.experiment.policy
    data = mc_costs(p, pol, e.x0, e.T, e.n_paths, e.seed, p0=e.p0, price_steps=e.price_steps)
    worst = 0.0
    for _, batch in simulate_paths(p, pol, e.x0, e.T, e.n_paths, e.seed, e.p0, e.price_steps):
        d = realized_cost_direct(p, batch).total
        lem = realized_cost_lemma(p, batch)
        worst = max(worst, float(np.max(np.abs(d - lem) / np.maximum(1.0, np.abs(d)))))
    if "csv" in cfg.output.formats:
        path = os.path.join(out_dir, "paths.csv")
        write_path_csv(path, data)
        files.append("paths.csv")
    costs = data["cost_total"]
    return {
        "policy": pol.to_dict(),
        "mc_mean": float(np.mean(costs)),
        "mc_se": float(np.std(costs, ddof=1) / math.sqrt(costs.size)),
        "n_paths": int(costs.size),
        "fill_probability": float(np.mean(data["fill_total"] != 0.0)),
        "max_formula_gap": worst,
    }


def _run_manipulate(cfg: Config) -> dict:
    e, p = cfg.experiment, cfg.model
    rec = construct_manipulation(p, e.T, e.size)
    if rec is None:
        return {"recipe": "none-found"}
    pol = rec.to_policy(p)
    res = mc_expected_cost(p, pol, rec.x0, e.T, e.n_paths, e.seed)
    return {"recipe": rec.to_dict(), **_mc_block(res, rec.predicted_cost, rec.formula),
            "negative_at_3se": res.mean + 3.0 * res.se < 0.0}


def _run_optimize(cfg: Config, out_dir: str, files: list) -> dict:
    e, p = cfg.experiment, cfg.model
    out = optimize_single_update(p, e.x0, e.T, fixed_x_hat=e.fixed_x_hat, n_final=e.n_final)
    pol = out.policy
    results = {
        "cost": out.cost,
        "formula": "single-update-expected-cost",
        "benchmark_pure_exchange": out.benchmark_cost,
        "lower_bound_permanent": 0.5 * p.gamma * e.x0 * e.x0,
        "rho": pol.meta.get("rho"),
        "x_hat": pol.x_hat,
        "terminal": pol.meta.get("terminal"),
        "converged": out.converged,
    }
    if pol.trajectory is not None:
        chk = check_closed_form(p, e.x0, pol.x_hat, pol.rho, e.T, pol.trajectory.terminal)
        results["closed_form_check"] = chk.status
        results["closed_form_max_abs_diff"] = chk.max_abs_diff
        if "csv" in cfg.output.formats:
            pol.trajectory.write_csv(os.path.join(out_dir, "trajectory.csv"))
            files.append("trajectory.csv")
    return results


def run_experiment(cfg: Config, out_dir: str = None) -> Report:
    """Dispatch on the experiment kind and write the report files."""
    out_dir = out_dir or cfg.output.dir
    os.makedirs(out_dir, exist_ok=True)
    files = []
    start = time.perf_counter()
    kind = cfg.experiment.kind
    if kind == "audit":
        results = _run_audit(cfg)
    elif kind == "cost":
        results = _run_cost(cfg)
    elif kind == "simulate":
        results = _run_simulate(cfg, out_dir, files)
    elif kind == "manipulate":
        results = _run_manipulate(cfg)
    else:
        results = _run_optimize(cfg, out_dir, files)
    report = Report(kind, _clean(cfg.echo), _clean(results), cfg.experiment.seed, files=files)
    report.runtime = time.perf_counter() - start
    if "json" in cfg.output.formats:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(report.record(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        files.append("summary.json")
    if "txt" in cfg.output.formats:
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(report.to_text())
        files.append("report.txt")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darkpool-impact",
        description="Dark-pool execution costs, regularity audits and optimal single-update liquidation.",
        epilog=CSV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "audit": "classify the parameter set and search for manipulation recipes",
        "cost": "Monte Carlo expected cost of the configured policy",
        "simulate": "simulate paths of the configured policy and dump per-path costs",
        "manipulate": "construct a manipulation recipe and verify it by Monte Carlo",
        "optimize": "optimal single-update liquidation",
    }
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=helps[kind], epilog=CSV_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--paths", type=int, help="override experiment.n_paths")
        p.add_argument("--out", help="override output.dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, kind_override=args.command)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be >= 0")
            cfg.experiment.seed = args.seed
            cfg.echo["experiment"]["seed"] = args.seed
        if args.paths is not None:
            if args.paths < 2:
                raise ConfigError("--paths", "must be >= 2")
            cfg.experiment.n_paths = args.paths
            cfg.echo["experiment"]["n_paths"] = args.paths
        report = run_experiment(cfg, args.out)
    except (ConfigError, AdmissibilityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, QuadratureError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    sys.stdout.write(report.to_text())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
