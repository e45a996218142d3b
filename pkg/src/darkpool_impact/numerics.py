"""Shared numeric kernels: exponential integral, adaptive quadrature, Nelder-Mead."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

EULER_GAMMA = 0.57721566490153286060651209008240243104215933593992

# positive arguments: power series below this, asymptotic expansion above
_EI_SERIES_LIMIT = 40.0


class QuadratureError(RuntimeError):
    pass


def _ei_series(x: float) -> float:
    total = 0.0
    term = 1.0
    n = 0
    while True:
        n += 1
        term *= x / n
        contrib = term / n
        total += contrib
        if abs(contrib) <= 1e-17 * abs(total) and n > 2:
            break
        if n > 500:
            break
    return EULER_GAMMA + math.log(abs(x)) + total


def _ei_asymptotic(x: float) -> float:
    # e^x/x * sum k!/x^k, truncated at the smallest term
    total = 1.0
    term = 1.0
    k = 0
    while True:
        k += 1
        nxt = term * k / x
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-18:
            if abs(nxt) < abs(term):
                total += nxt
            break
        term = nxt
        total += term
    return math.exp(x) / x * total


def _e1_continued_fraction(x: float) -> float:
    """E1(x) for x > 1 by modified Lentz evaluation of the continued fraction."""
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x)


def expint_ei(x: float) -> float:
    """Exponential integral Ei(x) = PV int_{-inf}^x e^s/s ds for real x != 0."""
    x = float(x)
    if x == 0.0:
        raise ValueError("Ei is singular at x = 0")
    if math.isnan(x):
        return math.nan
    if x > 709.0:
        return math.inf  # e^x overflows a double
    if x == -math.inf:
        return 0.0
    if x > 0:
        if x <= _EI_SERIES_LIMIT:
            return _ei_series(x)
        return _ei_asymptotic(x)
    if x >= -1.0:
        return _ei_series(x)
    return -_e1_continued_fraction(-x)


def expint_ei_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    flat_in = arr.ravel()
    flat_out = out.ravel()
    for i, v in enumerate(flat_in):
        flat_out[i] = expint_ei(v)
    return out


# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_GK_NODES = np.array([
    -0.991455371120812639206854697526329,
    -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926,
    -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013,
    -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245,
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144845693013,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_K15_WEIGHTS = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
_G7_WEIGHTS = np.array([
    0.0, 0.129484966168869693270611432679082,
    0.0, 0.279705391489276667901467771423780,
    0.0, 0.381830050505118944950369775488975,
    0.0, 0.417959183673469387755102040816327,
    0.0, 0.381830050505118944950369775488975,
    0.0, 0.279705391489276667901467771423780,
    0.0, 0.129484966168869693270611432679082,
    0.0,
])


def _gk15(f, a: float, b: float) -> tuple[float, float]:
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    vals = np.asarray(f(mid + half * _GK_NODES), dtype=float)
    k = half * float(np.dot(_K15_WEIGHTS, vals))
    g = half * float(np.dot(_G7_WEIGHTS, vals))
    return k, abs(k - g)


def integrate_adaptive(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_depth: int = 50,
) -> float:
    """Adaptive Gauss-Kronrod (G7/K15) quadrature of a vectorized integrand.

    Intervals are bisected until the local Kronrod-Gauss difference is below
    the share of ``tol`` proportional to the interval width. Raises
    ``QuadratureError`` when an interval would need more than ``max_depth``
    bisections.
    """
    if a == b:
        return 0.0
    if b < a:
        return -integrate_adaptive(f, b, a, tol, max_depth)
    if not (tol > 0):
        raise ValueError("tol must be positive")
    width = b - a
    total = 0.0
    stack = [(a, b, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        value, err = _gk15(f, lo, hi)
        if not math.isfinite(value):
            raise QuadratureError(f"non-finite integrand on [{lo}, {hi}]")
        allowed = tol * (hi - lo) / width
        if err <= allowed or err <= 1e-15 * abs(value):
            total += value
            continue
        if depth >= max_depth:
            raise QuadratureError(
                f"no convergence on [{lo}, {hi}] after {max_depth} bisections (err={err:.3e})"
            )
        m = 0.5 * (lo + hi)
        stack.append((m, hi, depth + 1))
        stack.append((lo, m, depth + 1))
    return total


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 2000
    xtol: float = 1e-9
    ftol: float = 1e-13
    n_starts: int = 8
    initial_step: float = 0.1  # fraction of the box width (or absolute if unbounded)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("xtol", "ftol", "initial_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")


@dataclass(frozen=True)
class OptResult:
    arg: np.ndarray
    value: float
    converged: bool
    iterations: int


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    start: Sequence[float],
    box: Optional[Sequence[tuple[float, float]]] = None,
    opts: OptimizerOptions = OptimizerOptions(),
) -> OptResult:
    """Minimize ``objective`` with the Nelder-Mead simplex method.

    Trial points are projected onto ``box`` (a sequence of ``(lo, hi)`` pairs)
    when one is given. The result is deterministic for a given start.
    """
    x0 = np.asarray(start, dtype=float).copy()
    n = x0.size
    if box is not None:
        lo = np.array([b[0] for b in box], dtype=float)
        hi = np.array([b[1] for b in box], dtype=float)
        if lo.shape != x0.shape or np.any(lo > hi):
            raise ValueError("box must give one (lo, hi) pair per coordinate with lo <= hi")
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError("start lies outside the box")
    else:
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)

    def project(p):
        return np.clip(p, lo, hi)

    def fval(p):
        v = float(objective(p))
        return v if math.isfinite(v) else math.inf

    simplex = [x0]
    for i in range(n):
        width = hi[i] - lo[i]
        step = opts.initial_step * width if math.isfinite(width) else opts.initial_step * max(1.0, abs(x0[i]))
        if step == 0.0:
            step = 1e-8
        p = x0.copy()
        p[i] += step
        if p[i] > hi[i]:
            p[i] = x0[i] - step
        simplex.append(project(p))
    simplex = np.array(simplex)
    values = np.array([fval(p) for p in simplex])
    start_value = values[0]

    converged = False
    it = 0
    while it < opts.max_iters:
        it += 1
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        spread = np.max(np.abs(simplex[1:] - simplex[0]))
        if spread <= opts.xtol and abs(values[-1] - values[0]) <= opts.ftol * (1.0 + abs(values[0])):
            converged = True
            break
        if np.all(values == values[0]) and spread <= opts.xtol * 1e3:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = project(centroid + (centroid - worst))
        fr = fval(xr)
        if fr < values[0]:
            xe = project(centroid + 2.0 * (centroid - worst))
            fe = fval(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = project(centroid + 0.5 * (xr - centroid))
            fc = fval(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = project(centroid + 0.5 * (worst - centroid))
            fc = fval(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        # shrink toward the best vertex
        best = simplex[0]
        for j in range(1, n + 1):
            simplex[j] = project(best + 0.5 * (simplex[j] - best))
            values[j] = fval(simplex[j])

    i_best = int(np.argmin(values))
    if values[i_best] > start_value:
        return OptResult(arg=x0, value=float(start_value), converged=converged, iterations=it)
    return OptResult(arg=simplex[i_best].copy(), value=float(values[i_best]), converged=converged, iterations=it)


def golden_section(
    objective: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, max_iters: int = 200
) -> tuple[float, float]:
    """Minimize a unimodal scalar function on [lo, hi]; returns (arg, value)."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(max_iters):
        if abs(b - a) <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = objective(d)
    if fc < fd:
        return c, fc
    return d, fd
