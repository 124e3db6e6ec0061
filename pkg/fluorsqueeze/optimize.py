"""Search over the control parameters for the strongest squeezing.

The objective is the lowest value of S_k(mu) (or S_k at a fixed mu); values below
one are squeezed. Unstable regions of control space evaluate to +inf.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.stats import qmc

from .core_types import NumericalError, OptimizationError
from .dynamics import ANGLE_FIELDS, CONTROL_FIELDS, ModelParams, _check_channel, is_stable
from .spectrum import DEFAULT_MU_HALF_WIDTH, DEFAULT_MU_POINTS, refined_minimum, spectrum_value
from .trajectories import resolve_workers

logger = logging.getLogger(__name__)

# --- Configuration ----------------------------------------------------
DEFAULT_STARTS = 16
DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 4000
MAX_GRID_POINTS = 10_000_000
OBJECTIVES = ("min", "at_mu")
ENVIRONMENT_FIELDS = ("k_d", "n_bar")
# ---------------------------------------------------------------------


def default_bounds(name: str, gamma: float = 1.0) -> tuple[float, float]:
    if name in ANGLE_FIELDS:
        return (-math.pi, math.pi)
    return {
        "omega_rabi": (0.0, 4.0 * gamma),
        "delta_omega": (-4.0 * gamma, 4.0 * gamma),
        "c": (0.0, 1.0),
    }[name]


@dataclass(frozen=True)
class ControlSpec:
    free: tuple[str, ...] = ()
    bounds: dict = field(default_factory=dict)
    channel: int = 1
    objective: str = "min"
    mu0: float = 0.0
    mu_half_width: float | None = None
    mu_points: int = DEFAULT_MU_POINTS

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        bounds = {name: tuple(float(b) for b in self.bounds[name]) for name in self.bounds}
        object.__setattr__(self, "bounds", bounds)

    def validate(self) -> "ControlSpec":
        _check_channel(self.channel)
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        unknown = [f for f in self.free if f not in CONTROL_FIELDS]
        if unknown:
            raise ValueError(f"not a control parameter: {', '.join(unknown)}")
        if len(set(self.free)) != len(self.free):
            raise ValueError("free parameters listed twice")
        stray = [f for f in self.bounds if f not in self.free]
        if stray:
            raise ValueError(f"bounds given for fixed parameters: {', '.join(stray)}")
        for name in self.free:
            lo, hi = self.box(name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name}: empty or infinite bounds [{lo}, {hi}]")
            if name in ("omega_rabi", "c") and lo < 0:
                raise ValueError(f"{name}: lower bound must be >= 0, got {lo}")
            if name in ANGLE_FIELDS and hi - lo > 2 * math.pi + 1e-12:
                raise ValueError(f"{name}: bounds wider than one period")
        if self.mu_points < 3:
            raise ValueError(f"mu_points must be >= 3, got {self.mu_points}")
        return self

    def box(self, name: str, gamma: float = 1.0) -> tuple[float, float]:
        return self.bounds.get(name, default_bounds(name, gamma))

    def boxes(self, gamma: float = 1.0) -> np.ndarray:
        return np.array([self.box(n, gamma) for n in self.free], dtype=float).reshape(len(self.free), 2)

    def periodic(self, name: str) -> bool:
        lo, hi = self.box(name)
        return name in ANGLE_FIELDS and hi - lo >= 2 * math.pi - 1e-12

    def project(self, v, gamma: float = 1.0) -> np.ndarray:
        """Wrap periodic angles, reflect everything else into its box."""
        v = np.array(v, dtype=float).reshape(len(self.free))
        for i, name in enumerate(self.free):
            lo, hi = self.box(name, gamma)
            width = hi - lo
            if self.periodic(name):
                v[i] = lo + math.fmod(math.fmod(v[i] - lo, width) + width, width)
            else:
                r = math.fmod(abs(v[i] - lo), 2.0 * width)
                v[i] = lo + (r if r <= width else 2.0 * width - r)
        return v

    def contains(self, v, gamma: float = 1.0, slack: float = 1e-12) -> bool:
        boxes = self.boxes(gamma)
        v = np.asarray(v, dtype=float).reshape(len(self.free))
        return bool(np.all(v >= boxes[:, 0] - slack) and np.all(v <= boxes[:, 1] + slack))

    def apply(self, p: ModelParams, v) -> ModelParams:
        values = np.asarray(v, dtype=float).reshape(len(self.free))
        return p.replace(**{name: float(x) for name, x in zip(self.free, values)})

    def current(self, p: ModelParams) -> np.ndarray:
        return np.array([getattr(p, n) for n in self.free], dtype=float)


@dataclass(frozen=True)
class OptimizeOptions:
    starts: int = DEFAULT_STARTS
    seed: int = 0
    xatol: float = DEFAULT_TOL
    fatol: float = DEFAULT_TOL
    maxiter: int = DEFAULT_MAXITER
    initial_points: tuple = ()
    workers: int | None = None


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    free: tuple[str, ...]
    x: np.ndarray
    value: float
    mu_star: float
    evaluations: int
    converged: bool
    params: ModelParams
    channel: int
    starts: int = 0

    def as_dict(self) -> dict:
        return {
            "channel": self.channel,
            "free": list(self.free),
            "best": {n: float(x) for n, x in zip(self.free, self.x)},
            "objective": self.value,
            "mu_star": self.mu_star,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "starts": self.starts,
            "params": self.params.as_dict(),
        }


# ---------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------


def evaluate(p: ModelParams, spec: ControlSpec, v) -> tuple[float, float]:
    """(objective, mu*) at control vector ``v``; (+inf, nan) where A is not stable."""
    if not spec.contains(v, p.gamma):
        raise ValueError(f"control vector {np.asarray(v).tolist()} outside the bounds of {spec.free}")
    q = spec.apply(p, v)
    if not is_stable(q):
        return math.inf, math.nan
    try:
        if spec.objective == "at_mu":
            return float(spectrum_value(q, spec.channel, spec.mu0)), float(spec.mu0)
        half_width = spec.mu_half_width if spec.mu_half_width is not None else DEFAULT_MU_HALF_WIDTH * q.gamma
        mu, value = refined_minimum(q, spec.channel, half_width, spec.mu_points)
    except NumericalError as exc:
        logger.debug("Objective excluded at %s: %s", np.asarray(v).tolist(), exc)
        return math.inf, math.nan
    return float(value), float(mu)


def objective(p: ModelParams, spec: ControlSpec, v) -> float:
    return evaluate(p, spec, v)[0]


# ---------------------------------------------------------------------
# Multi-start Nelder-Mead
# ---------------------------------------------------------------------


def latin_starts(spec: ControlSpec, n: int, seed: int, gamma: float = 1.0) -> np.ndarray:
    boxes = spec.boxes(gamma)
    sample = qmc.LatinHypercube(d=len(spec.free), seed=seed).random(n)
    return qmc.scale(sample, boxes[:, 0], boxes[:, 1])


def _initial_simplex(x0: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    width = boxes[:, 1] - boxes[:, 0]
    simplex = [x0]
    for i in range(len(x0)):
        vertex = x0.copy()
        step = 0.1 * width[i]
        vertex[i] = x0[i] + step if x0[i] + step <= boxes[i, 1] else x0[i] - step
        simplex.append(vertex)
    return np.array(simplex)


def _run_start(p: ModelParams, spec: ControlSpec, x0: np.ndarray, opts: OptimizeOptions):
    count = 0

    def f(u):
        nonlocal count
        count += 1
        return objective(p, spec, spec.project(u, p.gamma))

    res = minimize(
        f,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": _initial_simplex(x0, spec.boxes(p.gamma)),
            "xatol": opts.xatol,
            "fatol": opts.fatol,
            "maxiter": opts.maxiter,
            "maxfev": 2 * opts.maxiter,
        },
    )
    return spec.project(res.x, p.gamma), float(res.fun), count, bool(res.success)


def optimize(p: ModelParams, spec: ControlSpec, options: OptimizeOptions | None = None) -> OptimizationResult:
    opts = options or OptimizeOptions()
    spec.validate()

    if not spec.free:
        value, mu = evaluate(p, spec, [])
        if not math.isfinite(value):
            raise OptimizationError("the fixed parameter point is unstable")
        return OptimizationResult((), np.zeros(0), value, mu, 1, True, p, spec.channel, 0)

    starts = [spec.project(x, p.gamma) for x in opts.initial_points]
    if opts.starts > 0:
        starts.extend(latin_starts(spec, opts.starts, opts.seed, p.gamma))
    if not starts:
        raise ValueError("no starting points")

    workers = min(resolve_workers(opts.workers), len(starts))
    logger.info("Optimising %s on channel %d from %d starts ...", ",".join(spec.free), spec.channel, len(starts))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(lambda x0: _run_start(p, spec, x0, opts), starts))

    finite = [r for r in runs if math.isfinite(r[1])]
    if not finite:
        raise OptimizationError(f"all {len(runs)} starts landed in the unstable region")
    failed = sum(not r[3] for r in finite)
    if failed:
        logger.warning("%d of %d starts did not converge", failed, len(runs))

    best = min(finite, key=lambda r: (r[1], tuple(r[0])))
    value, mu = evaluate(p, spec, best[0])
    result = OptimizationResult(
        free=spec.free,
        x=best[0],
        value=value,
        mu_star=mu,
        evaluations=sum(r[2] for r in runs) + 1,
        converged=best[3],
        params=spec.apply(p, best[0]),
        channel=spec.channel,
        starts=len(starts),
    )
    logger.info("Best objective %.10g at %s", value, dict(zip(spec.free, best[0].round(6).tolist())))
    return result


# ---------------------------------------------------------------------
# Grid scan and sweeps
# ---------------------------------------------------------------------


def grid_axes(spec: ControlSpec, resolution, gamma: float = 1.0) -> list[np.ndarray]:
    n = len(spec.free)
    res = [int(resolution)] * n if np.ndim(resolution) == 0 else [int(r) for r in resolution]
    if len(res) != n:
        raise ValueError(f"need {n} resolutions, got {len(res)}")
    if any(r < 1 for r in res):
        raise ValueError("resolution must be >= 1 per axis")
    total = math.prod(res)
    if total > MAX_GRID_POINTS:
        raise ValueError(f"grid of {total} points exceeds {MAX_GRID_POINTS}")
    return [np.linspace(*spec.box(name, gamma), r) for name, r in zip(spec.free, res)]


def grid_scan(p: ModelParams, spec: ControlSpec, resolution, workers: int | None = None) -> pd.DataFrame:
    """Objective on the full tensor grid, first free parameter varying slowest."""
    spec.validate()
    axes = grid_axes(spec, resolution, p.gamma)
    points = [np.array(v, dtype=float) for v in itertools.product(*axes)]
    logger.info("Scanning %d grid points ...", len(points))
    with ThreadPoolExecutor(max_workers=resolve_workers(workers)) as pool:
        results = list(pool.map(lambda v: evaluate(p, spec, v), points))
    df = pd.DataFrame(np.array(points).reshape(len(points), len(spec.free)), columns=list(spec.free))
    df["objective"] = [r[0] for r in results]
    df["mu_star"] = [r[1] for r in results]
    return df


def grid_minimum(df: pd.DataFrame) -> pd.Series:
    return df.loc[df["objective"].idxmin()]


def sweep_detection_fractions(
    p: ModelParams,
    spec: ControlSpec,
    a2sq_values,
    side_total: float = 0.9,
    options: OptimizeOptions | None = None,
) -> pd.DataFrame:
    """Best objective for each split of a fixed side fraction between the two detectors."""
    if not 0.0 < side_total <= 1.0:
        raise ValueError(f"side_total must lie in (0, 1], got {side_total}")
    rows = []
    for a2sq in a2sq_values:
        a1sq = side_total - a2sq
        if a1sq <= 0 or a2sq < 0:
            raise ValueError(f"|alpha_2|^2 = {a2sq} leaves no light for the feedback channel")
        q = p.replace(a0sq=1.0 - side_total, a1sq=a1sq, a2sq=a2sq)
        res = optimize(q, spec, options)
        rows.append({"a1sq": a1sq, "a2sq": a2sq, "objective": res.value, "mu_star": res.mu_star, **res.as_dict()["best"]})
    return pd.DataFrame(rows)


def sensitivity_scan(
    p: ModelParams,
    spec: ControlSpec,
    field_name: str,
    values,
    reoptimize: OptimizeOptions | None = None,
) -> pd.DataFrame:
    """Objective as dephasing or thermal noise is switched on.

    Controls stay at their values in ``p`` unless ``reoptimize`` is given.
    """
    if field_name not in ENVIRONMENT_FIELDS:
        raise ValueError(f"sensitivity field must be one of {ENVIRONMENT_FIELDS}, got {field_name!r}")
    spec.validate()
    rows = []
    for value in values:
        q = p.replace(**{field_name: float(value)})
        if reoptimize is not None:
            res = optimize(q, spec, reoptimize)
            obj, mu = res.value, res.mu_star
        else:
            obj, mu = evaluate(q, spec, spec.current(q))
        rows.append({field_name: float(value), "objective": obj, "mu_star": mu})
    return pd.DataFrame(rows)
