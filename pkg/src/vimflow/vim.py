"""Variational iteration engine.

The correction for every unknown block is

    next = current + omega * integral_{lower bound}^{x_l} residual(current) dx_l

along one spatial direction ``x_l``, with unit Lagrange multipliers.  All
residuals are evaluated at the current iterate (Jacobi style).  After each
correction the Dirichlet/initial data and the pressure gauge are re-imposed.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import GridError, GridMismatch, InsufficientData, NonFinite
from .grid import Axis, VectorField, norm, prefix_integral, vector_norm
from .systems import (
    NEUMANN_MODES,
    FlowState,
    Forcing,
    ProblemSpec,
    apply_dirichlet,
    flow_system,
    forcing_fields,
    impose_pressure_neumann,
    pressure_neumann,
    project_pressure_gauge,
)

PRESSURE_BCS = ("none", "neumann")


# --- multipliers ---------------------------------------------------------------


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    expression: str
    max_deviation: float
    passed: bool


@dataclass(frozen=True)
class StationaryWitness:
    """Outcome of checking one multiplier candidate against the stationary conditions."""

    candidate: str
    checks: tuple[ConditionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


@dataclass(frozen=True)
class MultiplierIdentification:
    lam: float
    mu: float
    lambda_witness: StationaryWitness
    mu_witness: StationaryWitness


# Sample evaluation points x1 for the conditions at X1 = x1.
_SAMPLE_POINTS = tuple(np.linspace(-3.0, 3.0, 13))


def check_stationary(candidate, variable: str = "x1", atol: float = 1e-12) -> StationaryWitness:
    """Check ``d2 m/dX^2 = 0``, ``m(x) = 1`` and ``dm/dX(x) = 0`` for a candidate multiplier.

    ``candidate`` is an expression (or text) in ``variable``, which plays the
    role of the integration variable X1.  The two point conditions hold at
    the upper integration limit, which ranges over the domain, so all three
    are checked symbolically and then evaluated at a set of sample points.
    """
    m = ex.as_expr(candidate)
    dm = ex.differentiate(m, variable)
    d2m = ex.differentiate(dm, variable)
    conditions = (
        ("d2/dX1^2 = 0", d2m, 0.0),
        ("value at X1 = x1 is 1", m, 1.0),
        ("d/dX1 at X1 = x1 is 0", dm, 0.0),
    )
    checks = []
    for name, e, target in conditions:
        dev = 0.0
        for x in _SAMPLE_POINTS:
            try:
                value = ex.eval_point(e, **{variable: float(x)})
            except NonFinite:
                dev = math.inf
                break
            dev = max(dev, abs(value - target))
        checks.append(ConditionCheck(name, ex.to_string(e), dev, dev <= atol))
    return StationaryWitness(ex.to_string(m), tuple(checks))


def identify_multipliers() -> MultiplierIdentification:
    """The constant multipliers lambda = mu = 1 and their stationarity witnesses."""
    lam = check_stationary(ex.ONE)
    mu = check_stationary(ex.ONE)
    if not (lam.passed and mu.passed):  # pragma: no cover - guards the derivation itself
        raise AssertionError("unit multipliers failed the stationary conditions")
    return MultiplierIdentification(1.0, 1.0, lam, mu)


# --- configuration and report --------------------------------------------------


@dataclass(frozen=True)
class IterationConfig:
    direction: Axis = Axis.X1
    max_iters: int = 100
    tol: float = 1e-10
    norm_kind: str = "l2"
    relaxation: float = 1.0
    divergence_window: int = 5
    pressure_bc: str = "none"
    neumann: str = "paper"
    threads: int = 1

    def __post_init__(self):
        direction = Axis.parse(self.direction)
        if direction == Axis.T:
            raise ValueError("iteration direction must be a spatial axis (x1, x2 or x3)")
        object.__setattr__(self, "direction", direction)
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters!r}")
        if not (math.isfinite(self.tol) and self.tol > 0):
            raise ValueError(f"tol must be a positive number, got {self.tol!r}")
        if self.norm_kind not in ("l2", "linf"):
            raise ValueError(f"norm_kind must be 'l2' or 'linf', got {self.norm_kind!r}")
        if not (0.0 < self.relaxation <= 1.0):
            raise ValueError(f"relaxation must lie in (0, 1], got {self.relaxation!r}")
        if int(self.divergence_window) != self.divergence_window or self.divergence_window < 2:
            raise ValueError(f"divergence_window must be an integer >= 2, got {self.divergence_window!r}")
        if self.pressure_bc not in PRESSURE_BCS:
            raise ValueError(f"pressure_bc must be one of {PRESSURE_BCS}, got {self.pressure_bc!r}")
        if self.neumann not in NEUMANN_MODES:
            raise ValueError(f"neumann must be one of {NEUMANN_MODES}, got {self.neumann!r}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ValueError(f"threads must be an integer >= 1, got {self.threads!r}")


class Status(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    DIVERGED = "Diverged"
    NON_FINITE = "NonFinite"


@dataclass(frozen=True)
class IterationRecord:
    n: int
    d_u: float
    d_w: Optional[float]
    d_p: float
    d: float
    gamma: Optional[float]
    wall_time: float = 0.0


@dataclass
class ConvergenceReport:
    records: list[IterationRecord] = field(default_factory=list)
    status: Optional[Status] = None
    norm_kind: str = "l2"
    divergence_window: int = 5
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def d(self) -> list[float]:
        return [r.d for r in self.records]

    @property
    def gammas(self) -> list[float]:
        return [r.gamma for r in self.records if r.gamma is not None]


def combine_norms(parts: Sequence[float], kind: str) -> float:
    if kind == "linf":
        return max(parts)
    return math.hypot(*parts)


def estimate_contraction(rep: ConvergenceReport, window: Optional[int] = None) -> float:
    """Geometric mean of the last ``window`` defined contraction ratios."""
    if rep.iterations < 2:
        raise InsufficientData(f"need at least 2 iterations to estimate contraction, have {rep.iterations}")
    gammas = rep.gammas
    if not gammas:
        raise InsufficientData("no defined contraction ratios (successive differences vanished)")
    w = rep.divergence_window if window is None else window
    tail = gammas[-w:]
    if any(g == 0.0 for g in tail):
        return 0.0
    return float(math.exp(sum(math.log(g) for g in tail) / len(tail)))


# --- iteration -----------------------------------------------------------------


def _block_residuals(system, blocks, threads: int) -> dict:
    names = list(blocks)
    if threads > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(names))) as pool:
            futures = {name: pool.submit(system.evaluate, blocks, name) for name in names}
            return {name: futures[name].result() for name in names}
    return {name: system.evaluate(blocks, name) for name in names}


def correct(block, residual, direction: Axis, omega: float):
    """``block + omega * prefix_integral(residual, direction)`` for scalar or vector blocks."""
    if isinstance(block, VectorField):
        return VectorField(*(correct(b, r, direction, omega) for b, r in zip(block, residual)))
    return block + omega * prefix_integral(residual, direction)


def _check_direction(prob: ProblemSpec, cfg: IterationConfig) -> None:
    if prob.grid.is_degenerate(cfg.direction):
        raise GridError(f"iteration direction {cfg.direction.label} is a degenerate axis of the grid")


def vim_step(
    s: FlowState, prob: ProblemSpec, cfg: IterationConfig, forcing: Optional[Forcing] = None
) -> FlowState:
    """One correction of every block from iterate ``s``."""
    if s.grid != prob.grid:
        raise GridMismatch("state and problem live on different grids")
    _check_direction(prob, cfg)
    forcing = forcing_fields(prob) if forcing is None else forcing
    system = flow_system(prob, forcing)
    blocks = s.blocks()
    residuals = _block_residuals(system, blocks, cfg.threads)
    new = {}
    for name, block in blocks.items():
        try:
            new[name] = correct(block, residuals[name], cfg.direction, cfg.relaxation)
        except NonFinite as err:
            raise NonFinite(f"block {name}: {err}", index=err.index, block=name) from None
    out = apply_dirichlet(FlowState(new["u"], new["p"], new.get("w")), prob)
    p = out.p
    if cfg.pressure_bc == "neumann":
        p = impose_pressure_neumann(p, pressure_neumann(s, prob, forcing, cfg.neumann))
    return out.replace(p=project_pressure_gauge(p))


def _diffs(a: FlowState, b: FlowState, kind: str) -> tuple[float, Optional[float], float]:
    d_u = vector_norm(a.u - b.u, kind)
    d_w = vector_norm(a.w - b.w, kind) if a.w is not None else None
    d_p = norm(a.p - b.p, kind)
    return d_u, d_w, d_p


def iterate(
    s0: FlowState, prob: ProblemSpec, cfg: IterationConfig, forcing: Optional[Forcing] = None
) -> tuple[FlowState, ConvergenceReport]:
    """Repeat :func:`vim_step` until converged, diverged, non-finite or out of iterations.

    ``d_n`` is the norm of the change made by step ``n`` (0-based) and
    ``gamma_n = d_n / d_{n-1}``.  Divergence means ``gamma_n >= 1`` for
    ``divergence_window`` consecutive steps.
    """
    _check_direction(prob, cfg)
    forcing = forcing_fields(prob) if forcing is None else forcing
    rep = ConvergenceReport(norm_kind=cfg.norm_kind, divergence_window=cfg.divergence_window)
    s = s0
    streak = 0
    prev: Optional[float] = None
    for n in range(cfg.max_iters):
        start = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                nxt = vim_step(s, prob, cfg, forcing)
                d_u, d_w, d_p = _diffs(nxt, s, cfg.norm_kind)
        except NonFinite as err:
            rep.status = Status.NON_FINITE
            rep.message = str(err)
            break
        parts = [d_u, d_p] if d_w is None else [d_u, d_w, d_p]
        d = combine_norms(parts, cfg.norm_kind)
        if not math.isfinite(d):
            rep.status = Status.NON_FINITE
            rep.message = f"step {n}: difference norm overflowed"
            break
        gamma = d / prev if prev is not None and prev > 0.0 else None
        rep.records.append(IterationRecord(n, d_u, d_w, d_p, d, gamma, time.perf_counter() - start))
        s = nxt
        prev = d
        if d <= cfg.tol:
            rep.status = Status.CONVERGED
            break
        streak = streak + 1 if gamma is not None and gamma >= 1.0 else 0
        if streak >= cfg.divergence_window:
            rep.status = Status.DIVERGED
            rep.message = f"contraction ratio >= 1 for {streak} consecutive iterations"
            break
    else:
        rep.status = Status.MAX_ITERS
    return s, rep
