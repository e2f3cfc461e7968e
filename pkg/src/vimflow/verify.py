"""Manufactured-solution verification.

A :class:`ManufacturedCase` prescribes exact ``u`` (``w``) and ``p`` as
expressions.  Two forcing modes exist:

* discrete: forcing built from the grid operators so every discrete residual
  vanishes at the exact nodal fields (up to round-off).  The exact fields are
  then a fixed point of the iteration, which tests the engine.
* symbolic: forcing built by symbolic differentiation, i.e. the continuous
  PDE is satisfied.  Residuals then measure truncation error only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import LadderTooShort
from .grid import (
    SPATIAL_AXES,
    Axis,
    GridSpec,
    ScalarField,
    VectorField,
    advect,
    convection,
    curl,
    ddt,
    ddx,
    grad_div,
    laplacian,
    norm,
    norm_l2,
    norm_linf,
    vector_norm,
)
from .systems import (
    FlowState,
    FluidParams,
    Forcing,
    ProblemKind,
    ProblemSpec,
    apply_dirichlet,
    boundary_mask,
    expr_triple,
    forcing_fields,
    mp_microrotation_residual,
    mp_momentum_residual,
    mp_pressure_residual,
    ns_momentum_residual,
    ns_pressure_residual,
    project_pressure_gauge,
)
from .vim import ConvergenceReport, IterationConfig, Status, iterate

_SPACE = ("x1", "x2", "x3")


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    kind: ProblemKind
    u: tuple[ex.Expr, ex.Expr, ex.Expr]
    p: ex.Expr
    params: FluidParams
    grid: GridSpec
    w: Optional[tuple[ex.Expr, ex.Expr, ex.Expr]] = None
    levels: int = 1
    refine: tuple[Axis, ...] = (Axis.X1, Axis.X2, Axis.X3, Axis.T)

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind.parse(self.kind))
        object.__setattr__(self, "u", expr_triple(self.u))
        object.__setattr__(self, "p", ex.as_expr(self.p))
        if self.kind is ProblemKind.MICROPOLAR:
            object.__setattr__(self, "w", expr_triple(self.w if self.w is not None else (0, 0, 0)))
            self.params.check_micropolar()
        elif self.w is not None:
            raise ValueError("exact w given for a Navier-Stokes case")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        object.__setattr__(self, "refine", tuple(Axis.parse(a) for a in self.refine))

    @property
    def micropolar(self) -> bool:
        return self.kind is ProblemKind.MICROPOLAR

    def ladder(self) -> list[GridSpec]:
        """Grids from coarse to fine, each halving the spacing of the refined axes."""
        grids = [self.grid]
        for _ in range(self.levels - 1):
            grids.append(grids[-1].refine(self.refine))
        return grids


# --- symbolic vector calculus --------------------------------------------------


def _d(e: ex.Expr, v: str) -> ex.Expr:
    return ex.differentiate(e, v)


def sym_laplacian(e: ex.Expr) -> ex.Expr:
    out = ex.ZERO
    for v in _SPACE:
        out = ex.add(out, _d(_d(e, v), v))
    return out


def sym_advect(u, e: ex.Expr) -> ex.Expr:
    out = ex.ZERO
    for ui, v in zip(u, _SPACE):
        out = ex.add(out, ex.mul(ui, _d(e, v)))
    return out


def sym_divergence(u) -> ex.Expr:
    out = ex.ZERO
    for ui, v in zip(u, _SPACE):
        out = ex.add(out, _d(ui, v))
    return out


def sym_curl(u):
    x1, x2, x3 = _SPACE
    return (
        ex.sub(_d(u[2], x2), _d(u[1], x3)),
        ex.sub(_d(u[0], x3), _d(u[2], x1)),
        ex.sub(_d(u[1], x1), _d(u[0], x2)),
    )


@dataclass(frozen=True)
class SymbolicForcing:
    f1: tuple[ex.Expr, ex.Expr, ex.Expr]
    f2: Optional[tuple[ex.Expr, ex.Expr, ex.Expr]]
    pressure_source: ex.Expr


def manufacture_symbolic(case: ManufacturedCase) -> SymbolicForcing:
    """Continuous forcing that makes the exact expressions solve the PDE system.

    Navier-Stokes: ``f = du/dt + (u.grad)u + grad p - nu lap u``.  Micropolar
    adds the curl couplings, ``grad div w`` and the ``4 nu_r w`` relaxation.
    The pressure source is the pressure-equation residual at the exact
    solution; it vanishes when ``div u = 0``.
    """
    prm = case.params
    u, p = case.u, case.p
    conv = tuple(sym_advect(u, ui) for ui in u)
    grad_p = tuple(_d(p, v) for v in _SPACE)
    if case.micropolar:
        w = case.w
        visc = prm.nu + prm.nu_r
        curl_w = sym_curl(w)
        f1 = tuple(
            ex.sub(
                ex.add(ex.add(_d(ui, "t"), ci), gi),
                ex.add(ex.mul(ex.Num(visc), sym_laplacian(ui)), ex.mul(ex.Num(2.0 * prm.nu_r), cwi)),
            )
            for ui, ci, gi, cwi in zip(u, conv, grad_p, curl_w)
        )
        div_w = sym_divergence(w)
        curl_u = sym_curl(u)
        k = prm.c0 + prm.cd - prm.ca
        f2 = []
        for wi, v, cui in zip(w, _SPACE, curl_u):
            lhs = ex.add(
                ex.add(
                    ex.sub(
                        ex.sub(_d(wi, "t"), ex.mul(ex.Num(prm.ca + prm.cd), sym_laplacian(wi))),
                        ex.mul(ex.Num(k), _d(div_w, v)),
                    ),
                    sym_advect(u, wi),
                ),
                ex.mul(ex.Num(4.0 * prm.nu_r), wi),
            )
            f2.append(ex.sub(lhs, ex.mul(ex.Num(2.0 * prm.nu_r), cui)))
        inner = tuple(ex.sub(ex.sub(ci, ex.mul(ex.Num(2.0 * prm.nu_r), cwi)), fi) for ci, cwi, fi in zip(conv, curl_w, f1))
        source = ex.add(sym_laplacian(p), sym_divergence(inner))
        return SymbolicForcing(f1, tuple(f2), source)
    f1 = tuple(
        ex.sub(ex.add(ex.add(_d(ui, "t"), ci), gi), ex.mul(ex.Num(prm.nu), sym_laplacian(ui)))
        for ui, ci, gi in zip(u, conv, grad_p)
    )
    inner = tuple(ex.sub(ci, fi) for ci, fi in zip(conv, f1))
    source = ex.add(sym_laplacian(p), sym_divergence(inner))
    return SymbolicForcing(f1, None, source)


# --- discrete manufacturing ----------------------------------------------------


def exact_state(case: ManufacturedCase, grid: Optional[GridSpec] = None) -> FlowState:
    """Exact nodal fields; the pressure is shifted to zero mean per time slice."""
    grid = case.grid if grid is None else grid
    u = VectorField(*(ex.eval_cached(e, grid) for e in case.u))
    p = project_pressure_gauge(ex.eval_cached(case.p, grid))
    w = VectorField(*(ex.eval_cached(e, grid) for e in case.w)) if case.micropolar else None
    return FlowState(u, p, w)


def manufacture_discrete(case: ManufacturedCase, grid: Optional[GridSpec] = None) -> Forcing:
    """Forcing fields for which every discrete residual vanishes at :func:`exact_state`."""
    s = exact_state(case, grid)
    prm = case.params
    u = s.u
    transport = VectorField(*(ddt(u[i]) + advect(u, u[i]) + ddx(s.p, a) for i, a in enumerate(SPATIAL_AXES)))
    lap_u = u.map(laplacian)
    if case.micropolar:
        w = s.w
        f1 = transport - lap_u * (prm.nu + prm.nu_r) - curl(w) * (2.0 * prm.nu_r)
        gdw = grad_div(w)
        k = prm.c0 + prm.cd - prm.ca
        curl_u = curl(u)
        f2 = VectorField(
            *(
                ddt(w[i]) - (prm.ca + prm.cd) * laplacian(w[i]) - k * gdw[i] + advect(u, w[i])
                + 4.0 * prm.nu_r * w[i] - 2.0 * prm.nu_r * curl_u[i]
                for i in range(3)
            )
        )
        source = mp_pressure_residual(s, f1, prm)
        return Forcing(f1, f2, source)
    f = transport - lap_u * prm.nu
    return Forcing(f, None, ns_pressure_residual(s, f))


def symbolic_forcing_fields(case: ManufacturedCase, grid: Optional[GridSpec] = None) -> Forcing:
    grid = case.grid if grid is None else grid
    return forcing_fields(problem_for(case, grid, manufacture_symbolic(case)))


def problem_for(case: ManufacturedCase, grid: Optional[GridSpec] = None, forcing: Optional[SymbolicForcing] = None) -> ProblemSpec:
    """Problem whose boundary and initial data are the exact solution's traces."""
    grid = case.grid if grid is None else grid
    forcing = manufacture_symbolic(case) if forcing is None else forcing
    kw = {}
    if case.micropolar:
        kw = dict(moment=forcing.f2, boundary_w=case.w, initial_w=case.w)
    return ProblemSpec(
        kind=case.kind,
        params=case.params,
        grid=grid,
        forcing=forcing.f1,
        boundary_u=case.u,
        initial_u=case.u,
        pressure_source=forcing.pressure_source,
        **kw,
    )


def residual_norms(s: FlowState, forcing: Forcing, case: ManufacturedCase, kind: str = "linf") -> dict[str, float]:
    """Norms of every residual block at state ``s``."""
    prm = case.params
    if case.micropolar:
        out = {
            "momentum": vector_norm(mp_momentum_residual(s, forcing.f1, prm), kind),
            "microrotation": vector_norm(mp_microrotation_residual(s, forcing.f2, prm), kind),
            "pressure": norm(mp_pressure_residual(s, forcing.f1, prm, forcing.pressure_source), kind),
        }
    else:
        out = {
            "momentum": vector_norm(ns_momentum_residual(s, forcing.f1, prm), kind),
            "pressure": norm(ns_pressure_residual(s, forcing.f1, forcing.pressure_source), kind),
        }
    return out


# --- errors and orders -----------------------------------------------------------


def error_report(state: FlowState, case: ManufacturedCase) -> dict[str, dict[str, float]]:
    """l2 and linf errors of each unknown block against the exact fields."""
    exact = exact_state(case, state.grid)
    out = {}
    for name, block in state.blocks().items():
        ref = exact.blocks()[name]
        diff = block - ref
        if isinstance(diff, ScalarField):
            out[name] = {"l2": norm_l2(diff), "linf": norm_linf(diff)}
        else:
            out[name] = {"l2": vector_norm(diff, "l2"), "linf": vector_norm(diff, "linf")}
    return out


def observed_order(errors: Sequence[float], ratio: float = 2.0) -> list[float]:
    """``log(e_coarse / e_fine) / log(ratio)`` for each pair of consecutive rungs."""
    if len(errors) < 2:
        raise LadderTooShort(f"observed order needs at least 2 rungs, got {len(errors)}")
    out = []
    for coarse, fine in zip(errors[:-1], errors[1:]):
        if coarse <= 0.0 or fine <= 0.0:
            out.append(math.nan)
        else:
            out.append(math.log(coarse / fine) / math.log(ratio))
    return out


def ladder_orders(reports: Sequence[Mapping[str, Mapping[str, float]]], kind: str = "l2") -> dict[str, list[float]]:
    """Per-unknown observed orders from a list of :func:`error_report` results."""
    if len(reports) < 2:
        raise LadderTooShort(f"observed order needs at least 2 rungs, got {len(reports)}")
    return {name: observed_order([r[name][kind] for r in reports]) for name in reports[0]}


@dataclass
class TruncationStudy:
    grids: list[GridSpec]
    norms: list[dict[str, float]]
    orders: dict[str, list[float]] = field(default_factory=dict)


def truncation_study(case: ManufacturedCase, kind: str = "linf") -> TruncationStudy:
    """Residual norms of the exact fields under symbolic forcing over the case ladder."""
    sym = manufacture_symbolic(case)
    grids = case.ladder()
    norms = []
    for g in grids:
        forcing = forcing_fields(problem_for(case, g, sym))
        norms.append(residual_norms(exact_state(case, g), forcing, case, kind))
    orders = {}
    if len(grids) >= 2:
        orders = {name: observed_order([n[name] for n in norms]) for name in norms[0]}
    return TruncationStudy(grids, norms, orders)


def perturbed_state(case: ManufacturedCase, grid: Optional[GridSpec] = None, fraction: float = 0.1) -> FlowState:
    """Exact fields plus a smooth bump of relative size ``fraction``.

    The bump vanishes on the spatial boundary and at the initial slice, so
    the perturbed state still satisfies the Dirichlet and initial data.
    """
    grid = case.grid if grid is None else grid
    exact = exact_state(case, grid)
    bump = np.ones(grid.shape)
    mesh = grid.mesh()
    for axis in SPATIAL_AXES:
        if grid.is_degenerate(axis):
            continue
        lo, hi = grid.bounds(axis)
        bump = bump * np.sin(math.pi * (mesh[axis] - lo) / (hi - lo))
    if grid.nt > 1:
        lo, hi = grid.bounds(Axis.T)
        bump = bump * (mesh[Axis.T] - lo) / (hi - lo)
    bump = np.array(np.broadcast_to(bump, grid.shape))
    # sin(pi) is not exactly zero in floating point
    bump[boundary_mask(grid)] = 0.0
    bump_field = ScalarField(grid, bump)

    def perturb(f: ScalarField) -> ScalarField:
        scale = norm_linf(f) or 1.0
        return f + fraction * scale * bump_field

    u = exact.u.map(perturb)
    w = exact.w.map(perturb) if exact.w is not None else None
    p = project_pressure_gauge(perturb(exact.p))
    return FlowState(u, p, w)


@dataclass
class MMSResult:
    mode: str
    grids: list[GridSpec]
    reports: list[ConvergenceReport]
    errors: list[dict[str, dict[str, float]]]
    orders: dict[str, list[float]] = field(default_factory=dict)

    @property
    def status(self) -> Status:
        """Worst status over the ladder."""
        rank = [Status.CONVERGED, Status.MAX_ITERS, Status.DIVERGED, Status.NON_FINITE]
        return max((r.status for r in self.reports), key=rank.index)


def mms_study(
    case: ManufacturedCase,
    cfg: IterationConfig,
    mode: str = "symbolic",
    start: str = "exact",
    grids: Optional[Sequence[GridSpec]] = None,
) -> MMSResult:
    """Iterate the manufactured problem on every rung and measure errors.

    ``start`` is ``exact`` (begin at the exact nodal fields) or ``zero``
    (zero fields with boundary and initial data imposed).
    """
    if mode not in ("discrete", "symbolic"):
        raise ValueError(f"mode must be 'discrete' or 'symbolic', got {mode!r}")
    if start not in ("exact", "zero"):
        raise ValueError(f"start must be 'exact' or 'zero', got {start!r}")
    grids = list(case.ladder() if grids is None else grids)
    sym = manufacture_symbolic(case)
    reports, errors = [], []
    for g in grids:
        prob = problem_for(case, g, sym)
        forcing = manufacture_discrete(case, g) if mode == "discrete" else forcing_fields(prob)
        if start == "exact":
            s0 = exact_state(case, g)
        else:
            s0 = apply_dirichlet(FlowState.zeros(g, case.micropolar), prob)
        state, rep = iterate(s0, prob, cfg, forcing)
        reports.append(rep)
        errors.append(error_report(state, case))
    orders = ladder_orders(errors) if len(errors) >= 2 else {}
    return MMSResult(mode, grids, reports, errors, orders)
