"""Residuals of the normalised Navier-Stokes and micropolar systems.

Each momentum-type equation is divided by its diffusion coefficient so the
Laplacian carries unit weight; the residual is "left side minus right side"
of the normalised equation.  The pressure equations are the divergence of the
momentum equations, closed on the boundary by a normal-derivative condition.

All evaluators are pure functions of immutable fields.  The Navier-Stokes
and micropolar evaluators share their operation order so that the micropolar
residuals with ``nu_r = 0`` and ``w = 0`` reproduce the Navier-Stokes ones
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Union

import numpy as np

from . import expr as ex
from .errors import GridError, GridMismatch, MissingMicrorotation
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
    divergence,
    grad_div,
    laplacian,
)

NEUMANN_MODES = ("paper", "full")


class ProblemKind(str, Enum):
    NAVIER_STOKES = "navier_stokes"
    MICROPOLAR = "micropolar"

    @classmethod
    def parse(cls, value) -> "ProblemKind":
        if isinstance(value, ProblemKind):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"ns": "navier_stokes", "mp": "micropolar"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown problem kind {value!r}; expected 'navier_stokes' or 'micropolar'") from None


@dataclass(frozen=True)
class FluidParams:
    """Viscosity and coupling constants.

    ``nu`` is the Newtonian viscosity, ``nu_r`` the microrotation viscosity
    and ``c0, ca, cd`` the angular viscosity coefficients.
    """

    nu: float
    nu_r: float = 0.0
    c0: float = 0.0
    ca: float = 0.0
    cd: float = 0.0

    def __post_init__(self):
        for name in ("nu", "nu_r", "c0", "ca", "cd"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if not self.nu > 0.0:
            raise ValueError(f"nu must be > 0, got {self.nu!r}")
        if self.nu_r < 0.0:
            raise ValueError(f"nu_r must be >= 0, got {self.nu_r!r}")

    def check_micropolar(self) -> None:
        for name in ("c0", "ca", "cd"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"micropolar flow needs {name} > 0, got {getattr(self, name)!r}")
        if not self.c0 + self.cd > self.ca:
            raise ValueError(f"micropolar flow needs c0 + cd > ca, got {self.c0} + {self.cd} <= {self.ca}")


@dataclass(frozen=True)
class FlowState:
    """One iterate: velocity ``u``, optional microrotation ``w``, pressure ``p``."""

    u: VectorField
    p: ScalarField
    w: Optional[VectorField] = None

    def __post_init__(self):
        if self.u.grid != self.p.grid or (self.w is not None and self.w.grid != self.p.grid):
            raise GridMismatch("state blocks live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.p.grid

    @classmethod
    def zeros(cls, grid: GridSpec, micropolar: bool = False) -> "FlowState":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid), VectorField.zeros(grid) if micropolar else None)

    def replace(self, **changes) -> "FlowState":
        data = {"u": self.u, "p": self.p, "w": self.w}
        data.update(changes)
        return FlowState(**data)

    def blocks(self) -> dict[str, Union[ScalarField, VectorField]]:
        out = {"u": self.u}
        if self.w is not None:
            out["w"] = self.w
        out["p"] = self.p
        return out


ExprTriple = tuple[ex.Expr, ex.Expr, ex.Expr]


def expr_triple(values) -> ExprTriple:
    items = tuple(ex.as_expr(v) for v in values)
    if len(items) != 3:
        raise ValueError(f"expected three component expressions, got {len(items)}")
    return items


_ZERO3 = (ex.ZERO, ex.ZERO, ex.ZERO)


@dataclass(frozen=True)
class ProblemSpec:
    """A boundary/initial value problem for one of the two flow systems.

    ``forcing`` is the body force (``f`` / ``f1``), ``moment`` the
    microrotation source ``f2``; ``boundary_u`` / ``boundary_w`` are the
    Dirichlet data and ``initial_u`` / ``initial_w`` the data at ``t0``.
    ``pressure_source`` is an optional extra right-hand side of the pressure
    equation, zero for physical problems.
    """

    kind: ProblemKind
    params: FluidParams
    grid: GridSpec
    forcing: ExprTriple = _ZERO3
    moment: Optional[ExprTriple] = None
    boundary_u: ExprTriple = _ZERO3
    boundary_w: Optional[ExprTriple] = None
    initial_u: ExprTriple = _ZERO3
    initial_w: Optional[ExprTriple] = None
    pressure_source: ex.Expr = ex.ZERO

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind.parse(self.kind))
        for name in ("forcing", "boundary_u", "initial_u"):
            object.__setattr__(self, name, expr_triple(getattr(self, name)))
        object.__setattr__(self, "pressure_source", ex.as_expr(self.pressure_source))
        if self.micropolar:
            self.params.check_micropolar()
            for name in ("moment", "boundary_w", "initial_w"):
                value = getattr(self, name)
                object.__setattr__(self, name, _ZERO3 if value is None else expr_triple(value))
        else:
            for name in ("moment", "boundary_w", "initial_w"):
                if getattr(self, name) is not None:
                    raise ValueError(f"{name} is only meaningful for micropolar problems")
        for e in self.expressions():
            extra = ex.free_variables(e) - set(ex.VARIABLES)
            if extra:
                raise ValueError(f"expression {e} uses unknown symbols {sorted(extra)}")

    @property
    def micropolar(self) -> bool:
        return self.kind is ProblemKind.MICROPOLAR

    def expressions(self) -> list[ex.Expr]:
        out = [*self.forcing, *self.boundary_u, *self.initial_u, self.pressure_source]
        for triple in (self.moment, self.boundary_w, self.initial_w):
            if triple is not None:
                out.extend(triple)
        return out


@dataclass(frozen=True)
class Forcing:
    """Source fields on a grid: body force, microrotation source, pressure source."""

    f1: VectorField
    f2: Optional[VectorField] = None
    pressure_source: Optional[ScalarField] = None


def _vector_from_exprs(triple: ExprTriple, grid: GridSpec) -> VectorField:
    return VectorField(*(ex.eval_cached(e, grid) for e in triple))


def forcing_fields(prob: ProblemSpec) -> Forcing:
    """Evaluate the problem's source expressions on its grid."""
    f1 = _vector_from_exprs(prob.forcing, prob.grid)
    f2 = _vector_from_exprs(prob.moment, prob.grid) if prob.micropolar else None
    source = None
    if prob.pressure_source != ex.ZERO:
        source = ex.eval_cached(prob.pressure_source, prob.grid)
    return Forcing(f1, f2, source)


# --- Navier-Stokes -----------------------------------------------------------


def _check(s: FlowState, *fields) -> None:
    for f in fields:
        if f is not None and f.grid != s.grid:
            raise GridMismatch("forcing and state live on different grids")


def ns_momentum_residual(s: FlowState, f: VectorField, prm: FluidParams) -> VectorField:
    """``lap u - (du/dt + (u.grad)u + grad p)/nu + f/nu`` per component."""
    _check(s, f)
    c = 1.0 / prm.nu
    u = s.u
    out = []
    for i, axis in enumerate(SPATIAL_AXES):
        ui = u[i]
        transport = ddt(ui) + advect(u, ui) + ddx(s.p, axis)
        out.append(laplacian(ui) - c * transport + c * f[i])
    return VectorField(*out)


def ns_pressure_residual(s: FlowState, f: VectorField, source: Optional[ScalarField] = None) -> ScalarField:
    """``lap p + div((u.grad)u - f)``, minus ``source`` when given."""
    _check(s, f, source)
    r = laplacian(s.p) + divergence(convection(s.u) - f)
    return r if source is None else r - source


def _normal_data(vec: VectorField, grid: GridSpec) -> "NeumannData":
    faces = {}
    for axis in SPATIAL_AXES:
        if grid.is_degenerate(axis):
            continue
        comp = vec[axis].values
        lo = np.take(comp, [0], axis=int(axis))
        hi = np.take(comp, [grid.count(axis) - 1], axis=int(axis))
        faces[(axis, -1)] = -lo
        faces[(axis, +1)] = hi.copy()
    return NeumannData(grid, faces)


def ns_pressure_neumann(s: FlowState, f: VectorField, prm: FluidParams, mode: str = "paper") -> "NeumannData":
    """Target ``dp/dn`` on every boundary face.

    ``paper``: ``-(nu lap u + f).n``.  ``full``: the normal trace of the
    momentum equation, ``(nu lap u + f - du/dt - (u.grad)u).n``.
    """
    _check(s, f)
    mode = _neumann_mode(mode)
    lap_u = s.u.map(laplacian)
    if mode == "paper":
        vec = -(lap_u * prm.nu + f)
    else:
        vec = lap_u * prm.nu + f - s.u.map(ddt) - convection(s.u)
    return _normal_data(vec, s.grid)


# --- micropolar --------------------------------------------------------------


def _need_w(s: FlowState) -> VectorField:
    if s.w is None:
        raise MissingMicrorotation("micropolar residuals need a microrotation field w")
    return s.w


def mp_momentum_residual(s: FlowState, f1: VectorField, prm: FluidParams) -> VectorField:
    """``lap u - (du/dt + (u.grad)u + grad p)/(nu+nu_r) + (2 nu_r curl w + f1)/(nu+nu_r)``."""
    w = _need_w(s)
    _check(s, f1)
    c = 1.0 / (prm.nu + prm.nu_r)
    u = s.u
    curl_w = curl(w)
    out = []
    for i, axis in enumerate(SPATIAL_AXES):
        ui = u[i]
        transport = ddt(ui) + advect(u, ui) + ddx(s.p, axis)
        out.append(laplacian(ui) - c * transport + c * (2.0 * prm.nu_r * curl_w[i] + f1[i]))
    return VectorField(*out)


def mp_microrotation_residual(s: FlowState, f2: VectorField, prm: FluidParams) -> VectorField:
    """Normalised angular-momentum residual.

    ``lap w - (dw/dt - (c0+cd-ca) grad div w + (u.grad)w + 4 nu_r w)/(ca+cd)
    + (2 nu_r curl u + f2)/(ca+cd)``.
    """
    w = _need_w(s)
    _check(s, f2)
    c = 1.0 / (prm.ca + prm.cd)
    k = prm.c0 + prm.cd - prm.ca
    gdw = grad_div(w)
    curl_u = curl(s.u)
    out = []
    for i in range(3):
        wi = w[i]
        inner = ddt(wi) - k * gdw[i] + advect(s.u, wi) + 4.0 * prm.nu_r * wi
        out.append(laplacian(wi) - c * inner + c * (2.0 * prm.nu_r * curl_u[i] + f2[i]))
    return VectorField(*out)


def mp_pressure_residual(
    s: FlowState, f1: VectorField, prm: FluidParams, source: Optional[ScalarField] = None
) -> ScalarField:
    """``lap p + div((u.grad)u - 2 nu_r curl w - f1)``, minus ``source`` when given."""
    w = _need_w(s)
    _check(s, f1, source)
    r = laplacian(s.p) + divergence(convection(s.u) - curl(w) * (2.0 * prm.nu_r) - f1)
    return r if source is None else r - source


def mp_pressure_neumann(s: FlowState, f1: VectorField, prm: FluidParams, mode: str = "paper") -> "NeumannData":
    """``paper``: ``-(nu lap u + 2 nu_r curl u + f1).n``; ``full``: momentum trace."""
    w = _need_w(s)
    _check(s, f1)
    mode = _neumann_mode(mode)
    lap_u = s.u.map(laplacian)
    if mode == "paper":
        vec = -(lap_u * prm.nu + curl(s.u) * (2.0 * prm.nu_r) + f1)
    else:
        vec = (
            lap_u * (prm.nu + prm.nu_r)
            + curl(w) * (2.0 * prm.nu_r)
            + f1
            - s.u.map(ddt)
            - convection(s.u)
        )
    return _normal_data(vec, s.grid)


def _neumann_mode(mode: str) -> str:
    if mode not in NEUMANN_MODES:
        raise ValueError(f"unknown Neumann mode {mode!r}; expected one of {NEUMANN_MODES}")
    return mode


# --- boundary handling -------------------------------------------------------


@dataclass(frozen=True)
class NeumannData:
    """Target outward normal derivative per boundary face.

    ``faces[(axis, side)]`` has the grid shape with length 1 along ``axis``;
    ``side`` is -1 for the lower face and +1 for the upper face.
    """

    grid: GridSpec
    faces: Mapping[tuple[Axis, int], np.ndarray]

    def face(self, axis: Axis, side: int) -> np.ndarray:
        return self.faces[(Axis.parse(axis), side)]


def impose_pressure_neumann(p: ScalarField, data: NeumannData) -> ScalarField:
    """Overwrite boundary pressures so one-sided normal derivatives hit the targets.

    Uses the same one-sided closures as :func:`vimflow.grid.ddx`.  Axes are
    processed in order, so corner nodes follow the last non-degenerate axis.
    """
    if data.grid != p.grid:
        raise GridMismatch("Neumann data and pressure live on different grids")
    v = np.array(p.values)
    for axis in SPATIAL_AXES:
        n = p.grid.count(axis)
        if n == 1:
            continue
        h = p.grid.spacing(axis)
        a = int(axis)
        lo_t = data.face(axis, -1)
        hi_t = data.face(axis, +1)

        def at(i):
            return np.take(v, [i], axis=a)

        if n == 2:
            lo = at(1) + h * lo_t
            hi = at(0) + h * hi_t
        else:
            lo = (4.0 * at(1) - at(2) + 2.0 * h * lo_t) / 3.0
            hi = (4.0 * at(n - 2) - at(n - 3) + 2.0 * h * hi_t) / 3.0
        idx = [slice(None)] * 4
        idx[a] = slice(0, 1)
        v[tuple(idx)] = lo
        idx[a] = slice(n - 1, n)
        v[tuple(idx)] = hi
    return ScalarField(p.grid, v)


def _impose(values: np.ndarray, boundary: np.ndarray, initial: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = np.array(values)
    for axis in SPATIAL_AXES:
        n = grid.count(axis)
        if n == 1:
            continue
        idx = [slice(None)] * 4
        for i in (0, n - 1):
            idx[axis] = i
            out[tuple(idx)] = boundary[tuple(idx)]
    if grid.nt > 1:
        out[..., 0] = initial[..., 0]
    return out


def _impose_vector(v: VectorField, bnd: ExprTriple, init: ExprTriple) -> VectorField:
    grid = v.grid
    comps = []
    for c, b, i in zip(v, bnd, init):
        vals = _impose(c.values, ex.eval_cached(b, grid).values, ex.eval_cached(i, grid).values, grid)
        comps.append(ScalarField(grid, vals))
    return VectorField(*comps)


def apply_dirichlet(s: FlowState, prob: ProblemSpec) -> FlowState:
    """Impose the boundary data on spatial boundary faces and the initial data at ``t0``.

    Degenerate spatial axes have no boundary faces.  With a single time slice
    the problem is steady and no initial data is imposed.
    """
    if s.grid != prob.grid:
        raise GridMismatch("state and problem live on different grids")
    u = _impose_vector(s.u, prob.boundary_u, prob.initial_u)
    w = s.w
    if prob.micropolar:
        w = _impose_vector(_need_w(s), prob.boundary_w, prob.initial_w)
    return FlowState(u, s.p, w)


def project_pressure_gauge(p: ScalarField) -> ScalarField:
    """Subtract the node mean of every time slice."""
    mean = p.values.mean(axis=(0, 1, 2), keepdims=True)
    return ScalarField(p.grid, p.values - mean)


def boundary_mask(grid: GridSpec) -> np.ndarray:
    """True on spatial boundary faces and, when ``nt > 1``, on the initial slice."""
    mask = np.zeros(grid.shape, dtype=bool)
    for axis in SPATIAL_AXES:
        n = grid.count(axis)
        if n == 1:
            continue
        idx = [slice(None)] * 4
        for i in (0, n - 1):
            idx[axis] = i
            mask[tuple(idx)] = True
    if grid.nt > 1:
        mask[..., 0] = True
    return mask


# --- extension contract ------------------------------------------------------

Block = Union[ScalarField, VectorField]
Evaluator = Callable[[Mapping[str, Block]], Block]


@dataclass
class GeneralSystem:
    """User-extensible system: one residual evaluator per unknown block.

    Every evaluator receives the full mapping of current blocks and returns a
    residual with the same shape as its own block.  The iteration engine only
    relies on this mapping, so new systems plug in without touching it.
    """

    residuals: dict[str, Evaluator] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.residuals)

    def evaluate(self, blocks: Mapping[str, Block], name: str) -> Block:
        out = self.residuals[name](blocks)
        ref = blocks[name]
        if type(out) is not type(ref) or out.grid != ref.grid:
            raise GridMismatch(f"residual for block {name!r} does not match the block's shape")
        return out


def _state_of(blocks: Mapping[str, Block]) -> FlowState:
    return FlowState(blocks["u"], blocks["p"], blocks.get("w"))


def flow_system(prob: ProblemSpec, forcing: Forcing) -> GeneralSystem:
    """Bind the concrete residual evaluators of ``prob`` to its source fields."""
    prm = prob.params
    if prob.micropolar:
        if forcing.f2 is None:
            raise ValueError("micropolar forcing needs a microrotation source f2")
        return GeneralSystem(
            {
                "u": lambda b: mp_momentum_residual(_state_of(b), forcing.f1, prm),
                "w": lambda b: mp_microrotation_residual(_state_of(b), forcing.f2, prm),
                "p": lambda b: mp_pressure_residual(_state_of(b), forcing.f1, prm, forcing.pressure_source),
            }
        )
    return GeneralSystem(
        {
            "u": lambda b: ns_momentum_residual(_state_of(b), forcing.f1, prm),
            "p": lambda b: ns_pressure_residual(_state_of(b), forcing.f1, forcing.pressure_source),
        }
    )


def pressure_neumann(s: FlowState, prob: ProblemSpec, forcing: Forcing, mode: str = "paper") -> NeumannData:
    if prob.micropolar:
        return mp_pressure_neumann(s, forcing.f1, prob.params, mode)
    return ns_pressure_neumann(s, forcing.f1, prob.params, mode)


def check_grid_for_problem(grid: GridSpec) -> None:
    """Spatial axes that carry second derivatives need at least three nodes."""
    for axis in SPATIAL_AXES:
        if grid.count(axis) == 2:
            raise GridError(f"axis {axis.label} has 2 nodes; use 1 (degenerate) or >= 3")
