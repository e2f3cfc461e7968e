"""Structured space-time grid, discrete fields and finite-difference operators.

Every unknown lives on a tensor grid over (x1, x2, x3, t).  Fields are
immutable; all operators return new fields.  Derivatives use second-order
central stencils in the interior and second-order one-sided closures at the
two ends of each axis, so they are exact on quadratics.  An axis with a single
node is degenerate and every derivative along it is identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .errors import GridError, GridMismatch, NonFinite, SameAxis, TemporalAxis


class Axis(IntEnum):
    X1 = 0
    X2 = 1
    X3 = 2
    T = 3

    @classmethod
    def parse(cls, name: Union[str, "Axis"]) -> "Axis":
        if isinstance(name, Axis):
            return name
        key = str(name).strip().upper()
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown axis {name!r}; expected one of x1, x2, x3, t") from None

    @property
    def label(self) -> str:
        return self.name.lower()


SPATIAL_AXES = (Axis.X1, Axis.X2, Axis.X3)


@dataclass(frozen=True)
class GridSpec:
    """Node counts, spacings and origin of a uniform (x1, x2, x3, t) grid."""

    n1: int
    n2: int
    n3: int
    nt: int
    h1: float = 1.0
    h2: float = 1.0
    h3: float = 1.0
    dt: float = 1.0
    origin: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("n1", "n2", "n3", "nt"):
            n = getattr(self, name)
            if int(n) != n or n < 1:
                raise GridError(f"{name} must be an integer >= 1, got {n!r}")
            object.__setattr__(self, name, int(n))
        for name in ("h1", "h2", "h3", "dt"):
            h = float(getattr(self, name))
            if not (math.isfinite(h) and h > 0.0):
                raise GridError(f"{name} must be finite and > 0, got {h!r}")
            object.__setattr__(self, name, h)
        origin = tuple(float(v) for v in self.origin)
        if len(origin) != 4 or not all(math.isfinite(v) for v in origin):
            raise GridError(f"origin must be four finite numbers, got {self.origin!r}")
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_bounds(
        cls,
        n1: int,
        n2: int,
        n3: int,
        nt: int,
        x1: Sequence[float] = (0.0, 1.0),
        x2: Sequence[float] = (0.0, 1.0),
        x3: Sequence[float] = (0.0, 1.0),
        t: Sequence[float] = (0.0, 1.0),
    ) -> "GridSpec":
        """Build a grid from node counts and closed intervals ``(lo, hi)``.

        For a single-node axis only ``lo`` is used and the spacing is set to 1.
        """
        counts = (n1, n2, n3, nt)
        spans = (x1, x2, x3, t)
        spacings = []
        for axis, n, (lo, hi) in zip(Axis, counts, spans):
            if n == 1:
                spacings.append(1.0)
                continue
            if not hi > lo:
                raise GridError(f"axis {axis.label}: upper bound {hi!r} must exceed lower bound {lo!r}")
            spacings.append((float(hi) - float(lo)) / (n - 1))
        return cls(n1, n2, n3, nt, *spacings, origin=tuple(float(s[0]) for s in spans))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n1, self.n2, self.n3, self.nt)

    @property
    def size(self) -> int:
        return self.n1 * self.n2 * self.n3 * self.nt

    def count(self, axis: Axis) -> int:
        return self.shape[axis]

    def spacing(self, axis: Axis) -> float:
        return (self.h1, self.h2, self.h3, self.dt)[axis]

    def is_degenerate(self, axis: Axis) -> bool:
        return self.shape[axis] == 1

    def bounds(self, axis: Axis) -> tuple[float, float]:
        lo = self.origin[axis]
        return lo, lo + (self.count(axis) - 1) * self.spacing(axis)

    def coords(self, axis: Axis) -> np.ndarray:
        """Node coordinates along ``axis`` as a 1-D array."""
        return self.origin[axis] + self.spacing(axis) * np.arange(self.count(axis), dtype=float)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays, each with a length-1 axis except its own."""
        out = []
        for axis in Axis:
            shape = [1, 1, 1, 1]
            shape[axis] = self.count(axis)
            out.append(self.coords(axis).reshape(shape))
        return tuple(out)

    def node_coords(self, index: Sequence[int]) -> tuple[float, float, float, float]:
        return tuple(self.origin[a] + index[a] * self.spacing(a) for a in Axis)

    def refine(self, axes: Sequence[Axis]) -> "GridSpec":
        """Halve the spacing along ``axes`` keeping the bounds (n -> 2n - 1)."""
        counts = list(self.shape)
        spacings = [self.h1, self.h2, self.h3, self.dt]
        for axis in axes:
            axis = Axis.parse(axis)
            if counts[axis] == 1:
                continue
            counts[axis] = 2 * counts[axis] - 1
            spacings[axis] = spacings[axis] / 2.0
        return GridSpec(*counts, *spacings, origin=self.origin)

    def summary(self) -> dict:
        return {
            "shape": list(self.shape),
            "spacing": [self.h1, self.h2, self.h3, self.dt],
            "origin": list(self.origin),
        }


Scalar = Union[int, float]


class ScalarField:
    """Real values at every node of a grid, stored as a read-only 4-D array.

    Row-major (C order) flattening of ``values`` gives x1-major traversal,
    which is the canonical node order used by norms and file output.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values, *, check: bool = True):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim == 1 and arr.size == grid.size:
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise GridMismatch(f"values of shape {arr.shape} do not match grid shape {grid.shape}")
        if check:
            _require_finite(arr)
        arr.flags.writeable = False
        self.grid = grid
        self.values = arr

    # constructors -----------------------------------------------------
    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape), check=False)

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[..., np.ndarray]) -> "ScalarField":
        x1, x2, x3, t = grid.mesh()
        return cls(grid, np.broadcast_to(fn(x1, x2, x3, t), grid.shape))

    # helpers ----------------------------------------------------------
    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatch("fields live on different grids")
            return other.values
        if isinstance(other, (int, float, np.floating, np.integer)):
            return float(other)
        return NotImplemented

    def _wrap(self, arr) -> "ScalarField":
        return ScalarField(self.grid, arr)

    def compatible(self, other: "ScalarField") -> bool:
        return self.grid == other.grid

    def copy_with(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.values + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.values - o)

    def __rsub__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._wrap(o - self.values)

    def __mul__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.values * o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._other(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.values / o)

    def __neg__(self):
        return self._wrap(-self.values)

    def __eq__(self, other):
        return (
            isinstance(other, ScalarField)
            and other.grid == self.grid
            and np.array_equal(other.values, self.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"ScalarField(shape={self.grid.shape}, max|v|={np.abs(self.values).max():.6g})"


class VectorField:
    """Three mutually compatible scalar components."""

    __slots__ = ("c1", "c2", "c3")

    def __init__(self, c1: ScalarField, c2: ScalarField, c3: ScalarField):
        if not (c1.grid == c2.grid == c3.grid):
            raise GridMismatch("vector components live on different grids")
        self.c1, self.c2, self.c3 = c1, c2, c3

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        z = ScalarField.zeros(grid)
        return cls(z, z, z)

    @property
    def grid(self) -> GridSpec:
        return self.c1.grid

    def __iter__(self) -> Iterator[ScalarField]:
        return iter((self.c1, self.c2, self.c3))

    def __getitem__(self, i: int) -> ScalarField:
        return (self.c1, self.c2, self.c3)[i]

    def map(self, fn: Callable[[ScalarField], ScalarField]) -> "VectorField":
        return VectorField(*(fn(c) for c in self))

    def _zip(self, other, op) -> "VectorField":
        if isinstance(other, VectorField):
            return VectorField(*(op(a, b) for a, b in zip(self, other)))
        return VectorField(*(op(a, other) for a in self))

    def __add__(self, other):
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._zip(other, lambda a, b: a - b)

    def __mul__(self, other):
        if isinstance(other, VectorField):
            return NotImplemented
        return self._zip(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._zip(other, lambda a, b: a / b)

    def __neg__(self):
        return self.map(lambda c: -c)

    def __eq__(self, other):
        return isinstance(other, VectorField) and all(a == b for a, b in zip(self, other))

    __hash__ = None

    def __repr__(self):
        return f"VectorField(shape={self.grid.shape})"


def _require_finite(arr: np.ndarray) -> None:
    finite = np.isfinite(arr)
    if not finite.all():
        bad = np.unravel_index(int(np.argmin(finite.reshape(-1))), arr.shape)
        index = tuple(int(i) for i in bad)
        raise NonFinite(f"non-finite value {arr[index]!r} at node {index}", index=index)


def _check_same_grid(*fields: ScalarField) -> GridSpec:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch("fields live on different grids")
    return grid


def _sl(axis: int, s) -> tuple:
    idx = [slice(None)] * 4
    idx[axis] = s
    return tuple(idx)


# --- derivatives -------------------------------------------------------------


def _ddx_array(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    n = v.shape[axis]
    out = np.empty_like(v)
    if n == 1:
        out[...] = 0.0
    elif n == 2:
        d = (v[_sl(axis, 1)] - v[_sl(axis, 0)]) / h
        out[_sl(axis, 0)] = d
        out[_sl(axis, 1)] = d
    else:
        out[_sl(axis, slice(1, -1))] = (v[_sl(axis, slice(2, None))] - v[_sl(axis, slice(None, -2))]) / (2.0 * h)
        out[_sl(axis, 0)] = (-3.0 * v[_sl(axis, 0)] + 4.0 * v[_sl(axis, 1)] - v[_sl(axis, 2)]) / (2.0 * h)
        out[_sl(axis, -1)] = (3.0 * v[_sl(axis, -1)] - 4.0 * v[_sl(axis, -2)] + v[_sl(axis, -3)]) / (2.0 * h)
    return out


def _d2_array(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    n = v.shape[axis]
    out = np.empty_like(v)
    h2 = h * h
    if n == 1:
        out[...] = 0.0
    elif n == 2:
        raise GridError(f"second derivative along axis {Axis(axis).label} needs at least 3 nodes, got 2")
    elif n == 3:
        d = (v[_sl(axis, 0)] - 2.0 * v[_sl(axis, 1)] + v[_sl(axis, 2)]) / h2
        for i in range(3):
            out[_sl(axis, i)] = d
    else:
        out[_sl(axis, slice(1, -1))] = (
            v[_sl(axis, slice(2, None))] - 2.0 * v[_sl(axis, slice(1, -1))] + v[_sl(axis, slice(None, -2))]
        ) / h2
        out[_sl(axis, 0)] = (
            2.0 * v[_sl(axis, 0)] - 5.0 * v[_sl(axis, 1)] + 4.0 * v[_sl(axis, 2)] - v[_sl(axis, 3)]
        ) / h2
        out[_sl(axis, -1)] = (
            2.0 * v[_sl(axis, -1)] - 5.0 * v[_sl(axis, -2)] + 4.0 * v[_sl(axis, -3)] - v[_sl(axis, -4)]
        ) / h2
    return out


def ddx(f: ScalarField, a: Axis) -> ScalarField:
    """First derivative along ``a`` (any axis, including time)."""
    a = Axis.parse(a)
    return ScalarField(f.grid, _ddx_array(f.values, int(a), f.grid.spacing(a)))


def d2(f: ScalarField, a: Axis) -> ScalarField:
    """Second derivative along ``a``; one-sided 4-point closure at the ends."""
    a = Axis.parse(a)
    return ScalarField(f.grid, _d2_array(f.values, int(a), f.grid.spacing(a)))


def d_mixed(f: ScalarField, a: Axis, b: Axis) -> ScalarField:
    a, b = Axis.parse(a), Axis.parse(b)
    if a == b:
        raise SameAxis(f"mixed derivative needs two distinct axes, got {a.label} twice; use d2")
    return ddx(ddx(f, a), b)


def ddt(f: ScalarField) -> ScalarField:
    return ddx(f, Axis.T)


def laplacian(f: ScalarField) -> ScalarField:
    """Spatial Laplacian ``d2(f, X1) + d2(f, X2) + d2(f, X3)``."""
    return d2(f, Axis.X1) + d2(f, Axis.X2) + d2(f, Axis.X3)


def gradient(p: ScalarField) -> VectorField:
    return VectorField(ddx(p, Axis.X1), ddx(p, Axis.X2), ddx(p, Axis.X3))


def divergence(v: VectorField) -> ScalarField:
    return ddx(v.c1, Axis.X1) + ddx(v.c2, Axis.X2) + ddx(v.c3, Axis.X3)


def curl(v: VectorField) -> VectorField:
    return VectorField(
        ddx(v.c3, Axis.X2) - ddx(v.c2, Axis.X3),
        ddx(v.c1, Axis.X3) - ddx(v.c3, Axis.X1),
        ddx(v.c2, Axis.X1) - ddx(v.c1, Axis.X2),
    )


def vector_laplacian(v: VectorField) -> VectorField:
    return v.map(laplacian)


def advect(u: VectorField, f: ScalarField) -> ScalarField:
    """Advective derivative ``u1 df/dx1 + u2 df/dx2 + u3 df/dx3``."""
    return u.c1 * ddx(f, Axis.X1) + u.c2 * ddx(f, Axis.X2) + u.c3 * ddx(f, Axis.X3)


def convection(u: VectorField, v: VectorField | None = None) -> VectorField:
    """``(u . grad) v`` componentwise in advective form; ``v`` defaults to ``u``."""
    target = u if v is None else v
    return VectorField(*(advect(u, c) for c in target))


def grad_div(v: VectorField) -> VectorField:
    """``grad(div v)`` written with d2 on the diagonal and d_mixed off it."""
    X1, X2, X3 = SPATIAL_AXES
    return VectorField(
        d2(v.c1, X1) + d_mixed(v.c2, X1, X2) + d_mixed(v.c3, X1, X3),
        d_mixed(v.c1, X2, X1) + d2(v.c2, X2) + d_mixed(v.c3, X2, X3),
        d_mixed(v.c1, X3, X1) + d_mixed(v.c2, X3, X2) + d2(v.c3, X3),
    )


# --- integrals and norms -----------------------------------------------------


def prefix_integral(f: ScalarField, a: Axis) -> ScalarField:
    """Cumulative trapezoidal integral along a spatial axis from its lower bound.

    The value at the first node along ``a`` is zero.
    """
    a = Axis.parse(a)
    if a == Axis.T:
        raise TemporalAxis("prefix_integral integrates along a spatial axis only")
    v = f.values
    out = np.zeros_like(v)
    if f.grid.count(a) > 1:
        h = f.grid.spacing(a)
        panels = 0.5 * h * (v[_sl(a, slice(1, None))] + v[_sl(a, slice(None, -1))])
        out[_sl(a, slice(1, None))] = np.cumsum(panels, axis=int(a))
    return ScalarField(f.grid, out)


def quadrature_weights(grid: GridSpec) -> np.ndarray:
    """Tensor trapezoidal weights; a degenerate axis has unit weight."""
    w = np.ones(grid.shape)
    for axis in Axis:
        n = grid.count(axis)
        if n == 1:
            continue
        w1 = np.full(n, grid.spacing(axis))
        w1[0] = w1[-1] = 0.5 * grid.spacing(axis)
        shape = [1, 1, 1, 1]
        shape[axis] = n
        w = w * w1.reshape(shape)
    return w


def norm_linf(f: ScalarField) -> float:
    return float(np.max(np.abs(f.values)))


def norm_l2(f: ScalarField) -> float:
    """Discrete L2 norm with trapezoidal weights over the space-time domain.

    Values are scaled by their maximum magnitude before squaring so the norm
    of any finite field is itself finite.
    """
    peak = float(np.max(np.abs(f.values)))
    if peak == 0.0:
        return 0.0
    scaled = f.values / peak
    return peak * float(math.sqrt(np.sum(quadrature_weights(f.grid) * scaled * scaled)))


_NORMS = {"l2": norm_l2, "linf": norm_linf}


def norm(f: ScalarField, kind: str = "l2") -> float:
    try:
        return _NORMS[kind](f)
    except KeyError:
        raise ValueError(f"unknown norm kind {kind!r}; expected 'l2' or 'linf'") from None


def diff_norm(a: ScalarField, b: ScalarField, kind: str = "l2") -> float:
    _check_same_grid(a, b)
    return norm(a - b, kind)


def vector_norm(v: VectorField, kind: str = "l2") -> float:
    """l2: root of the summed squared component norms; linf: max over components."""
    parts = [norm(c, kind) for c in v]
    if kind == "linf":
        return max(parts)
    return math.hypot(*parts)
