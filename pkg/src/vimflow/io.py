"""Deterministic serialization of fields, convergence reports, configs and manifests.

Fields go to CSV with one row per node in grid traversal order, reports to
newline-delimited JSON.  Floats are written with 17 significant digits (CSV)
or the shortest round-trip repr (JSON), so reading back is bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import expr as ex
from .errors import ConfigError, IoError, ParseError, VimflowError
from .grid import Axis, GridSpec, ScalarField
from .systems import FluidParams, ProblemKind, ProblemSpec
from .verify import ManufacturedCase, manufacture_symbolic, problem_for
from .vim import ConvergenceReport, IterationConfig, IterationRecord, estimate_contraction

PathLike = Union[str, Path]

CSV_HEADER = ("x1", "x2", "x3", "t", "value")


def _fmt(v: float) -> str:
    return "%.17g" % v


# --- fields --------------------------------------------------------------------


def _open_for_write(path: PathLike):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as err:
        raise IoError(f"cannot write {path}: {err.strerror or err}") from err


def write_field_csv(f: ScalarField, path: PathLike, select: Optional[Mapping[Any, int]] = None) -> None:
    """Write ``f`` as ``x1,x2,x3,t,value`` rows in grid order.

    ``select`` maps axes to a fixed node index, e.g. ``{"t": 0}`` writes only
    the initial slice.
    """
    grid = f.grid
    index = [slice(None)] * 4
    for axis, i in (select or {}).items():
        axis = Axis.parse(axis)
        n = grid.count(axis)
        if not -n <= i < n:
            raise IndexError(f"slice index {i} out of range for axis {axis.label} with {n} nodes")
        index[axis] = slice(i % n, i % n + 1)
    coords = [grid.coords(a)[index[a]] for a in Axis]
    values = f.values[tuple(index)]
    mesh = np.meshgrid(*coords, indexing="ij")
    columns = [m.ravel() for m in mesh] + [values.ravel()]
    with _open_for_write(path) as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_field_csv(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Read a field CSV back as ``(coords[N, 4], values[N])``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise IoError(f"cannot read {path}: {err.strerror or err}") from err
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise IoError(f"{path}: expected header {','.join(CSV_HEADER)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 5)
    return data[:, :4], data[:, 4]


# --- reports -------------------------------------------------------------------


def _record_line(rec: IterationRecord, status: str) -> dict:
    return {"n": rec.n, "d_u": rec.d_u, "d_w": rec.d_w, "d_p": rec.d_p, "gamma": rec.gamma, "status": status}


def gamma_bar(rep: ConvergenceReport) -> Optional[float]:
    try:
        return estimate_contraction(rep)
    except VimflowError:
        return None


def report_lines(rep: ConvergenceReport) -> list[str]:
    final = rep.status.value if rep.status is not None else "continue"
    out = []
    for i, rec in enumerate(rep.records):
        status = final if i == len(rep.records) - 1 else "continue"
        out.append(json.dumps(_record_line(rec, status), allow_nan=False))
    summary = {
        "summary": True,
        "status": final,
        "iterations": rep.iterations,
        "gamma_bar": gamma_bar(rep),
        "norm": rep.norm_kind,
        "divergence_window": rep.divergence_window,
        "message": rep.message,
    }
    out.append(json.dumps(summary, allow_nan=False))
    return out


def write_report(rep: ConvergenceReport, path: PathLike) -> None:
    """One JSON object per iteration, then a summary line."""
    with _open_for_write(path) as fh:
        for line in report_lines(rep):
            fh.write(line + "\n")


def read_report(path: PathLike) -> tuple[list[dict], dict]:
    """Parse a report file into (iteration records, summary)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise IoError(f"cannot read {path}: {err.strerror or err}") from err
    objs = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not objs or not objs[-1].get("summary"):
        raise IoError(f"{path}: missing summary line")
    return objs[:-1], objs[-1]


def write_json(obj: Any, path: PathLike) -> None:
    with _open_for_write(path) as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# --- config --------------------------------------------------------------------

_SECTIONS: dict[str, tuple[str, ...]] = {
    "grid": ("n", "n1", "n2", "n3", "nt", "x1", "x2", "x3", "t"),
    "params": ("kind", "nu", "nu_r", "c0", "ca", "cd"),
    "forcing": ("f1", "f2", "f3", "m1", "m2", "m3", "pressure_source"),
    "boundary": ("u1", "u2", "u3", "w1", "w2", "w3"),
    "initial": ("u1", "u2", "u3", "w1", "w2", "w3"),
    "iteration": (
        "direction",
        "max_iters",
        "tol",
        "norm",
        "relaxation",
        "divergence_window",
        "pressure_bc",
        "neumann",
        "threads",
    ),
    "case": ("name", "u1", "u2", "u3", "w1", "w2", "w3", "p", "levels", "refine", "start", "perturbation"),
}

STARTS = ("zero", "exact", "perturbed")


@dataclass
class RunConfig:
    """Everything a config file describes.

    ``case`` is set when the file has a ``[case]`` section; the problem is
    then the manufactured one (symbolic forcing, exact boundary/initial data).
    """

    problem: ProblemSpec
    iteration: IterationConfig
    case: Optional[ManufacturedCase] = None
    start: str = "zero"
    perturbation: float = 0.1
    data: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        return config_hash(self.data)


def config_hash(data: Mapping) -> str:
    """sha256 of the canonical JSON form of the parsed config."""
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _key_line(text: str, section: Optional[str], key: str) -> Optional[int]:
    """1-based line of ``key = ...`` inside ``[section]`` (or the root table)."""
    current = None
    pattern = re.compile(r"^\s*(?:\"%s\"|'%s'|%s)\s*=" % ((re.escape(key),) * 3))
    for lineno, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[\s*([^\]]+?)\s*\]", line)
        if head:
            current = head.group(1).strip().strip("\"'")
            if current == section and key == "":
                return lineno
            continue
        if current == section and pattern.match(line):
            return lineno
    return None


class _Reader:
    def __init__(self, data: dict, text: str):
        self.data = data
        self.text = text

    def fail(self, section: Optional[str], key: str, msg: str) -> ConfigError:
        where = f"[{section}] {key}" if section else key
        return ConfigError(f"{where}: {msg}", line=_key_line(self.text, section, key), key=key)

    def section(self, name: str) -> dict:
        value = self.data.get(name, {})
        if not isinstance(value, dict):
            raise self.fail(None, name, "expected a table")
        return value

    def has(self, name: str) -> bool:
        return name in self.data

    def number(self, sec: str, key: str, default=None, *, integer: bool = False, required: bool = False):
        table = self.section(sec)
        if key not in table:
            if required:
                raise ConfigError(f"[{sec}] missing required key {key!r}", key=key)
            return default
        v = table[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(sec, key, f"expected a number, got {v!r}")
        if integer:
            if int(v) != v:
                raise self.fail(sec, key, f"expected an integer, got {v!r}")
            return int(v)
        return float(v)

    def string(self, sec: str, key: str, default=None):
        table = self.section(sec)
        if key not in table:
            return default
        v = table[key]
        if not isinstance(v, str):
            raise self.fail(sec, key, f"expected a string, got {v!r}")
        return v

    def expr(self, sec: str, key: str, default: str = "0") -> ex.Expr:
        table = self.section(sec)
        if key not in table:
            return ex.parse(default)
        v = table[key]
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            raise self.fail(sec, key, f"expected an expression string, got {v!r}")
        try:
            return ex.parse(str(v))
        except ParseError as err:
            raise self.fail(sec, key, f"cannot parse expression: {err}") from None

    def interval(self, sec: str, key: str, default=(0.0, 1.0)) -> tuple[float, float]:
        table = self.section(sec)
        if key not in table:
            return default
        v = table[key]
        ok = isinstance(v, list) and len(v) == 2
        ok = ok and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)
        if not ok:
            raise self.fail(sec, key, f"expected [lo, hi], got {v!r}")
        return float(v[0]), float(v[1])


def _check_keys(r: _Reader) -> None:
    for name, value in r.data.items():
        if name not in _SECTIONS:
            line = _key_line(r.text, name, "") or _key_line(r.text, None, name)
            raise ConfigError(f"unknown section [{name}]", line=line, key=name)
        if not isinstance(value, dict):
            raise r.fail(None, name, "expected a table")
        for key in value:
            if key not in _SECTIONS[name]:
                raise r.fail(name, key, "unknown key")


def _grid(r: _Reader) -> GridSpec:
    g = r.section("grid")
    if "n" in g:
        n = g["n"]
        if any(k in g for k in ("n1", "n2", "n3", "nt")):
            raise r.fail("grid", "n", "give either n = [...] or n1..nt, not both")
        if not (isinstance(n, list) and len(n) == 4 and all(isinstance(c, int) and not isinstance(c, bool) for c in n)):
            raise r.fail("grid", "n", f"expected four integers [n1, n2, n3, nt], got {n!r}")
        counts = n
    else:
        counts = [r.number("grid", "n1", required=True, integer=True)]
        counts += [r.number("grid", k, 1, integer=True) for k in ("n2", "n3", "nt")]
    spans = [r.interval("grid", k) for k in ("x1", "x2", "x3", "t")]
    try:
        return GridSpec.from_bounds(*counts, *spans)
    except VimflowError as err:
        raise ConfigError(f"[grid] {err}", line=_key_line(r.text, "grid", "")) from None


def _params(r: _Reader) -> tuple[ProblemKind, FluidParams]:
    kind_text = r.string("params", "kind", "navier_stokes")
    try:
        kind = ProblemKind.parse(kind_text)
    except ValueError as err:
        raise r.fail("params", "kind", str(err)) from None
    nu = r.number("params", "nu", required=True)
    values = {k: r.number("params", k, 0.0) for k in ("nu_r", "c0", "ca", "cd")}
    try:
        prm = FluidParams(nu, **values)
        if kind is ProblemKind.MICROPOLAR:
            prm.check_micropolar()
    except ValueError as err:
        bad = next((k for k in ("nu", "nu_r", "c0", "ca", "cd") if k in str(err)), "nu")
        raise r.fail("params", bad, str(err)) from None
    return kind, prm


def _iteration(r: _Reader) -> IterationConfig:
    kw = {}
    for key, attr, integer in (
        ("max_iters", "max_iters", True),
        ("tol", "tol", False),
        ("relaxation", "relaxation", False),
        ("divergence_window", "divergence_window", True),
        ("threads", "threads", True),
    ):
        v = r.number("iteration", key, integer=integer)
        if v is not None:
            kw[attr] = v
    for key, attr in (("direction", "direction"), ("norm", "norm_kind"), ("pressure_bc", "pressure_bc"), ("neumann", "neumann")):
        v = r.string("iteration", key)
        if v is not None:
            kw[attr] = v
    try:
        return IterationConfig(**kw)
    except ValueError as err:
        msg = str(err)
        # name the offending key for the line lookup
        key = next((k for k in _SECTIONS["iteration"] if msg.startswith(k)), None)
        key = key or ("norm" if msg.startswith("norm_kind") else "direction")
        raise r.fail("iteration", key, msg) from None


def _triple(r: _Reader, sec: str, keys: tuple[str, str, str]):
    return tuple(r.expr(sec, k) for k in keys)


def _case(r: _Reader, kind: ProblemKind, prm: FluidParams, grid: GridSpec) -> ManufacturedCase:
    mp = kind is ProblemKind.MICROPOLAR
    if not mp and any(k in r.section("case") for k in ("w1", "w2", "w3")):
        key = next(k for k in ("w1", "w2", "w3") if k in r.section("case"))
        raise r.fail("case", key, "microrotation given for a navier_stokes case")
    refine = r.section("case").get("refine", ["x1", "x2", "x3", "t"])
    try:
        if not isinstance(refine, list):
            raise ValueError(f"expected a list of axis names, got {refine!r}")
        refine = tuple(Axis.parse(a) for a in refine)
    except ValueError as err:
        raise r.fail("case", "refine", str(err)) from None
    levels = r.number("case", "levels", 1, integer=True)
    if levels < 1:
        raise r.fail("case", "levels", "must be >= 1")
    return ManufacturedCase(
        name=r.string("case", "name", "case"),
        kind=kind,
        u=_triple(r, "case", ("u1", "u2", "u3")),
        p=r.expr("case", "p"),
        params=prm,
        grid=grid,
        w=_triple(r, "case", ("w1", "w2", "w3")) if mp else None,
        levels=levels,
        refine=refine,
    )


def _problem(r: _Reader, kind: ProblemKind, prm: FluidParams, grid: GridSpec) -> ProblemSpec:
    mp = kind is ProblemKind.MICROPOLAR
    if not mp:
        for sec, keys in (("forcing", ("m1", "m2", "m3")), ("boundary", ("w1", "w2", "w3")), ("initial", ("w1", "w2", "w3"))):
            for k in keys:
                if k in r.section(sec):
                    raise r.fail(sec, k, "microrotation data given for a navier_stokes problem")
    kw = {}
    if mp:
        kw = dict(
            moment=_triple(r, "forcing", ("m1", "m2", "m3")),
            boundary_w=_triple(r, "boundary", ("w1", "w2", "w3")),
            initial_w=_triple(r, "initial", ("w1", "w2", "w3")),
        )
    return ProblemSpec(
        kind=kind,
        params=prm,
        grid=grid,
        forcing=_triple(r, "forcing", ("f1", "f2", "f3")),
        boundary_u=_triple(r, "boundary", ("u1", "u2", "u3")),
        initial_u=_triple(r, "initial", ("u1", "u2", "u3")),
        pressure_source=r.expr("forcing", "pressure_source"),
        **kw,
    )


def parse_config(text: str) -> RunConfig:
    """Parse config text strictly; every problem is reported as a ConfigError."""
    try:
        return _parse_config(text)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(f"invalid config: {err}") from None


def _parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        line = getattr(err, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(err))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"invalid config: {err}", line=line) from None
    r = _Reader(data, text)
    _check_keys(r)
    if not r.has("grid"):
        raise ConfigError("missing required section [grid]", key="grid")
    grid = _grid(r)
    kind, prm = _params(r)
    cfg = _iteration(r)
    if r.has("case"):
        for sec in ("forcing", "boundary", "initial"):
            if r.has(sec):
                raise ConfigError(
                    f"[{sec}] cannot be combined with [case]; a case manufactures its own data",
                    line=_key_line(text, sec, ""),
                    key=sec,
                )
        case = _case(r, kind, prm, grid)
        start = r.string("case", "start", "exact")
        if start not in STARTS:
            raise r.fail("case", "start", f"expected one of {STARTS}, got {start!r}")
        frac = r.number("case", "perturbation", 0.1)
        if not (math.isfinite(frac) and frac >= 0.0):
            raise r.fail("case", "perturbation", "must be a finite number >= 0")
        prob = problem_for(case, grid, manufacture_symbolic(case))
        return RunConfig(prob, cfg, case, start, frac, data)
    return RunConfig(_problem(r, kind, prm, grid), cfg, None, "zero", 0.1, data)


def read_config(path: PathLike) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, UnicodeDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)


# --- manifest ------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    grid: dict
    status: str
    iterations: int
    final_norms: dict
    gamma_bar: Optional[float] = None
    extra: dict = field(default_factory=dict)
    timestamps: Optional[dict] = None

    @classmethod
    def from_report(cls, command: str, run: RunConfig, rep: ConvergenceReport, **extra) -> "RunManifest":
        last = rep.records[-1] if rep.records else None
        final = {}
        if last is not None:
            final = {"d_u": last.d_u, "d_w": last.d_w, "d_p": last.d_p, "d": last.d}
        return cls(
            command=command,
            config_hash=run.config_hash(),
            grid=run.problem.grid.summary(),
            status=rep.status.value if rep.status else "continue",
            iterations=rep.iterations,
            final_norms=final,
            gamma_bar=gamma_bar(rep),
            extra=extra,
        )

    def to_dict(self) -> dict:
        out = {
            "command": self.command,
            "config_sha256": self.config_hash,
            "grid": self.grid,
            "status": self.status,
            "iterations": self.iterations,
            "final_norms": self.final_norms,
            "gamma_bar": self.gamma_bar,
        }
        out.update(self.extra)
        if self.timestamps is not None:
            out["timestamps"] = self.timestamps
        return out

    def write(self, path: PathLike) -> None:
        write_json(self.to_dict(), path)
