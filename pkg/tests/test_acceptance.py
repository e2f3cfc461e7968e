"""Exit criteria for the solver.

Each test prints one ``PASS``/``FAIL`` line with its measured quantities and
wall time, then asserts.  Thresholds are the published ones; nothing here is
relaxed to make a criterion pass.
"""

import dataclasses
import math
import time
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from vimflow.cli import main
from vimflow.grid import (
    Axis,
    GridSpec,
    ScalarField,
    VectorField,
    curl,
    d2,
    d_mixed,
    ddt,
    ddx,
    divergence,
    gradient,
    laplacian,
    norm_linf,
)
from vimflow.io import read_config, read_field_csv, read_report, write_field_csv, write_report
from vimflow.systems import (
    FlowState,
    FluidParams,
    mp_momentum_residual,
    mp_pressure_residual,
    ns_momentum_residual,
    ns_pressure_residual,
)
from vimflow.verify import (
    exact_state,
    manufacture_discrete,
    mms_study,
    perturbed_state,
    problem_for,
    truncation_study,
)
from vimflow.vim import IterationConfig, Status, check_stationary, estimate_contraction, identify_multipliers, iterate, vim_step

pytestmark = pytest.mark.acceptance

X1, X2, X3, T = Axis
CASES = resources.files("vimflow") / "cases"


def load(name):
    return read_config(str(CASES / f"{name}.toml"))


@contextmanager
def criterion(capsys, number, title, budget):
    """Time the body and print one result line; ``lines`` collects details."""
    lines, verdict = [], {}
    start = time.perf_counter()
    try:
        yield lines, verdict
    finally:
        elapsed = time.perf_counter() - start
        ok = verdict.get("ok", False) and elapsed < budget
        detail = "; ".join(lines)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail} [{elapsed:.2f} s, budget {budget:g} s]")
        verdict["elapsed"] = elapsed


def vector_fields(s: FlowState):
    out = [("p", s.p)]
    out += [(f"u{k + 1}", c) for k, c in enumerate(s.u)]
    if s.w is not None:
        out += [(f"w{k + 1}", c) for k, c in enumerate(s.w)]
    return out


# --- 1 -----------------------------------------------------------------------------


def test_multiplier_identification(capsys):
    with criterion(capsys, 1, "multiplier identification", 1.0) as (lines, v):
        ident = identify_multipliers()
        rejected = [c for c in ("x1", "x1^2", "1 + x1", "2", "exp(x1)") if not check_stationary(c).passed]
        exact = all(c.max_deviation == 0.0 for w in (ident.lambda_witness, ident.mu_witness) for c in w.checks)
        lines.append(f"lambda = {ident.lam:g}, mu = {ident.mu:g}, checks exact = {exact}, counterexamples rejected = {len(rejected)}/5")
        v["ok"] = (ident.lam, ident.mu) == (1.0, 1.0) and exact and len(rejected) == 5
    assert v["ok"] and v["elapsed"] < 1.0


# --- 2 -----------------------------------------------------------------------------


def _smooth(grid, seed):
    a = np.random.default_rng(seed).normal(size=6)
    return ScalarField.from_function(
        grid,
        lambda x1, x2, x3, t: np.sin(a[0] * x1 + a[1] * x2) * np.cos(a[2] * x3 + t) + a[3] * np.exp(a[4] * x2 * x3) + a[5] * x1 * t,
    )


def _monomials():
    """(exponents, label) for every monomial of total degree <= 2 in (x1, x2, x3, t)."""
    out = [((0, 0, 0, 0), "1")]
    names = ("x1", "x2", "x3", "t")
    for i in range(4):
        e = [0] * 4
        e[i] = 1
        out.append((tuple(e), names[i]))
    for i in range(4):
        for j in range(i, 4):
            e = [0] * 4
            e[i] += 1
            e[j] += 1
            out.append((tuple(e), f"{names[i]}*{names[j]}"))
    return out


def _monomial(mesh, e, shape):
    v = np.ones(shape)
    for a in Axis:
        v = v * mesh[a] ** e[a]
    return v


def _derivative(mesh, e, shape, axes):
    """Exact derivative of the monomial with exponents ``e`` along ``axes``."""
    e = list(e)
    coef = 1.0
    for a in axes:
        coef *= e[a]
        e[a] = max(e[a] - 1, 0)
    return coef * _monomial(mesh, e, shape) if coef else np.zeros(shape)


def _stencil_errors(g, scales=None):
    """Max nodal error of every first/second stencil over the (scaled) monomial basis."""
    mesh = g.mesh()
    worst = 0.0
    for k, (e, _) in enumerate(_monomials()):
        s = 1.0 if scales is None else scales[k]
        q = ScalarField(g, s * _monomial(mesh, e, g.shape))
        checks = [(ddx(q, a), (a,)) for a in (X1, X2, X3)] + [(ddt(q), (T,))]
        checks += [(d2(q, a), (a, a)) for a in (X1, X2, X3)]
        checks += [(d_mixed(q, a, b), (a, b)) for a, b in ((X1, X2), (X1, X3), (X2, X3))]
        for got, axes in checks:
            worst = max(worst, float(np.max(np.abs(got.values - s * _derivative(mesh, e, g.shape, axes)))))
        lap = sum(_derivative(mesh, e, g.shape, (a, a)) for a in (X1, X2, X3))
        worst = max(worst, float(np.max(np.abs(laplacian(q).values - s * lap))))
    return worst


def test_operator_identities(capsys):
    with criterion(capsys, 2, "operator identities", 10.0) as (lines, v):
        g = GridSpec.from_bounds(33, 33, 33, 5)
        inner = (slice(1, -1),) * 3
        vf = VectorField(_smooth(g, 1), _smooth(g, 2), _smooth(g, 3))
        dc = float(np.max(np.abs(divergence(curl(vf)).values[inner])))
        cg = max(float(np.max(np.abs(c.values[inner]))) for c in curl(gradient(_smooth(g, 4))))
        # every node, boundary stencils included; exactness on the basis gives it on all quadratics
        stencil = _stencil_errors(g)
        # random real coefficients add rounding of order eps * |q| / h^2 (information only)
        rounding = _stencil_errors(g, np.random.default_rng(10).normal(size=len(_monomials())))
        lines.append(f"div curl = {dc:.2e}, curl grad = {cg:.2e} (interior, 33^3x5)")
        lines.append(f"monomial stencil error = {stencil:.2e}; scaled random monomials (information) {rounding:.2e}")
        v["ok"] = dc <= 1e-13 and cg <= 1e-13 and stencil <= 1e-12
    assert v["ok"] and v["elapsed"] < 10.0


# --- 3 -----------------------------------------------------------------------------


def test_discrete_fixed_point(capsys):
    with criterion(capsys, 3, "discrete fixed point", 30.0) as (lines, v):
        ok = True
        for name in ("taylor_green", "micropolar"):
            run = load(name)
            case = run.case
            s = exact_state(case)
            prob = problem_for(case)
            forcing = manufacture_discrete(case)
            out = vim_step(s, prob, IterationConfig(), forcing)
            change = max(norm_linf(b - a) for (_, a), (_, b) in zip(vector_fields(s), vector_fields(out)))
            _, rep = iterate(s, prob, IterationConfig(), forcing)
            lines.append(f"{name} {list(case.grid.shape)}: step change = {change:.2e}, {rep.status.value} after {rep.iterations}")
            ok = ok and change <= 1e-12 and rep.status is Status.CONVERGED and rep.iterations == 1
        v["ok"] = ok
    assert v["ok"] and v["elapsed"] < 30.0


# --- 4 -----------------------------------------------------------------------------


def test_degeneration_to_navier_stokes(capsys):
    with criterion(capsys, 4, "micropolar degeneration", 10.0) as (lines, v):
        rng = np.random.default_rng(2024)
        g = GridSpec.from_bounds(17, 17, 1, 5)
        mismatches = 0
        for _ in range(10):
            u = VectorField(*(ScalarField(g, rng.normal(size=g.shape)) for _ in range(3)))
            p = ScalarField(g, rng.normal(size=g.shape))
            f = VectorField(*(ScalarField(g, rng.normal(size=g.shape)) for _ in range(3)))
            nu = float(rng.uniform(0.01, 5.0))
            prm = FluidParams(nu, nu_r=0.0, c0=float(rng.uniform(0.1, 2)), ca=0.5, cd=0.5)
            mp_state = FlowState(u, p, VectorField.zeros(g))
            ns_state = FlowState(u, p)
            pairs = list(zip(mp_momentum_residual(mp_state, f, prm), ns_momentum_residual(ns_state, f, FluidParams(nu))))
            pairs.append((mp_pressure_residual(mp_state, f, prm), ns_pressure_residual(ns_state, f)))
            mismatches += sum(not np.array_equal(a.values, b.values) for a, b in pairs)
        lines.append(f"10 random states, bit mismatches = {mismatches}")
        v["ok"] = mismatches == 0
    assert v["ok"]


# --- 5 -----------------------------------------------------------------------------


def test_truncation_order(capsys):
    with criterion(capsys, 5, "truncation order", 60.0) as (lines, v):
        base = load("taylor_green").case
        g = base.grid
        coarse = GridSpec.from_bounds(17, 17, 1, 5, x1=g.bounds(X1), x2=g.bounds(X2), t=g.bounds(T))
        case = dataclasses.replace(base, grid=coarse, levels=3)
        study = truncation_study(case, "linf")
        mom = study.orders["momentum"]
        prs = study.orders["pressure"]
        norms = ", ".join(f"{n['momentum']:.3e}" for n in study.norms)
        lines.append(f"momentum linf {norms}, orders {', '.join(f'{o:.3f}' for o in mom)}")
        lines.append(f"pressure orders (information) {', '.join(f'{o:.3f}' for o in prs)}")
        decreasing = all(b["momentum"] < a["momentum"] for a, b in zip(study.norms, study.norms[1:]))
        v["ok"] = decreasing and min(mom) >= 1.9
    assert v["ok"] and v["elapsed"] < 60.0


# --- 6 -----------------------------------------------------------------------------


def test_contraction_diffusion_dominated(capsys):
    with criterion(capsys, "6a", "contraction, nu = 10", 60.0) as (lines, v):
        run = load("diffusion")
        case = run.case
        cfg = dataclasses.replace(run.iteration, max_iters=20)
        _, rep = iterate(perturbed_state(case, fraction=run.perturbation), run.problem, cfg)
        ds = [r.d for r in rep.records]
        monotone = all(b <= a for a, b in zip(ds[2:], ds[3:]))
        try:
            gb = estimate_contraction(rep)
            gtext = f"{gb:.3g}"
        except Exception as err:  # too few iterations for an estimate
            gb, gtext = math.inf, f"undefined ({err})"
        lines.append(f"{rep.status.value} after {rep.iterations}, gamma_bar = {gtext}, monotone for n >= 2 = {monotone}")
        lines.append("d_n = " + ", ".join(f"{d:.3g}" for d in ds))
        v["ok"] = monotone and gb < 1.0 and rep.iterations <= 20
    assert v["ok"]


def test_contraction_low_viscosity_diverges_cleanly(capsys):
    with criterion(capsys, "6b", "divergence detection, nu = 1e-3", 60.0) as (lines, v):
        run = load("low_viscosity")
        _, rep = iterate(perturbed_state(run.case, fraction=run.perturbation), run.problem, run.iteration)
        finite = all(math.isfinite(r.d) for r in rep.records)
        tail = rep.gammas[-rep.divergence_window :]
        lines.append(f"{rep.status.value} after {rep.iterations}, all d_n finite = {finite}")
        lines.append("gamma window = " + ", ".join(f"{g:.3g}" for g in tail))
        v["ok"] = rep.status is Status.DIVERGED and finite and all(g >= 1.0 for g in tail)
    assert v["ok"]


# --- 7 -----------------------------------------------------------------------------


def test_mms_solution_order(capsys):
    with criterion(capsys, 7, "MMS solution order", 120.0) as (lines, v):
        run = load("taylor_green")
        case = dataclasses.replace(run.case, levels=2)
        cfg = dataclasses.replace(run.iteration, tol=1e-10)
        with np.errstate(all="ignore"):
            res = mms_study(case, cfg, mode="symbolic", start="exact")
        for g, rep, err in zip(res.grids, res.reports, res.errors):
            lines.append(f"{list(g.shape)}: {rep.status.value} after {rep.iterations}, u linf error = {err['u']['linf']:.3e}")
        orders = res.orders.get("u", [])
        finite = orders and all(math.isfinite(o) for o in orders)
        lines.append("u order = " + (", ".join(f"{o:.3f}" for o in orders) if finite else "undefined"))
        converged = all(r.status is Status.CONVERGED for r in res.reports)
        v["ok"] = converged and bool(finite) and min(orders) >= 1.7
    assert v["ok"]


# --- 8 -----------------------------------------------------------------------------


def _tree(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_determinism_and_round_trip(capsys, tmp_path):
    with criterion(capsys, 8, "determinism and round trip", 60.0) as (lines, v):
        identical = True
        for cmd in (["solve", "--config", str(CASES / "micropolar.toml")],
                    ["mms", "--config", str(CASES / "taylor_green.toml"), "--mode", "discrete"],
                    ["solve", "--config", str(CASES / "low_viscosity.toml")]):
            trees = []
            for k in range(2):
                out = tmp_path / f"{cmd[0]}_{Path(cmd[2]).stem}_{k}"
                main([*cmd, "--out", str(out)])
                trees.append(_tree(out))
            identical = identical and trees[0] == trees[1] and len(trees[0]) > 0
        run = load("micropolar")
        s = perturbed_state(run.case, fraction=0.3)
        csv_exact = True
        for name, f in vector_fields(s):
            path = tmp_path / f"{name}.csv"
            write_field_csv(f, path)
            _, values = read_field_csv(path)
            csv_exact = csv_exact and values.tobytes() == f.values.ravel().tobytes()
        _, rep = iterate(s, run.problem, dataclasses.replace(run.iteration, max_iters=4))
        write_report(rep, tmp_path / "r.jsonl")
        records, _ = read_report(tmp_path / "r.jsonl")
        report_exact = [(r["d_u"], r["d_w"], r["d_p"]) for r in records] == [(r.d_u, r.d_w, r.d_p) for r in rep.records]
        lines.append(f"byte-identical output dirs = {identical}, CSV bit-exact = {csv_exact}, report bit-exact = {report_exact}")
        v["ok"] = identical and csv_exact and report_exact
    assert v["ok"]
