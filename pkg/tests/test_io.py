import json

import numpy as np
import pytest

from vimflow import expr as ex
from vimflow.errors import ConfigError, IoError
from vimflow.grid import GridSpec, ScalarField
from vimflow.io import (
    CSV_HEADER,
    RunManifest,
    parse_config,
    read_config,
    read_field_csv,
    read_report,
    report_lines,
    write_field_csv,
    write_report,
)
from vimflow.systems import ProblemKind
from vimflow.vim import ConvergenceReport, IterationRecord, Status

MINIMAL = """
[grid]
n = [9, 9, 1, 3]

[params]
nu = 0.1
"""


def report(ds, status=Status.MAX_ITERS):
    recs = [IterationRecord(n, d, None, d / 2, d, ds[n] / ds[n - 1] if n else None) for n, d in enumerate(ds)]
    return ConvergenceReport(recs, status, divergence_window=5)


# --- fields --------------------------------------------------------------------


def test_zero_field_csv(tmp_path):
    g = GridSpec.from_bounds(2, 1, 1, 1)
    path = tmp_path / "z.csv"
    write_field_csv(ScalarField(g, np.zeros(g.shape)), path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1:] == ["0,0,0,0,0", "1,0,0,0,0"]


def test_csv_round_trip_is_bit_exact(tmp_path):
    g = GridSpec.from_bounds(5, 4, 3, 2, x1=(-1.3, 0.7))
    rng = np.random.default_rng(7)
    f = ScalarField(g, rng.normal(size=g.shape) * 10.0 ** rng.integers(-200, 200, g.shape))
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    coords, values = read_field_csv(path)
    assert values.tobytes() == f.values.ravel().tobytes()
    mesh = np.meshgrid(*[g.coords(a) for a in range(4)], indexing="ij")
    assert np.array_equal(coords, np.stack([m.ravel() for m in mesh], axis=1))


def test_csv_slice_selection(tmp_path):
    g = GridSpec.from_bounds(3, 3, 1, 4)
    f = ex.eval_on_grid(ex.parse("x1 + 10*t"), g)
    path = tmp_path / "s.csv"
    write_field_csv(f, path, select={"t": -1})
    coords, values = read_field_csv(path)
    assert len(values) == 9
    assert np.all(coords[:, 3] == 1.0)
    assert np.array_equal(values, coords[:, 0] + 10.0)
    with pytest.raises(IndexError):
        write_field_csv(f, path, select={"t": 4})


def test_csv_unwritable_path(tmp_path):
    g = GridSpec.from_bounds(2, 1, 1, 1)
    with pytest.raises(IoError):
        write_field_csv(ScalarField(g, np.zeros(g.shape)), tmp_path / "missing" / "f.csv")
    with pytest.raises(IoError):
        read_field_csv(tmp_path / "nope.csv")


# --- reports -------------------------------------------------------------------


def test_empty_report_is_summary_only():
    lines = report_lines(ConvergenceReport([], Status.NON_FINITE, message="boom"))
    assert len(lines) == 1
    summary = json.loads(lines[0])
    assert summary["summary"] is True and summary["status"] == "NonFinite"
    assert summary["gamma_bar"] is None


def test_report_lines_and_round_trip(tmp_path):
    ds = [0.4, 0.2, 0.1]
    rep = report(ds, Status.CONVERGED)
    lines = report_lines(rep)
    assert len(lines) == 4
    path = tmp_path / "r.jsonl"
    write_report(rep, path)
    records, summary = read_report(path)
    assert [r["d_u"] for r in records] == ds
    assert [r["status"] for r in records] == ["continue", "continue", "Converged"]
    assert records[0]["gamma"] is None and records[2]["gamma"] == 0.5
    assert summary["iterations"] == 3 and summary["gamma_bar"] == pytest.approx(0.5)


def test_report_without_summary_is_rejected(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"n": 0}\n')
    with pytest.raises(IoError):
        read_report(path)


# --- config --------------------------------------------------------------------


def test_minimal_config_defaults():
    run = parse_config(MINIMAL)
    assert run.iteration.relaxation == 1.0
    assert run.iteration.norm_kind == "l2"
    assert run.problem.kind is ProblemKind.NAVIER_STOKES
    assert run.problem.grid.shape == (9, 9, 1, 3)
    assert run.case is None and run.start == "zero"


def test_missing_nu_names_the_key():
    with pytest.raises(ConfigError) as info:
        parse_config("[grid]\nn = [9, 9, 1, 3]\n[params]\n")
    assert info.value.key == "nu"
    assert "nu" in str(info.value)


def test_duplicate_key_reports_a_line():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "nu = 0.2\n")
    assert info.value.line == 7


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "viscosity = 1\n")
    assert info.value.line == 7 and info.value.key == "viscosity"
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "[extra]\n")
    assert info.value.line == 7


def test_bad_expression_is_positioned():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + '[forcing]\nf1 = "sin(x1"\n')
    assert info.value.line == 8 and "f1" in str(info.value)


@pytest.mark.parametrize(
    "extra",
    [
        "[iteration]\nrelaxation = 2.0\n",
        "[iteration]\ndirection = \"t\"\n",
        "[boundary]\nw1 = \"1\"\n",
        "[case]\nu1 = \"x1\"\n[initial]\nu1 = \"0\"\n",
        "[case]\nstart = \"random\"\n",
    ],
)
def test_invalid_configs(extra):
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + extra)


def test_case_config_builds_manufactured_problem():
    run = parse_config(MINIMAL + '[case]\nname = "lin"\nu1 = "x2"\np = "0"\nlevels = 2\n')
    assert run.case.name == "lin" and run.case.levels == 2
    assert run.start == "exact"
    # a steady shear needs no forcing
    assert all(ex.eval_point(f, 0.3, 0.6, 0.0, 0.5) == 0.0 for f in run.problem.forcing)


def test_read_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "none.toml")


# --- manifest --------------------------------------------------------------------


def test_manifest_hash_is_deterministic(tmp_path):
    a, b = parse_config(MINIMAL), parse_config("[params]\nnu = 0.1\n[grid]\nn = [9, 9, 1, 3]\n")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != parse_config(MINIMAL.replace("0.1", "0.2")).config_hash()
    m = RunManifest.from_report("solve", a, report([1.0, 0.5]))
    path = tmp_path / "m.json"
    m.write(path)
    data = json.loads(path.read_text())
    assert data["config_sha256"] == a.config_hash()
    assert data["iterations"] == 2 and data["gamma_bar"] == pytest.approx(0.5)
    assert "timestamps" not in data
