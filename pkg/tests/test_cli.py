"""Command-line interface, run reports and the bench harness."""

import json
import subprocess
import sys

import pytest

from opfrelax import cli
from opfrelax.cli import (EXIT_DATA, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, RunReport, bench_table,
                          config_hash, lookup_ref, run_case, run_command)
from opfrelax.conic import optimality_gap

REF = cli.bundled_refs()


def _json_out(capsys, argv):
    code = run_command(argv + ["--json", "-"])
    return code, json.loads(capsys.readouterr().out)


def _strip_volatile(report):
    report = dict(report)
    for key in ("timestamp", "timings"):
        report.pop(key, None)
    return report


# solve


def test_case9_chr_graph_gap_is_zero(capsys):
    ref = lookup_ref(REF, "case9")[0]
    code, rep = _json_out(capsys, ["solve", "case9.m", "--model", "chr", "--merge", "graph",
                                   "--ref-objective", repr(ref)])
    assert code == EXIT_OK
    assert rep["status"] == "optimal" and rep["variant"] == "CHR-C" and rep["merge"] == "graph"
    assert abs(rep["gap"]) < 1e-4
    assert rep["reference_source"] == "command line"


def test_case5_sdr_gap_from_refs_file(capsys, tmp_path):
    refs = tmp_path / "refs.json"
    refs.write_text(json.dumps({"case5": REF["case5"]}))
    code, rep = _json_out(capsys, ["solve", "case5.m", "--model", "sdr", "--refs", str(refs)])
    assert code == EXIT_OK
    assert rep["gap"] == pytest.approx(5.22, abs=0.1)
    assert rep["reference"] == REF["case5"]["objective"]


def test_report_fields_and_gap_recompute(capsys):
    code, rep = _json_out(capsys, ["solve", "case14", "--model", "e-chr-tlm-c", "--merge", "graph"])
    assert code == EXIT_OK
    for key in ("case", "variant", "merge", "lower_bound", "reference", "reference_source", "gap",
                "model", "cliques", "timings", "residuals", "version", "config_hash", "schema_version"):
        assert key in rep
    assert rep["cliques"]["post_merge"]["blocks"] <= rep["cliques"]["pre_merge"]["blocks"]
    assert {"build", "solve", "total"} <= set(rep["timings"])
    assert abs(optimality_gap(rep["lower_bound"], rep["reference"]) - rep["gap"]) <= 1e-12
    report = RunReport(**rep)
    assert report.recomputed_gap() == rep["gap"]
    assert rep["config_hash"] == config_hash(rep["config"])


def test_seed_determinism():
    a = run_case("case5", "qc-tlm", seed=3).to_json()
    b = run_case("case5", "qc-tlm", seed=3).to_json()
    assert _strip_volatile(a) == _strip_volatile(b)


def test_summary_line(capsys):
    assert run_command(["solve", "case3_lmbd", "--model", "sdr"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("pglib_opf_case3_lmbd SDR") and "gap=" in out


def test_polish_flag_gives_exact_recovery(capsys):
    code, rep = _json_out(capsys, ["solve", "case9", "--model", "sdr", "--polish"])
    assert code == EXIT_OK
    assert rep["recovery"]["exact"] and rep["recovery"]["balance_residual"] <= 1e-4


def test_export_sdpa(tmp_path, capsys):
    path = tmp_path / "case9.dat-s"
    assert run_command(["solve", "case9", "--model", "chr", "--export-sdpa", str(path)]) == EXIT_OK
    assert path.read_text().count("\n") > 10


def test_reference_lookup_variants():
    assert lookup_ref(REF, "case3_lmbd") == lookup_ref(REF, "pglib_opf_case3_lmbd")
    assert lookup_ref({"x": 7}, "x") == (7.0, "unknown")
    assert lookup_ref(REF, "nosuch") is None


def test_missing_reference_leaves_gap_empty(tmp_path):
    refs = tmp_path / "r.json"
    refs.write_text("{}")
    rep = run_case("case5", "sdr", refs=str(refs))
    assert rep.gap is None and rep.lower_bound is not None


# exit codes


@pytest.mark.parametrize("argv, code", [
    (["solve", "nosuch"], EXIT_DATA),
    (["parse", "nosuch.m"], EXIT_DATA),
    (["solve", "case5", "--model", "bogus"], EXIT_USAGE),
    (["solve", "case5", "--ref-objective", "1", "--refs", "x.json"], EXIT_USAGE),
    (["solve", "case5", "--ref-objective", "-5"], EXIT_DATA),
    (["solve", "case5", "--refs", "/nonexistent/refs.json"], EXIT_DATA),
    (["solve", "case5", "--coeffs", "/nonexistent/c.json"], EXIT_DATA),
    (["frobnicate"], EXIT_USAGE),
    ([], EXIT_USAGE),
    (["--version"], EXIT_OK),
])
def test_exit_codes(argv, code, capsys):
    assert run_command(argv) == code


def test_solver_failure_exit(monkeypatch, capsys):
    from opfrelax.conic import Solution

    class Broken:
        name = "broken"

        def solve(self, p):
            return Solution("failed", float("nan"), None, backend="broken")

    monkeypatch.setattr(cli, "make_backend", lambda name, tol: Broken())
    assert run_command(["solve", "case5", "--model", "sdr"]) == EXIT_SOLVER


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "opfrelax.cli", "parse", "case9"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("case9: 9 buses")


# parse / tighten / decompose


def test_parse_json(capsys):
    code, out = _json_out(capsys, ["parse", "case9"])
    assert code == EXIT_OK and len(out["buses"]) == 9


def test_tighten_json(capsys):
    code, out = _json_out(capsys, ["tighten", "case3_lmbd"])
    assert code == EXIT_OK
    assert out["case"] == "pglib_opf_case3_lmbd" and len(out["branches"]) == 3
    row = out["branches"][0]
    assert {"from", "to", "branch"} <= set(row)


def test_decompose_graph_reduces_blocks(capsys):
    code, out = _json_out(capsys, ["decompose", "case118.m", "--merge", "graph"])
    assert code == EXIT_OK
    assert out["post_merge"]["blocks"] < out["pre_merge"]["blocks"]
    assert len(out["blocks"]) == out["post_merge"]["blocks"]
    assert out["estimated_time_post"] <= out["estimated_time_pre"]


def test_decompose_tree_kmax(capsys):
    code, out = _json_out(capsys, ["decompose", "case118", "--merge", "tree", "--kmax", "60"])
    assert code == EXIT_OK and out["post_merge"]["blocks"] <= out["pre_merge"]["blocks"]


def test_calibrate_writes_coefficients(tmp_path, capsys):
    path = tmp_path / "coeffs.json"
    code = run_command(["calibrate", "--out", str(path), "--sizes", "2", "3", "4", "6",
                        "--overlaps", "0", "1", "--blocks", "4", "--repeats", "1"])
    assert code == EXIT_OK
    data = json.loads(path.read_text())
    assert all(data[k] >= 0 for k in ("kappa", "chi", "mu", "psi"))
    assert run_command(["decompose", "case14", "--merge", "graph", "--coeffs", str(path)]) == EXIT_OK


# bench


def test_bench_empty_suite(tmp_path, capsys):
    suite = tmp_path / "s.json"
    suite.write_text("[]")
    assert run_command(["bench", str(suite)]) == EXIT_OK
    assert "empty suite" in capsys.readouterr().out


def test_bench_case5_case57(tmp_path, capsys):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps([{"case": "case5", "variants": ["sdr", "e-chr-tlm-c"]},
                                 {"case": "case57", "variants": ["sdr", "e-chr-tlm-c"]}]))
    out_json = tmp_path / "r.json"
    assert run_command(["bench", str(suite), "--json", str(out_json)]) == EXIT_OK
    rows = json.loads(out_json.read_text())["rows"]
    assert len(rows) == 4
    assert [r["case"] for r in rows] == ["case5", "case5", "case57", "case57"]
    for r in rows:
        if r["case"] == "case57":
            assert r["gap"] <= 0.01
    table = capsys.readouterr().out
    assert "average" in table and "5.22" in table


def test_bench_failed_row_sets_exit(tmp_path, capsys):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps(["case5", {"case": "nosuch", "variant": "chr"}]))
    out_json = tmp_path / "r.json"
    assert run_command(["bench", str(suite), "--json", str(out_json)]) == EXIT_SOLVER
    rows = json.loads(out_json.read_text())["rows"]
    assert rows[0]["status"] == "optimal"
    assert rows[1]["status"] == "failed" and "nosuch" in rows[1]["error"]


def test_bench_repeatable(tmp_path):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps([{"case": "case3_lmbd", "variants": ["sdr", "qc"]}]))
    a, _ = cli.run_bench(str(suite), {"seed": 1})
    b, _ = cli.run_bench(str(suite), {"seed": 1}, jobs=2)
    assert [r["gap"] for r in a] == [r["gap"] for r in b]
    assert [_strip_volatile(r) for r in a] == [_strip_volatile(r) for r in b]


def test_bench_bad_suite(tmp_path, capsys):
    suite = tmp_path / "s.json"
    suite.write_text('{"case": "case5"}')
    assert run_command(["bench", str(suite)]) == EXIT_DATA
    assert run_command(["bench", str(tmp_path / "missing.json")]) == EXIT_DATA


def test_bench_table_rounds_and_averages():
    rows = [{"group": "g", "case": "a", "variant": "SDR", "merge": "none", "lower_bound": 1.0,
             "reference": 2.0, "gap": 5.216, "status": "optimal", "timings": {"total": 0.5}},
            {"group": "g", "case": "b", "variant": "SDR", "merge": "none", "lower_bound": None,
             "reference": None, "gap": 0.004, "status": "optimal", "timings": {}}]
    text = bench_table(rows)
    assert "5.22" in text and "0.00" in text
    assert "2.61" in text.splitlines()[-1]
