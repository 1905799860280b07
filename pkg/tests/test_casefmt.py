"""Case parsing, per-unit data and admittance construction."""

import math
import re
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opfrelax.casefmt import (DEFAULT_ANGLE_LIMIT, JSON_SCHEMA_VERSION, CaseFormatError,
                              branch_block, build_admittance, bundled_cases, dump_case,
                              load_case, network_to_json, parse_case)

from conftest import network

TWO_BUS = """
function mpc = twobus
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 100 100 100 0 0 1 -60 60;
];
mpc.gencost = [
  2 0 0 3 0.01 10 0;
];
"""


def _case_text(name):
    return (resources.files("opfrelax") / "data" / "cases" / f"{name}.m").read_text()


def _count_rows(text, field):
    """Independent row count: lines inside ``mpc.<field> = [ ... ];`` that hold numbers."""
    body = re.search(rf"mpc\.{field}\s*=\s*\[(.*?)\];", text, re.S).group(1)
    rows = [ln.split("%")[0].strip() for ln in body.splitlines()]
    return sum(1 for r in rows if r)


@pytest.mark.parametrize("name,buses,branches,gens", [("case5", 5, 6, 5), ("case9", 9, 9, 3)])
def test_counts_match_line_count_oracle(name, buses, branches, gens):
    text = _case_text(name)
    assert (_count_rows(text, "bus"), _count_rows(text, "branch"), _count_rows(text, "gen")) == \
        (buses, branches, gens)
    net = load_case(name)
    assert (net.n_bus, len(net.branches), len(net.generators)) == (buses, branches, gens)


def test_minimal_two_bus_case():
    net = parse_case(TWO_BUS)
    assert net.name == "twobus"
    assert net.ref_bus == 1
    assert net.n_bus == 2 and len(net.branches) == 1 and len(net.generators) == 1
    br = net.branches[0]
    assert br.ang_min == pytest.approx(-math.pi / 3) and br.ang_max == pytest.approx(math.pi / 3)
    assert net.generators[0].cost == (0.01, 10.0, 0.0)


def test_every_bundled_case_parses():
    names = bundled_cases()
    assert {"case5", "case9", "case57", "case118", "pglib_opf_case3_lmbd"} <= set(names)
    for name in names:
        net = load_case(name)
        assert net.base_mva > 0
        assert all(0 < b.v_min <= b.v_max for b in net.buses)


@pytest.mark.parametrize("mutate,message", [
    (lambda t: t.replace("mpc.gencost", "mpc.gencostx"), "missing required field mpc.gencost"),
    (lambda t: t.replace("mpc.baseMVA = 100", "mpc.baseMVA = 0"), "zero base MVA"),
    (lambda t: t.replace("1 2 0.01 0.1", "1 7 0.01 0.1"), "bus"),
    (lambda t: t.replace("2 0 0 3 0.01 10 0", "1 0 0 2 0 0 100 10"), "piecewise"),
])
def test_data_errors(mutate, message):
    with pytest.raises(CaseFormatError, match=message):
        parse_case(mutate(TWO_BUS))


def test_syntax_error_reports_position():
    bad = TWO_BUS.replace("2 1 50 10", "2 1 5x0 10")
    with pytest.raises(CaseFormatError) as err:
        parse_case(bad)
    assert err.value.line is not None and err.value.column is not None
    assert bad.splitlines()[err.value.line - 1].strip().startswith("2 1 5x0")


def test_admittance_pure_reactance():
    net = parse_case(TWO_BUS.replace("0.01 0.1 0.02", "0 0.1 0"))
    yff, yft, ytf, ytt = branch_block(net.branches[0])
    assert yff == pytest.approx(-10j) and ytt == pytest.approx(-10j)
    assert yft == pytest.approx(10j) and ytf == pytest.approx(10j)


@given(r=st.floats(0.0, 0.5), x=st.floats(0.01, 1.0), b=st.floats(0.0, 0.5))
@settings(max_examples=50, deadline=None)
def test_untapped_branch_is_symmetric(r, x, b):
    net = parse_case(TWO_BUS.replace("0.01 0.1 0.02", f"{r!r} {x!r} {b!r}"))
    _, yft, ytf, _ = branch_block(net.branches[0])
    assert yft == ytf


def test_degenerate_series_element():
    with pytest.raises(CaseFormatError, match="zero series impedance"):
        parse_case(TWO_BUS.replace("0.01 0.1 0.02", "0 0 0.02"))


# Bus admittance matrix of case9 from an independent power-flow tool (upper triangle).
CASE9_YBUS = [
    (0, 0, -17.36111111111111j), (0, 3, 17.36111111111111j), (1, 1, -16j), (1, 7, 16j),
    (2, 2, -17.064846416382252j), (2, 5, 17.064846416382252j),
    (3, 3, 3.3073789620253065 - 39.30888872611897j), (3, 4, -1.9421912487147266 + 10.510682051867931j),
    (3, 8, -1.36518771331058 + 11.60409556313993j), (4, 4, 3.2242003871388416 - 15.840927014229457j),
    (4, 5, -1.2820091384241148 + 5.588244962361526j), (5, 5, 2.437096619314212 - 32.153861805106956j),
    (5, 6, -1.155087480890097 + 9.784270426363173j), (6, 6, 2.772209954136233 - 23.30324902327162j),
    (6, 7, -1.6171224732461358 + 13.697978596908444j), (7, 7, 2.804726852537284 - 35.44561313021703j),
    (7, 8, -1.1876043792911484 + 5.975134533308591j), (8, 8, 2.5527920926017282 - 17.338230096448523j),
]


def test_case9_ybus_matches_reference_tool():
    Y = build_admittance(network("case9")).ybus.toarray()
    ref = np.zeros((9, 9), dtype=complex)
    for i, j, v in CASE9_YBUS:
        ref[i, j] = ref[j, i] = v
    assert np.abs(Y - ref).max() < 1e-10


def test_parallel_branches_aggregate():
    text = TWO_BUS.replace(
        "mpc.bus = [", "mpc.bus = [\n  3 1 0 0 0 0 1 1 0 230 1 1.1 0.9;").replace(
        "1 2 0.01 0.1 0.02 100 100 100 0 0 1 -60 60;",
        "1 2 0.01 0.1 0.02 100 100 100 0 0 1 -60 60;\n"
        "  1 2 0.02 0.3 0.01 100 100 100 0 0 1 -60 60;\n"
        "  2 3 0.01 0.2 0 100 100 100 0 0 1 -60 60;")
    net = parse_case(text)
    adm = build_admittance(net)
    idx = net.bus_index
    Y = adm.ybus.toarray()
    expect = adm.blocks[0][1] + adm.blocks[1][1]
    assert Y[idx[1], idx[2]] == pytest.approx(expect, abs=1e-14)
    assert len(net.branches) == 3


@pytest.mark.parametrize("name", ["case9", "case30", "case118", "pglib_opf_case3_lmbd"])
def test_round_trip(name):
    net = load_case(name)
    assert parse_case(dump_case(net)) == net


@pytest.mark.parametrize("name", ["case9", "case57"])
def test_per_unit_loads(name):
    net = load_case(name)
    for b, s in zip(net.buses, net.load_pu()):
        assert s.real * net.base_mva == pytest.approx(b.Pd, rel=1e-12, abs=1e-12)
        assert s.imag * net.base_mva == pytest.approx(b.Qd, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("lo,hi", [(0, 0), (-360, 360)])
def test_missing_angle_limits_default(lo, hi):
    net = parse_case(TWO_BUS.replace("-60 60", f"{lo} {hi}"))
    br = net.branches[0]
    assert br.ang_min == -DEFAULT_ANGLE_LIMIT and br.ang_max == DEFAULT_ANGLE_LIMIT


def test_json_dump_is_versioned():
    out = network_to_json(network("case9"))
    assert out["schema_version"] == JSON_SCHEMA_VERSION
    assert len(out["buses"]) == 9 and len(out["branches"]) == 9
