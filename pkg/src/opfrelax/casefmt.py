"""MATPOWER case files: parsing, validation, serialization and branch admittances.

Every element keeps the raw numeric row it was parsed from, so a network can be
written back out and re-parsed into an identical object.  Derived quantities
(per-unit loads, radian angle limits, default angle bounds) are recomputed from
the raw rows on every parse.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

JSON_SCHEMA_VERSION = 1

#: Angle bound substituted when a file gives none (or a degenerate one).
DEFAULT_ANGLE_LIMIT = math.pi / 2 - 1e-6

PQ, PV, REF, ISOLATED = 1, 2, 3, 4

_REQUIRED = ("baseMVA", "bus", "gen", "branch", "gencost")


class CaseFormatError(ValueError):
    """Raised for malformed or unsupported case data."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class Bus:
    id: int
    type: int
    Pd: float
    Qd: float
    Gs: float
    Bs: float
    v_min: float
    v_max: float
    raw: tuple[float, ...] = field(repr=False)


@dataclass(frozen=True)
class Generator:
    bus: int
    P_min: float
    P_max: float
    Q_min: float
    Q_max: float
    status: int
    cost: tuple[float, float, float]
    raw: tuple[float, ...] = field(repr=False)
    raw_cost: tuple[float, ...] = field(repr=False)

    @property
    def in_service(self) -> bool:
        return self.status > 0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_ch: float
    rate_a: float
    tap: float
    shift: float
    status: int
    ang_min: float
    ang_max: float
    raw: tuple[float, ...] = field(repr=False)

    @property
    def in_service(self) -> bool:
        return self.status > 0

    @property
    def limited(self) -> bool:
        return self.rate_a > 0


@dataclass(frozen=True)
class Network:
    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]
    ref_bus: int

    def __post_init__(self):
        _validate(self)

    # Convenience views used throughout the model builders.  Buses are indexed
    # by their position in ``buses``; out-of-service elements are skipped.

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def active_generators(self) -> list[tuple[int, Generator]]:
        return [(k, g) for k, g in enumerate(self.generators) if g.in_service]

    def active_branches(self) -> list[tuple[int, Branch]]:
        return [(k, br) for k, br in enumerate(self.branches) if br.in_service]

    def load_pu(self) -> np.ndarray:
        """Complex bus loads in per unit."""
        return np.array([complex(b.Pd, b.Qd) for b in self.buses]) / self.base_mva

    def shunt_pu(self) -> np.ndarray:
        return np.array([complex(b.Gs, b.Bs) for b in self.buses]) / self.base_mva

    def vmin(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    def vmax(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    def gen_limits_pu(self, gen: Generator) -> tuple[float, float, float, float]:
        s = self.base_mva
        return gen.P_min / s, gen.P_max / s, gen.Q_min / s, gen.Q_max / s

    def cost_pu(self, gen: Generator) -> tuple[float, float, float]:
        """Cost coefficients rescaled so that P is in per unit."""
        a, b, c = gen.cost
        s = self.base_mva
        return a * s * s, b * s, c

    def rate_pu(self, br: Branch) -> float:
        return br.rate_a / self.base_mva


def _validate(net: Network) -> None:
    if not net.base_mva > 0:
        raise CaseFormatError(f"base MVA must be positive, got {net.base_mva}")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise CaseFormatError("duplicate bus ids")
    known = set(ids)
    refs = [b.id for b in net.buses if b.type == REF]
    if len(refs) != 1:
        raise CaseFormatError(f"expected exactly one reference bus, found {len(refs)}")
    if net.ref_bus != refs[0]:
        raise CaseFormatError("ref_bus does not match the type-3 bus")
    for b in net.buses:
        if not 0 < b.v_min <= b.v_max:
            raise CaseFormatError(f"bus {b.id}: invalid voltage bounds [{b.v_min}, {b.v_max}]")
    for k, g in enumerate(net.generators):
        if g.bus not in known:
            raise CaseFormatError(f"generator {k} references unknown bus {g.bus}")
        if g.in_service and (g.P_min > g.P_max or g.Q_min > g.Q_max):
            raise CaseFormatError(f"generator {k}: inverted capacity bounds")
    for k, br in enumerate(net.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseFormatError(f"branch {k} references unknown bus {end}")
        if br.r == 0 and br.x == 0:
            raise CaseFormatError(f"branch {k}: zero series impedance")
        if not br.tap > 0:
            raise CaseFormatError(f"branch {k}: nonpositive tap ratio")
        if br.rate_a < 0 or not math.isfinite(br.rate_a):
            raise CaseFormatError(f"branch {k}: invalid rating {br.rate_a}")


# --------------------------------------------------------------------------
# parsing

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:Inf|inf|NaN|nan)")


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        in_str = False
        cut = len(line)
        for k, ch in enumerate(line):
            if ch == "'":
                in_str = not in_str
            elif ch == "%" and not in_str:
                cut = k
                break
        # keep length so that offsets map back to the original columns
        out.append(line[:cut] + " " * (len(line) - cut))
    return "\n".join(out)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _parse_matrix(text: str, start: int) -> tuple[list[list[float]], int]:
    """Parse ``[ ... ]`` starting at ``text[start] == '['``; return rows and end offset."""
    end = text.find("]", start)
    if end < 0:
        raise CaseFormatError("unterminated matrix", *_position(text, start))
    rows: list[list[float]] = []
    row: list[float] = []
    k = start + 1
    while k < end:
        ch = text[k]
        if ch in " \t\r,":
            k += 1
        elif ch in ";\n":
            if row:
                rows.append(row)
                row = []
            k += 1
        elif ch == "." and text.startswith("...", k):
            # MATLAB line continuation
            nl = text.find("\n", k)
            k = end if nl < 0 else nl + 1
        else:
            m = _NUMBER.match(text, k)
            if m is None:
                raise CaseFormatError(f"unexpected character {ch!r} in matrix", *_position(text, k))
            row.append(float(m.group(0)))
            k = m.end()
    if row:
        rows.append(row)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise CaseFormatError("ragged matrix rows", *_position(text, start))
    return rows, end + 1


def _parse_fields(text: str) -> dict[str, object]:
    clean = _strip_comments(text)
    fields: dict[str, object] = {}
    for m in _ASSIGN.finditer(clean):
        name = m.group(1)
        k = m.end()
        if k < len(clean) and clean[k] == "[":
            rows, _ = _parse_matrix(clean, k)
            fields[name] = rows
        elif k < len(clean) and clean[k] in "'\"":
            close = clean.find(clean[k], k + 1)
            fields[name] = clean[k + 1:close]
        elif k < len(clean) and clean[k] == "{":
            continue  # cell arrays (bus_name etc.) are not needed
        else:
            num = _NUMBER.match(clean, k)
            if num is None:
                raise CaseFormatError(f"cannot parse value of mpc.{name}", *_position(clean, k))
            fields[name] = float(num.group(0))
    return fields


def _cost_from_row(row: list[float], k: int) -> tuple[float, float, float]:
    model = int(row[0])
    if model == 1:
        raise CaseFormatError(f"gencost row {k}: piecewise-linear cost models are not supported")
    if model != 2:
        raise CaseFormatError(f"gencost row {k}: unknown cost model {model}")
    n = int(row[3])
    coeffs = row[4:4 + n]
    if len(coeffs) != n:
        raise CaseFormatError(f"gencost row {k}: expected {n} coefficients")
    # highest degree first; only degree <= 2 is supported
    if n > 3 and any(c != 0 for c in coeffs[: n - 3]):
        raise CaseFormatError(f"gencost row {k}: polynomial degree above 2 is not supported")
    padded = [0.0] * max(0, 3 - n) + list(coeffs[-3:]) if n else [0.0, 0.0, 0.0]
    a, b, c = padded
    return float(a), float(b), float(c)


def _angle_limits(angmin: float, angmax: float) -> tuple[float, float]:
    degenerate = (angmin == 0 and angmax == 0)
    lo = -DEFAULT_ANGLE_LIMIT if degenerate or abs(angmin) >= 360 else math.radians(angmin)
    hi = DEFAULT_ANGLE_LIMIT if degenerate or abs(angmax) >= 360 else math.radians(angmax)
    lo = max(lo, -DEFAULT_ANGLE_LIMIT)
    hi = min(hi, DEFAULT_ANGLE_LIMIT)
    return lo, hi


def parse_case(text: str, name: str = "case") -> Network:
    """Parse MATPOWER case text into a validated :class:`Network`."""
    fields = _parse_fields(text)
    for req in _REQUIRED:
        if req not in fields:
            raise CaseFormatError(f"missing required field mpc.{req}")
    base = fields["baseMVA"]
    if not isinstance(base, float):
        raise CaseFormatError("mpc.baseMVA must be a scalar")
    if base == 0:
        raise CaseFormatError("zero base MVA")
    fn = re.search(r"function\s+\w+\s*=\s*(\w+)", text)
    if fn:
        name = fn.group(1)

    bus_rows, gen_rows = fields["bus"], fields["gen"]
    br_rows, cost_rows = fields["branch"], fields["gencost"]
    for label, rows, width in (("bus", bus_rows, 13), ("gen", gen_rows, 10),
                               ("branch", br_rows, 11), ("gencost", cost_rows, 5)):
        if not isinstance(rows, list) or (rows and len(rows[0]) < width):
            raise CaseFormatError(f"mpc.{label} must have at least {width} columns")
    if len(cost_rows) < len(gen_rows):
        raise CaseFormatError("mpc.gencost has fewer rows than mpc.gen")

    buses = tuple(
        Bus(id=int(r[0]), type=int(r[1]), Pd=r[2], Qd=r[3], Gs=r[4], Bs=r[5],
            v_min=r[12], v_max=r[11], raw=tuple(r))
        for r in bus_rows
    )
    gens = tuple(
        Generator(bus=int(r[0]), P_min=r[9], P_max=r[8], Q_min=r[4], Q_max=r[3],
                  status=int(r[7]), cost=_cost_from_row(cost_rows[k], k),
                  raw=tuple(r), raw_cost=tuple(cost_rows[k]))
        for k, r in enumerate(gen_rows)
    )
    branches = []
    for r in br_rows:
        angmin = r[11] if len(r) > 11 else -360.0
        angmax = r[12] if len(r) > 12 else 360.0
        lo, hi = _angle_limits(angmin, angmax)
        branches.append(Branch(
            from_bus=int(r[0]), to_bus=int(r[1]), r=r[2], x=r[3], b_ch=r[4],
            rate_a=r[5], tap=r[8] if r[8] != 0 else 1.0, shift=math.radians(r[9]),
            status=int(r[10]), ang_min=lo, ang_max=hi, raw=tuple(r)))
    refs = [b.id for b in buses if b.type == REF]
    if len(refs) != 1:
        raise CaseFormatError(f"expected exactly one reference bus, found {len(refs)}")
    return Network(name=name, base_mva=base, buses=buses, generators=gens,
                   branches=tuple(branches), ref_bus=refs[0])


def _fmt_row(row: tuple[float, ...]) -> str:
    return "\t".join(repr(float(v)) if not float(v).is_integer() else str(int(v)) for v in row)


def dump_case(net: Network) -> str:
    """Serialize back to MATPOWER text; ``parse_case(dump_case(n)) == n``."""
    lines = [f"function mpc = {net.name}", "mpc.version = '2';",
             f"mpc.baseMVA = {net.base_mva!r};", "", "mpc.bus = ["]
    lines += [f"\t{_fmt_row(b.raw)};" for b in net.buses]
    lines += ["];", "", "mpc.gen = ["]
    lines += [f"\t{_fmt_row(g.raw)};" for g in net.generators]
    lines += ["];", "", "mpc.branch = ["]
    lines += [f"\t{_fmt_row(br.raw)};" for br in net.branches]
    lines += ["];", "", "mpc.gencost = ["]
    lines += [f"\t{_fmt_row(g.raw_cost)};" for g in net.generators]
    lines += ["];", ""]
    return "\n".join(lines)


def network_to_json(net: Network) -> dict:
    return {
        "schema_version": JSON_SCHEMA_VERSION,
        "name": net.name,
        "base_mva": net.base_mva,
        "ref_bus": net.ref_bus,
        "buses": [{"id": b.id, "type": b.type, "Pd": b.Pd, "Qd": b.Qd, "Gs": b.Gs,
                   "Bs": b.Bs, "v_min": b.v_min, "v_max": b.v_max} for b in net.buses],
        "generators": [{"bus": g.bus, "P_min": g.P_min, "P_max": g.P_max, "Q_min": g.Q_min,
                        "Q_max": g.Q_max, "status": g.status, "cost": list(g.cost)}
                       for g in net.generators],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
                      "b_ch": br.b_ch, "tap": br.tap, "shift": br.shift, "rate_a": br.rate_a,
                      "ang_min": br.ang_min, "ang_max": br.ang_max, "status": br.status}
                     for br in net.branches],
    }


# --------------------------------------------------------------------------
# bundled cases

_ALIASES = {
    "case3_lmbd": "pglib_opf_case3_lmbd",
    "case5_pjm": "pglib_opf_case5_pjm",
}


def bundled_cases() -> list[str]:
    root = resources.files("opfrelax") / "data" / "cases"
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def load_case(name_or_path: str | Path) -> Network:
    """Load a case from a file path or by bundled name (``case9``, ``case9.m``, ``case3_lmbd``...)."""
    path = Path(name_or_path)
    if path.suffix == ".m" and path.exists():
        return parse_case(path.read_text(), name=path.stem)
    key = str(name_or_path)
    if path.suffix == ".m" and path.parent == Path("."):
        key = path.stem
    key = _ALIASES.get(key, key)
    res = resources.files("opfrelax") / "data" / "cases" / f"{key}.m"
    if not res.is_file():
        raise FileNotFoundError(f"no case file or bundled case named {name_or_path!r}")
    return parse_case(res.read_text(), name=key)


# --------------------------------------------------------------------------
# admittance


@dataclass(frozen=True)
class AdmittanceModel:
    """Per-branch pi-model blocks and the aggregated bus admittance matrix.

    ``blocks[k]`` is ``(Y_ff, Y_ft, Y_tf, Y_tt)`` for branch ``k`` (zeros when the
    branch is out of service).  Bus indices follow ``Network.buses`` order.
    """

    blocks: np.ndarray      # shape (n_branch, 4), complex
    shunts: np.ndarray      # shape (n_bus,), complex, per unit
    ybus: sp.csr_matrix

    def pattern(self) -> set[tuple[int, int]]:
        coo = self.ybus.tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j}


def branch_block(br: Branch) -> tuple[complex, complex, complex, complex]:
    if br.r == 0 and br.x == 0:
        raise CaseFormatError("degenerate series element (r = x = 0)")
    y = 1.0 / complex(br.r, br.x)
    ytt = y + 0.5j * br.b_ch
    yff = ytt / br.tap**2
    yft = -y / (br.tap * np.exp(-1j * br.shift))
    ytf = -y / (br.tap * np.exp(1j * br.shift))
    return complex(yff), complex(yft), complex(ytf), complex(ytt)


def build_admittance(net: Network) -> AdmittanceModel:
    idx = net.bus_index
    n = net.n_bus
    blocks = np.zeros((len(net.branches), 4), dtype=complex)
    rows, cols, vals = [], [], []
    for k, br in net.active_branches():
        blocks[k] = branch_block(br)
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = blocks[k]
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    shunts = net.shunt_pu()
    rows += list(range(n))
    cols += list(range(n))
    vals += list(shunts)
    ybus = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    ybus.sum_duplicates()
    return AdmittanceModel(blocks=blocks, shunts=shunts, ybus=ybus)


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_json(net), indent=2)
