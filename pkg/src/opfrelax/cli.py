"""Command-line entry points, benchmark harness and JSON run reports.

Subcommands: ``parse``, ``tighten``, ``decompose``, ``solve``, ``bench`` and
``calibrate``.  Exit codes: 0 success, 1 solved but inaccurate, 2 usage
error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import chordal, cuts
from . import relax as rx
from .casefmt import CaseFormatError, Network, load_case, network_to_json
from .conic import DEFAULT_TOL, export_sdpa, make_backend, optimality_gap, solve

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INACCURATE, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3, 4
REPORT_SCHEMA_VERSION = 1
MODEL_CHOICES = ("sdr", "chr", "chr-rms", "chr-r", "qc", "qc-tlm", "e-chr-tlm-c")
MERGE_CHOICES = ("none", "tree", "graph")


class DataError(Exception):
    """Bad input files or reference data (exit code 3)."""


# --------------------------------------------------------------------------
# references


def bundled_refs() -> dict:
    text = resources.files("opfrelax.data").joinpath("refs.json").read_text()
    return json.loads(text)


def load_refs(path: str | Path | None) -> dict:
    if path is None:
        return bundled_refs()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read references {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"references file {path} must map case ids to entries")
    return data


def lookup_ref(refs: dict, case: str) -> tuple[float, str] | None:
    """Reference objective and its source for ``case`` (bare numbers are accepted)."""
    keys = [case, case.removeprefix("pglib_opf_"), f"pglib_opf_{case}"]
    for k in keys:
        if k in refs:
            entry = refs[k]
            if isinstance(entry, dict):
                return float(entry["objective"]), str(entry.get("source", "unknown"))
            return float(entry), "unknown"
    return None


# --------------------------------------------------------------------------
# run reports


@dataclass
class RunReport:
    case: str
    variant: str
    merge: str
    status: str
    lower_bound: float | None
    buses: int = 0
    reference: float | None = None
    reference_source: str | None = None
    gap: float | None = None
    model: dict = field(default_factory=dict)
    cliques: dict | None = None
    timings: dict = field(default_factory=dict)
    residuals: dict | None = None
    recovery: dict | None = None
    solver: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    error: str | None = None
    version: str = __version__
    schema_version: int = REPORT_SCHEMA_VERSION
    timestamp: str = ""

    @property
    def failed(self) -> bool:
        return self.status not in ("optimal", "inaccurate")

    def recomputed_gap(self) -> float | None:
        if self.lower_bound is None or self.reference is None:
            return None
        return optimality_gap(self.lower_bound, self.reference)

    def to_json(self) -> dict:
        return asdict(self)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _fin(v: float) -> float | None:
    return float(v) if v is not None and math.isfinite(v) else None


def _load_coeffs(path: str | None) -> chordal.CostCoeffs:
    if path is None:
        return chordal.default_coeffs()
    try:
        return chordal.CostCoeffs.load(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot read coefficients {path}: {exc}") from exc


def _load_network(case: str) -> Network:
    try:
        return load_case(case)
    except (CaseFormatError, FileNotFoundError, OSError) as exc:
        raise DataError(str(exc)) from exc


def run_case(case: str, model: str, merge: str = "none", k_max: int | None = None,
             coeffs: str | None = None, weight_mode: str = "normalized",
             ref_objective: float | None = None, refs: str | None = None, tol: float = DEFAULT_TOL,
             no_tlm: bool = False, seed: int = 0, backend: str = "auto",
             export_path: str | None = None, polish: bool = False) -> RunReport:
    """Build, solve and report one relaxation of one case.

    Data problems raise :class:`DataError`; solver trouble is reported in the
    returned status.
    """
    variant = rx.canonical_variant(model)
    net = _load_network(case)
    cc = _load_coeffs(coeffs)
    mconf = rx.ModelConfig(lambda_envelopes=False if no_tlm else None)
    config = {"case": net.name, "variant": variant, "merge": merge, "k_max": k_max,
              "weight_mode": weight_mode, "coeffs": cc.to_json(), "tol": tol, "seed": seed,
              "backend": backend, "polish": polish, "model": mconf.to_json()}
    report = RunReport(net.name, variant, merge, "failed", None, net.n_bus, config=config,
                       config_hash=config_hash(config),
                       timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))
    if ref_objective is not None:
        ref = (float(ref_objective), "command line")
    else:
        ref = lookup_ref(load_refs(refs), net.name)
    if ref is not None:
        if not ref[0] > 0:
            raise DataError(f"reference objective must be positive, got {ref[0]}")
        report.reference, report.reference_source = ref

    t0 = time.perf_counter()
    dec = None
    if variant in rx.CHORDAL_VARIANTS:
        _, base = chordal.decompose(net, "none", cc, mode=weight_mode)
        _, dec = chordal.decompose(net, merge, cc, k_max=k_max, mode=weight_mode)
        report.cliques = {"pre_merge": base.stats(), "post_merge": dec.stats(),
                          "estimated_time_pre": chordal.estimated_time(base, cc),
                          "estimated_time_post": chordal.estimated_time(dec, cc)}
    t1 = time.perf_counter()
    m = rx.build_model(net, variant, dec, None, mconf)
    prog = rx.assemble(m)
    t2 = time.perf_counter()
    report.model = {**m.stats(), "fingerprint": m.fingerprint(), "program": {"variables": prog.n, "cones": prog.counts(),
                                                        "max_psd_dim": max(prog.psd_dims(), default=0)},
                    "diagnostics": list(m.diagnostics)}
    if export_path:
        export_sdpa(prog, export_path)
    sol = solve(prog, backend=make_backend(backend, tol), tol=tol)
    t3 = time.perf_counter()
    report.timings = {"decompose": t1 - t0, "build": t2 - t1, "solve": t3 - t2, "total": t3 - t0}
    report.status = sol.status
    report.solver = {"backend": sol.backend, "backend_status": sol.backend_status,
                     "iterations": sol.iterations, "tol": sol.tol}
    report.residuals = sol.residuals.to_json() if sol.residuals else None
    if sol.status in ("optimal", "inaccurate") and math.isfinite(sol.objective):
        report.lower_bound = float(sol.objective)
        ms = rx.ModelSolution(m, prog, sol)
        try:
            if polish:
                polished = rx.polish_rank(ms, tol=tol, backend=make_backend(backend, tol))
                if polished.status in ("optimal", "inaccurate"):
                    ms = polished
            rec = rx.recover_voltages(ms.values(), m)
            report.recovery = {k: _fin(v) if isinstance(v, float) else v
                               for k, v in rec.to_json().items()}
        except (KeyError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("voltage recovery skipped: %s", exc)
        if report.reference is not None:
            report.gap = optimality_gap(report.lower_bound, report.reference)
    return report


def _exit_for(report: RunReport) -> int:
    if report.status == "optimal":
        return EXIT_OK
    if report.status == "inaccurate":
        return EXIT_INACCURATE
    return EXIT_SOLVER


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --------------------------------------------------------------------------
# bench


def _suite_rows(suite) -> list[dict]:
    if not isinstance(suite, list):
        raise DataError("suite file must contain a JSON list")
    rows = []
    for k, entry in enumerate(suite):
        if isinstance(entry, str):
            entry = {"case": entry}
        if not isinstance(entry, dict) or "case" not in entry:
            raise DataError(f"suite entry {k} needs a 'case' field")
        variants = entry.get("variants") or [entry.get("variant", entry.get("model", "sdr"))]
        for v in variants:
            row = {key: val for key, val in entry.items() if key not in ("variants", "variant", "model")}
            row["model"] = v
            rows.append(row)
    return rows


_ROW_KEYS = ("case", "model", "merge", "k_max", "coeffs", "weight_mode", "ref_objective", "refs",
             "tol", "no_tlm", "seed", "backend", "polish")


def _bench_row(row: dict, defaults: dict) -> dict:
    kwargs = {**defaults, **{k: row[k] for k in _ROW_KEYS if k in row}}
    try:
        report = run_case(**kwargs)
        out = report.to_json()
    except (DataError, ValueError) as exc:
        try:
            variant = rx.canonical_variant(str(row.get("model")))
        except ValueError:
            variant = str(row.get("model"))
        out = {"case": row["case"], "variant": variant, "merge": kwargs.get("merge", "none"),
               "status": "failed", "lower_bound": None, "gap": None, "error": str(exc)}
    out["group"] = row.get("group") or _default_group(out)
    return out


def _default_group(out: dict) -> str:
    buses = out.get("buses")
    if not buses:
        return "unknown"
    return "small" if buses < 100 else "medium" if buses <= 1000 else "large"


def bench_table(rows: Sequence[dict]) -> str:
    """Aligned text table with two-decimal gaps and per-group, per-variant averages."""
    head = ("group", "case", "variant", "merge", "bound", "reference", "gap %", "status", "time s")
    body = []
    for r in rows:
        body.append((
            str(r.get("group", "")), str(r.get("case", "")), str(r.get("variant", "")),
            str(r.get("merge", "")),
            f"{r['lower_bound']:.6f}" if r.get("lower_bound") is not None else "-",
            f"{r['reference']:.6f}" if r.get("reference") is not None else "-",
            f"{r['gap']:.2f}" if r.get("gap") is not None else "-",
            str(r.get("status", "")),
            f"{r['timings']['total']:.2f}" if r.get("timings") else "-",
        ))
    groups: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        if r.get("gap") is not None:
            groups.setdefault((str(r.get("group", "")), str(r["variant"])), []).append(r["gap"])
    for (g, v), gaps in sorted(groups.items()):
        body.append((g, "average", v, "", "", "", f"{sum(gaps) / len(gaps):.2f}", "", ""))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip()]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip() for b in body]
    return "\n".join(lines)


def run_bench(suite_path: str, defaults: dict, jobs: int = 1) -> tuple[list[dict], int]:
    try:
        suite = json.loads(Path(suite_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read suite {suite_path}: {exc}") from exc
    rows = _suite_rows(suite)
    if jobs > 1 and len(rows) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bench_row, rows, [defaults] * len(rows)))
    else:
        results = [_bench_row(r, defaults) for r in rows]
    code = EXIT_OK
    for r in results:
        if r["status"] == "inaccurate":
            code = max(code, EXIT_INACCURATE)
        elif r["status"] != "optimal":
            code = EXIT_SOLVER
    return results, code


# --------------------------------------------------------------------------
# argument parsing


def _add_decompose_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--merge", choices=MERGE_CHOICES, default="none")
    p.add_argument("--kmax", type=int, default=None,
                   help="tree merging: block count above which the size criterion is used "
                        "(default: time criterion throughout)")
    p.add_argument("--coeffs", help="cost-model coefficients JSON (from `calibrate`)")
    p.add_argument("--weight-mode", choices=chordal.WEIGHT_MODES, default="normalized")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opfrelax", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a case and print a summary or JSON dump")
    p.add_argument("case")
    p.add_argument("--json", metavar="PATH", help="write the parsed network as JSON ('-' for stdout)")

    p = sub.add_parser("tighten", help="emit tightened angle and voltage-difference bounds")
    p.add_argument("case")
    p.add_argument("--json", metavar="PATH", help="output file (default stdout)")

    p = sub.add_parser("decompose", help="chordal extension, cliques and merging")
    p.add_argument("case")
    _add_decompose_args(p)
    p.add_argument("--json", metavar="PATH", help="output file (default stdout)")

    p = sub.add_parser("solve", help="solve one relaxation and report the gap")
    p.add_argument("case")
    p.add_argument("--model", choices=MODEL_CHOICES, default="e-chr-tlm-c")
    _add_decompose_args(p)
    ref = p.add_mutually_exclusive_group()
    ref.add_argument("--ref-objective", type=float)
    ref.add_argument("--refs", help="references JSON {case: {objective, source, timestamp}}")
    p.add_argument("--export-sdpa", metavar="PATH")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--backend", choices=sorted(("auto", "clarabel", "cvxopt", "cvxopt-dual")),
                   default="auto")
    p.add_argument("--json", metavar="PATH", help="write the run report as JSON ('-' for stdout)")
    p.add_argument("--no-tlm", action="store_true", help="drop the lambda trilinear envelopes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--polish", action="store_true",
                   help="re-solve on the optimal face minimising tr(W) before voltage recovery")

    p = sub.add_parser("bench", help="run a suite of cases and variants")
    p.add_argument("suite", help="JSON list of {case, variants|variant, merge, ref_objective, group}")
    p.add_argument("--refs")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--json", metavar="PATH", help="write all run reports as JSON")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="fit cost-model coefficients from probe solves")
    p.add_argument("--out", default="-", help="coefficients JSON (default stdout)")
    p.add_argument("--sizes", type=int, nargs="+", default=[2, 3, 4, 6, 8, 10, 12])
    p.add_argument("--overlaps", type=int, nargs="+", default=[0, 1, 2, 3])
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    return ap


# --------------------------------------------------------------------------
# subcommands


def _cmd_parse(args) -> int:
    net = _load_network(args.case)
    if args.json:
        _write_json(network_to_json(net), args.json)
    else:
        print(f"{net.name}: {net.n_bus} buses, {len(net.active_generators())} generators, "
              f"{len(net.active_branches())} branches, base {net.base_mva:g} MVA")
    return EXIT_OK


def _cmd_tighten(args) -> int:
    net = _load_network(args.case)
    tb = cuts.tighten_angle_bounds(net)
    labels = [(br.from_bus, br.to_bus) for br in net.branches]
    rows = tb.to_json()
    for r in rows:
        r["from"], r["to"] = labels[r["branch"]]
    _write_json({"schema_version": REPORT_SCHEMA_VERSION, "case": net.name, "branches": rows,
                 "diagnostics": tb.diagnostics}, args.json)
    return EXIT_OK


def _cmd_decompose(args) -> int:
    net = _load_network(args.case)
    cc = _load_coeffs(args.coeffs)
    ext, base = chordal.decompose(net, "none", cc, mode=args.weight_mode)
    _, dec = chordal.decompose(net, args.merge, cc, k_max=args.kmax, mode=args.weight_mode)
    labels = [b.id for b in net.buses]
    out = {"schema_version": REPORT_SCHEMA_VERSION, "case": net.name, **dec.to_json(labels),
           "fill": len(ext.fill), "pre_merge": base.stats(), "post_merge": dec.stats(),
           "estimated_time_pre": chordal.estimated_time(base, cc),
           "estimated_time_post": chordal.estimated_time(dec, cc), "coeffs": cc.to_json()}
    _write_json(out, args.json)
    return EXIT_OK


def _cmd_solve(args) -> int:
    report = run_case(args.case, args.model, args.merge, args.kmax, args.coeffs, args.weight_mode,
                      args.ref_objective, args.refs, args.tol, args.no_tlm, args.seed,
                      args.backend, args.export_sdpa, args.polish)
    if args.json:
        _write_json(report.to_json(), args.json)
    if args.json != "-":
        gap = f"{report.gap:.4f}%" if report.gap is not None else "n/a"
        bound = f"{report.lower_bound:.8g}" if report.lower_bound is not None else "n/a"
        print(f"{report.case} {report.variant} merge={report.merge} status={report.status} "
              f"bound={bound} gap={gap} time={report.timings.get('total', 0):.2f}s")
    return _exit_for(report)


def _cmd_bench(args) -> int:
    defaults = {"tol": args.tol, "refs": args.refs, "seed": args.seed}
    rows, code = run_bench(args.suite, defaults, args.jobs)
    if args.json:
        _write_json({"schema_version": REPORT_SCHEMA_VERSION, "rows": rows}, args.json)
    if rows:
        print(bench_table(rows))
    else:
        print("empty suite")
    return code


def _cmd_calibrate(args) -> int:
    probes = chordal.probe_timings(args.sizes, args.overlaps, args.blocks, args.seed, args.repeats)
    cc = chordal.calibrate(probes)
    _write_json(cc.to_json(), args.out)
    return EXIT_OK


COMMANDS = {"parse": _cmd_parse, "tighten": _cmd_tighten, "decompose": _cmd_decompose,
            "solve": _cmd_solve, "bench": _cmd_bench, "calibrate": _cmd_calibrate}


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid numeric options that argparse cannot catch (bad variant names, tolerances...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
