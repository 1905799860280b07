"""Compute reference AC-OPF objectives for the bundled cases with PYPOWER.

PYPOWER's ``runopf`` is a port of MATPOWER's MIPS interior point solver, a
standard local AC-OPF solver.  Run offline; the output is bundled as
``opfrelax/data/refs.json`` and never recomputed by the package itself.

    python tools/make_refs.py [case ...] [-o path]
"""

import argparse
import datetime as dt
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np


def _ppc(text: str) -> dict:
    from opfrelax.casefmt import _parse_fields

    fields = _parse_fields(text)
    ppc = {"version": "2", "baseMVA": float(fields["baseMVA"])}
    for key in ("bus", "gen", "branch", "gencost"):
        rows = fields[key]
        width = max(len(r) for r in rows)
        ppc[key] = np.array([list(r) + [0.0] * (width - len(r)) for r in rows], dtype=float)
    br = ppc["branch"]
    if br.shape[1] >= 13:
        # +-360 degree limits are vacuous; MATPOWER treats 0 as "no limit" and PYPOWER's
        # interior point routine mishandles the linear rows the vacuous limits create
        br[br[:, 11] <= -360, 11] = 0.0
        br[br[:, 12] >= 360, 12] = 0.0
    # PYPOWER fails on cases without any flow limit (empty constraint arrays under
    # current numpy/scipy); a 1e5 MVA rating never binds and keeps the arrays non-empty
    br[br[:, 5] == 0, 5] = 1e5
    return ppc


def reference(name: str) -> dict:
    from pypower.api import ppoption, runopf


    text = (resources.files("opfrelax") / "data" / "cases" / f"{name}.m").read_text()
    opt = ppoption(VERBOSE=0, OUT_ALL=0, OPF_VIOLATION=1e-8, PDIPM_GRADTOL=1e-10,
                   PDIPM_COMPTOL=1e-10, PDIPM_COSTTOL=1e-12)
    res = runopf(_ppc(text), opt)
    if not res["success"]:
        raise RuntimeError(f"runopf did not converge on {name}")
    import pypower

    return {"objective": float(res["f"]), "source": f"PYPOWER {getattr(pypower, '__version__', '')} runopf (MIPS)".replace("  ", " "),
            "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}


def main(argv=None) -> int:
    from opfrelax.casefmt import bundled_cases

    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("cases", nargs="*")
    ap.add_argument("-o", "--output", default=str(Path(__file__).resolve().parents[1] /
                                                  "src" / "opfrelax" / "data" / "refs.json"))
    args = ap.parse_args(argv)
    out = Path(args.output)
    refs = json.loads(out.read_text()) if out.exists() else {}
    for name in args.cases or bundled_cases():
        try:
            refs[name] = reference(name)
        except Exception as exc:  # noqa: BLE001 - report and keep going
            print(f"{name}: {exc}", file=sys.stderr)
            continue
        print(f"{name}: {refs[name]['objective']:.6f}")
    out.write_text(json.dumps(refs, indent=2, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
