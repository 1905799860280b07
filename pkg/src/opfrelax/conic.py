"""Conic standard form, solver backends, residual checks and SDPA files.

A :class:`ConicProgram` minimizes ``c @ x + c0`` subject to a list of blocks
``A x + b in K`` where ``K`` is one of

* ``zero``    -- ``A x + b == 0``
* ``nonneg``  -- ``A x + b >= 0``
* ``soc``     -- ``(t, z)`` with ``||z|| <= t``
* ``rsoc``    -- ``(u, v, z)`` with ``2 u v >= ||z||**2``, ``u, v >= 0``
* ``psd``     -- upper triangle of a symmetric ``dim x dim`` matrix, stored
  column by column (``(0,0), (0,1), (1,1), (0,2), ...``), without scaling.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

DEFAULT_TOL = 1.49e-8
CONE_KINDS = ("zero", "nonneg", "soc", "rsoc", "psd")
_SQRT2 = math.sqrt(2.0)


def tri_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def tri_index(dim: int) -> list[tuple[int, int]]:
    """Upper-triangle positions in column-major order."""
    return [(i, j) for j in range(dim) for i in range(j + 1)]


@dataclass
class ConeBlock:
    kind: str
    A: sp.csr_matrix
    b: np.ndarray
    dim: int = 0            # matrix order for psd blocks
    tag: str = ""

    @property
    def rows(self) -> int:
        return self.A.shape[0]


class ConicProgram:
    def __init__(self, n: int, c: Sequence[float] | None = None, c0: float = 0.0,
                 names: Sequence[str] | None = None):
        self.n = int(n)
        self.c = np.zeros(self.n) if c is None else np.asarray(c, dtype=float).copy()
        self.c0 = float(c0)
        self.blocks: list[ConeBlock] = []
        self.names = list(names) if names is not None else None

    def add_block(self, kind: str, A, b, dim: int | None = None, tag: str = "") -> ConeBlock:
        if kind not in CONE_KINDS:
            raise ValueError(f"unknown cone kind {kind!r}")
        A = sp.csr_matrix(A, dtype=float)
        A.sum_duplicates()
        A.sort_indices()
        b = np.asarray(b, dtype=float).ravel()
        if A.shape != (len(b), self.n):
            raise ValueError(f"block shape {A.shape} does not match {len(b)} rows x {self.n} vars")
        if kind == "psd":
            if dim is None:
                dim = int(round((math.sqrt(8 * len(b) + 1) - 1) / 2))
            if tri_size(dim) != len(b):
                raise ValueError(f"psd block of order {dim} needs {tri_size(dim)} rows, got {len(b)}")
        elif kind == "soc" and len(b) < 1:
            raise ValueError("second-order cone needs at least one row")
        elif kind == "rsoc" and len(b) < 2:
            raise ValueError("rotated cone needs at least two rows")
        blk = ConeBlock(kind, A, b, dim or 0, tag)
        self.blocks.append(blk)
        return blk

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.c0

    def counts(self) -> dict[str, int]:
        out = {k: 0 for k in CONE_KINDS}
        for blk in self.blocks:
            out[blk.kind] += 1 if blk.kind in ("soc", "rsoc", "psd") else blk.rows
        return out

    def psd_dims(self) -> list[int]:
        return [blk.dim for blk in self.blocks if blk.kind == "psd"]


# --------------------------------------------------------------------------
# residuals


@dataclass
class ResidualReport:
    """Constraint violations of a primal point, scaled by the size of the terms involved.

    Each affine row's violation is divided by ``1 + max(|b_i|, sum_j |a_ij x_j|)``,
    a cone margin ``t - ||z||`` by ``1 + max(|t|, ||z||)`` and the smallest
    eigenvalue of a PSD block by ``1 + ||S||_2``.  Interior point solvers stop
    on residuals relative to the problem scale, so an absolute test would
    reject accurate solutions of programs with large entries.  The unscaled
    values are kept alongside.
    """

    affine: float = 0.0           # max scaled violation of zero / nonneg rows
    soc_margin: float = math.inf  # min scaled margin over (rotated) second-order cones
    psd_min_eig: float = math.inf  # min scaled eigenvalue over PSD blocks
    tol: float = DEFAULT_TOL
    affine_abs: float = 0.0
    soc_margin_abs: float = math.inf
    psd_min_eig_abs: float = math.inf

    @property
    def ok(self) -> bool:
        lim = 10 * self.tol
        return self.affine <= lim and self.soc_margin >= -lim and self.psd_min_eig >= -lim

    def to_json(self) -> dict:
        fin = lambda v: v if math.isfinite(v) else None  # noqa: E731
        return {"affine": self.affine, "soc_margin": fin(self.soc_margin),
                "psd_min_eig": fin(self.psd_min_eig), "affine_abs": self.affine_abs,
                "soc_margin_abs": fin(self.soc_margin_abs),
                "psd_min_eig_abs": fin(self.psd_min_eig_abs), "tol": self.tol, "ok": self.ok}


def psd_matrix(values: np.ndarray, dim: int) -> np.ndarray:
    m = np.zeros((dim, dim))
    # column-major upper triangle is the row-major lower triangle, transposed
    cols, rows = np.tril_indices(dim)
    m[rows, cols] = values
    return m + np.triu(m, 1).T


def check_residuals(p: ConicProgram, x: np.ndarray, tol: float = DEFAULT_TOL) -> ResidualReport:
    rep = ResidualReport(tol=tol)
    x = np.asarray(x, dtype=float)
    for blk in p.blocks:
        A = blk.A.tocsr()
        s = A @ x + blk.b
        if blk.kind in ("zero", "nonneg"):
            size = 1.0 + np.maximum(np.abs(blk.b), abs(A) @ np.abs(x))
            viol = np.abs(s) if blk.kind == "zero" else np.maximum(-s, 0)
            rep.affine_abs = max(rep.affine_abs, float(viol.max(initial=0.0)))
            rep.affine = max(rep.affine, float((viol / size).max(initial=0.0)))
            continue
        if blk.kind in ("soc", "rsoc"):
            if blk.kind == "rsoc":
                # margin of the equivalent standard cone
                u, v = s[0], s[1]
                s = np.r_[(u + v) / _SQRT2, (u - v) / _SQRT2, s[2:]]
            nz = float(np.linalg.norm(s[1:]))
            margin = float(s[0]) - nz
            rep.soc_margin_abs = min(rep.soc_margin_abs, margin)
            rep.soc_margin = min(rep.soc_margin, margin / (1.0 + max(abs(float(s[0])), nz)))
            continue
        eig = np.linalg.eigvalsh(psd_matrix(s, blk.dim))
        rep.psd_min_eig_abs = min(rep.psd_min_eig_abs, float(eig[0]))
        rep.psd_min_eig = min(rep.psd_min_eig, float(eig[0]) / (1.0 + float(np.abs(eig).max())))
    return rep


def cone_rows(p: ConicProgram):
    """Equality rows and cone blocks with rotated cones turned into standard ones.

    Returns ``(A0, b0, blocks)`` where ``A0 x + b0 == 0`` and each block is
    ``(kind, A, b, dim)`` with kind ``nonneg``, ``soc`` or ``psd``.
    """
    eqA, eqb, blocks = [], [], []
    for blk in p.blocks:
        A, b = blk.A.tocsr(), np.asarray(blk.b, dtype=float)
        if blk.kind == "zero":
            eqA.append(A)
            eqb.append(b)
            continue
        if blk.kind == "rsoc":
            A = sp.vstack([(A[0] + A[1]) / _SQRT2, (A[0] - A[1]) / _SQRT2, A[2:]], format="csr")
            b = np.r_[(b[0] + b[1]) / _SQRT2, (b[0] - b[1]) / _SQRT2, b[2:]]
        kind = "soc" if blk.kind == "rsoc" else blk.kind
        blocks.append((kind, A, b, blk.dim if kind == "psd" else blk.rows))
    A0 = sp.vstack(eqA, format="csr") if eqA else sp.csr_matrix((0, p.n))
    b0 = np.concatenate(eqb) if eqb else np.zeros(0)
    return A0, b0, blocks


# --------------------------------------------------------------------------
# solving


@dataclass
class Solution:
    status: str                    # optimal | infeasible | unbounded | inaccurate | failed
    objective: float
    x: np.ndarray | None
    duals: list[np.ndarray] = field(default_factory=list)
    residuals: ResidualReport | None = None
    solve_time: float = 0.0
    iterations: int = 0
    backend: str = ""
    backend_status: str = ""
    tol: float = DEFAULT_TOL

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_json(self) -> dict:
        return {"status": self.status, "objective": self.objective, "iterations": self.iterations,
                "solve_time": self.solve_time, "backend": self.backend,
                "backend_status": self.backend_status, "tol": self.tol,
                "residuals": self.residuals.to_json() if self.residuals else None}


class ClarabelBackend:
    name = "clarabel"
    supports_psd = True

    # settings tried in turn when the default run stops short of full accuracy; extra
    # static regularisation steadies the KKT factorisation on degenerate OPF relaxations
    RETRY_LADDER = ({"static_regularization_constant": 1e-5, "equilibrate_enable": False},
                    {"static_regularization_constant": 1e-6, "equilibrate_enable": False},
                    {"static_regularization_constant": 1e-6},
                    {"static_regularization_constant": 1e-7})

    def __init__(self, tol: float = DEFAULT_TOL, max_iter: int = 200, verbose: bool = False,
                 time_limit: float | None = None, scale_objective: bool = True,
                 retry: bool = True, **settings):
        self.tol = tol
        self.retry = retry
        self.scale_objective = scale_objective
        self.settings = settings
        self.max_iter = max_iter
        self.verbose = verbose
        self.time_limit = time_limit

    def _lower(self, p: ConicProgram):
        import clarabel

        mats, rhs, cones = [], [], []
        for blk in p.blocks:
            A, b = blk.A, blk.b
            if blk.kind == "zero":
                cones.append(clarabel.ZeroConeT(blk.rows))
            elif blk.kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(blk.rows))
            elif blk.kind == "soc":
                cones.append(clarabel.SecondOrderConeT(blk.rows))
            elif blk.kind == "rsoc":
                # (u, v, z) -> ((u+v)/sqrt2, (u-v)/sqrt2, z): 2uv >= |z|^2 becomes a standard cone
                k = blk.rows
                A = sp.vstack([(A[0] + A[1]) / _SQRT2, (A[0] - A[1]) / _SQRT2, A[2:]], format="csr")
                b = np.r_[(b[0] + b[1]) / _SQRT2, (b[0] - b[1]) / _SQRT2, b[2:]]
                cones.append(clarabel.SecondOrderConeT(k))
            else:
                scale = np.array([1.0 if i == j else _SQRT2 for i, j in tri_index(blk.dim)])
                A = sp.diags(scale) @ A
                b = scale * b
                cones.append(clarabel.PSDTriangleConeT(blk.dim))
            mats.append(-A)
            rhs.append(b)
        if mats:
            A_cl = sp.vstack(mats, format="csc")
            b_cl = np.concatenate(rhs)
        else:
            A_cl = sp.csc_matrix((0, p.n))
            b_cl = np.zeros(0)
        return A_cl, b_cl, cones

    def solve(self, p: ConicProgram) -> Solution:
        t0 = time.perf_counter()
        if not p.blocks and np.any(p.c != 0):
            return Solution("unbounded", -math.inf, None, backend=self.name, tol=self.tol)
        lowered = self._lower(p)
        best = self._solve_once(p, lowered, self.settings)
        if self.retry and best.status == "inaccurate":
            for extra in self.RETRY_LADDER:
                sol = self._solve_once(p, lowered, {**self.settings, **extra})
                log.info("retry with %s: %s", extra, sol.backend_status)
                if sol.status == "optimal":
                    best = sol
                    break
                if sol.status == "inaccurate" and _worst(sol) < _worst(best):
                    best = sol
        best.solve_time = time.perf_counter() - t0
        return best

    def _solve_once(self, p: ConicProgram, lowered, extra: dict) -> Solution:
        import clarabel

        t0 = time.perf_counter()
        A, b, cones = lowered
        P = sp.csc_matrix((p.n, p.n))
        # the solver works on an objective of unit scale; the reported value is unscaled
        cmax = float(np.abs(p.c).max(initial=0.0))
        cscale = 1.0 / cmax if self.scale_objective and cmax > 0 else 1.0
        settings = clarabel.DefaultSettings()
        settings.verbose = self.verbose
        settings.tol_gap_abs = self.tol
        settings.tol_gap_rel = self.tol
        settings.tol_feas = self.tol
        settings.max_iter = self.max_iter
        settings.chordal_decomposition_enable = False
        if self.time_limit:
            settings.time_limit = self.time_limit
        for key, val in extra.items():
            setattr(settings, key, val)
        try:
            solver = clarabel.DefaultSolver(P, p.c * cscale, A, b, cones, settings)
            res = solver.solve()
        except Exception as exc:  # backend panics surface as generic exceptions
            log.error("clarabel failed: %s", exc)
            return Solution("failed", math.nan, None, backend=self.name,
                            backend_status=f"exception: {exc}", solve_time=time.perf_counter() - t0,
                            tol=self.tol)
        raw = str(res.status)
        x = np.asarray(res.x, dtype=float)
        z = np.asarray(res.z, dtype=float)
        duals, pos = [], 0
        for blk in p.blocks:
            duals.append(z[pos:pos + blk.rows] / cscale)
            pos += blk.rows
        status = _map_status(raw)
        obj = p.objective(x) if len(x) else p.c0
        sol = Solution(status, obj, x, duals, solve_time=time.perf_counter() - t0,
                       iterations=int(res.iterations), backend=self.name, backend_status=raw,
                       tol=self.tol)
        if status in ("optimal", "inaccurate"):
            sol.residuals = check_residuals(p, x, self.tol)
            if status == "optimal" and not sol.residuals.ok:
                log.warning("residual check failed (%s); marking solution inaccurate",
                            sol.residuals.to_json())
                sol.status = "inaccurate"
        else:
            sol.objective = math.nan if status == "failed" else sol.objective
        return sol


class CvxoptBackend:
    """Primal-dual interior point method from CVXOPT.

    Slower than Clarabel on large block-sparse programs but it converges to full
    accuracy on the dense, degenerate SDPs where Clarabel stalls.  Redundant
    equality rows are dropped first because the solver needs them independent.
    """

    name = "cvxopt"
    supports_psd = True

    def __init__(self, tol: float = DEFAULT_TOL, max_iter: int = 200, verbose: bool = False,
                 refinement: int = 2, kktsolver: str | None = None):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose
        self.refinement = refinement
        self.kktsolver = kktsolver

    def _lower(self, p: ConicProgram):
        eq_A, eq_b, lin_G, lin_h = [], [], [], []
        soc_G, soc_h, psd_G, psd_h = [], [], [], []
        dims = {"l": 0, "q": [], "s": []}
        for blk in p.blocks:
            A, b = blk.A.tocsr(), blk.b
            if blk.kind == "zero":
                eq_A.append(A)
                eq_b.append(-b)
            elif blk.kind == "nonneg":
                lin_G.append(-A)
                lin_h.append(b)
                dims["l"] += blk.rows
            elif blk.kind in ("soc", "rsoc"):
                if blk.kind == "rsoc":
                    A = sp.vstack([(A[0] + A[1]) / _SQRT2, (A[0] - A[1]) / _SQRT2, A[2:]], format="csr")
                    b = np.r_[(b[0] + b[1]) / _SQRT2, (b[0] - b[1]) / _SQRT2, b[2:]]
                soc_G.append(-A)
                soc_h.append(b)
                dims["q"].append(blk.rows)
            else:
                # the solver stores the full matrix column by column
                d = blk.dim
                where = np.empty((d, d), dtype=int)
                for r, (i, j) in enumerate(tri_index(d)):
                    where[i, j] = where[j, i] = r
                sel = where.T.ravel()
                psd_G.append(-A[sel])
                psd_h.append(b[sel])
                dims["s"].append(d)
        G = sp.vstack(lin_G + soc_G + psd_G, format="csc") if dims["l"] or dims["q"] or dims["s"] \
            else sp.csc_matrix((0, p.n))
        h = np.concatenate(lin_h + soc_h + psd_h) if G.shape[0] else np.zeros(0)
        if eq_A:
            Aeq = sp.vstack(eq_A, format="csr")
            beq = np.concatenate(eq_b)
            Aeq, beq = _independent_rows(Aeq, beq)
        else:
            Aeq, beq = sp.csr_matrix((0, p.n)), np.zeros(0)
        return G, h, Aeq, beq, dims

    def solve(self, p: ConicProgram) -> Solution:
        import cvxopt
        from cvxopt import solvers

        t0 = time.perf_counter()
        if not p.blocks and np.any(p.c != 0):
            return Solution("unbounded", -math.inf, None, backend=self.name, tol=self.tol)
        G, h, Aeq, beq, dims = self._lower(p)

        def spm(M):
            M = M.tocoo()
            return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)

        opts = {"show_progress": self.verbose, "maxiters": self.max_iter, "abstol": self.tol,
                "reltol": self.tol, "feastol": self.tol, "refinement": self.refinement}
        cmax = float(np.abs(p.c).max(initial=0.0)) or 1.0
        try:
            res = solvers.conelp(cvxopt.matrix(p.c / cmax), spm(G), cvxopt.matrix(h), dims,
                                 spm(Aeq), cvxopt.matrix(beq), kktsolver=self.kktsolver, options=opts)
        except (ArithmeticError, ValueError) as exc:
            log.error("cvxopt failed: %s", exc)
            return Solution("failed", math.nan, None, backend=self.name,
                            backend_status=f"exception: {exc}", solve_time=time.perf_counter() - t0,
                            tol=self.tol)
        raw = res["status"]
        status = {"optimal": "optimal", "primal infeasible": "infeasible",
                  "dual infeasible": "unbounded"}.get(raw, "inaccurate")
        if res["x"] is None:
            return Solution("failed" if status == "inaccurate" else status, math.nan, None,
                            backend=self.name, backend_status=raw,
                            solve_time=time.perf_counter() - t0, tol=self.tol)
        x = np.array(res["x"]).ravel()
        sol = Solution(status, p.objective(x), x, solve_time=time.perf_counter() - t0,
                       iterations=int(res.get("iterations", 0)), backend=self.name,
                       backend_status=raw, tol=self.tol)
        if status in ("optimal", "inaccurate"):
            sol.residuals = check_residuals(p, x, self.tol)
            if status == "optimal" and not sol.residuals.ok:
                log.warning("residual check failed (%s); marking solution inaccurate",
                            sol.residuals.to_json())
                sol.status = "inaccurate"
        return sol


def _independent_rows(A: sp.csr_matrix, b: np.ndarray, tol: float = 1e-10):
    """Keep a maximal linearly independent subset of the rows of ``A x = b``."""
    import scipy.linalg as la

    if A.shape[0] == 0:
        return A, b
    dense = A.toarray()
    _, R, piv = la.qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag.max(initial=0.0), 1.0)))
    keep = np.sort(piv[:rank])
    if rank < A.shape[0]:
        # a dropped row must be implied by the kept ones, otherwise the system is inconsistent
        coef, *_ = np.linalg.lstsq(dense[keep].T, dense.T, rcond=None)
        resid = float(np.abs(coef.T @ b[keep] - b).max())
        if resid > 1e-7 * max(1.0, float(np.abs(b).max())):
            log.warning("equality rows are inconsistent (residual %.3g)", resid)
    return A[keep], b[keep]


class AutoBackend:
    """Pick a backend from the shape of the program, falling back on a poor result.

    Programs with a PSD block above ``large_psd`` rows go to the standard-form
    CVXOPT solver first, everything else to Clarabel.  A result that is not
    optimal is retried on the other one and the better of the two is kept.
    """

    name = "auto"
    supports_psd = True

    def __init__(self, tol: float = DEFAULT_TOL, large_psd: int = 40, verbose: bool = False):
        self.tol = tol
        self.large_psd = large_psd
        self.verbose = verbose

    def order(self, p: ConicProgram) -> list:
        from .stdform import StandardFormBackend

        clar = ClarabelBackend(tol=self.tol, verbose=self.verbose)
        dual = StandardFormBackend(tol=self.tol, verbose=self.verbose)
        big = max((b.dim for b in p.blocks if b.kind == "psd"), default=0)
        return [dual, clar] if big > self.large_psd else [clar, dual]

    def solve(self, p: ConicProgram) -> Solution:
        best = None
        for backend in self.order(p):
            sol = backend.solve(p)
            if sol.status in ("optimal", "infeasible", "unbounded"):
                return sol
            log.info("%s returned %s; trying the next backend", backend.name, sol.status)
            if best is None or (sol.status == "inaccurate" and
                                (best.status != "inaccurate" or _worst(sol) < _worst(best))):
                best = sol
        return best


def _standard_form_backend(tol: float = DEFAULT_TOL, **kwargs):
    from .stdform import StandardFormBackend

    return StandardFormBackend(tol=tol, **kwargs)


BACKENDS = {"auto": AutoBackend, "clarabel": ClarabelBackend, "cvxopt": CvxoptBackend,
            "cvxopt-dual": _standard_form_backend}


def make_backend(name: str = "auto", tol: float = DEFAULT_TOL, **kwargs):
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    return cls(tol=tol, **kwargs)


def _worst(sol: Solution) -> float:
    r = sol.residuals
    if r is None:
        return math.inf
    return max(r.affine, -r.soc_margin, -r.psd_min_eig)


def _map_status(raw: str) -> str:
    key = raw.split(".")[-1]
    if key == "Solved":
        return "optimal"
    if key in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return "infeasible"
    if key in ("DualInfeasible", "AlmostDualInfeasible"):
        return "unbounded"
    if key in ("AlmostSolved", "MaxIterations", "MaxTime", "InsufficientProgress"):
        return "inaccurate"
    return "failed"


def solve(p: ConicProgram, backend=None, tol: float = DEFAULT_TOL) -> Solution:
    backend = backend or AutoBackend(tol=tol)
    if isinstance(backend, str):
        backend = make_backend(backend, tol)
    return backend.solve(p)


# --------------------------------------------------------------------------
# gaps


def optimality_gap(v_r: float, v_ref: float) -> float:
    """Percent gap ``100 (1 - v_r / v_ref)``; negative values are returned with a warning."""
    if not v_ref > 0:
        raise ValueError(f"reference objective must be positive, got {v_ref}")
    gap = 100.0 * (1.0 - v_r / v_ref)
    if gap < 0:
        log.warning("lower bound %.10g exceeds reference %.10g (gap %.4f%%)", v_r, v_ref, gap)
    return gap


# --------------------------------------------------------------------------
# SDPA sparse format
#
# SDPA solves  min c^T x  s.t.  sum_i F_i x_i - F_0 >= 0 (PSD, block diagonal).
# zero rows become +/- pairs inside one diagonal block, nonneg rows join the same
# block, second-order cones become arrow matrices [[t, z^T], [z, t I]] and rotated
# cones [[2u, z^T], [z, v I]].


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class _SdpaBlock:
    size: int                       # negative for diagonal blocks
    entries: list[tuple[int, int, int, float]]  # (matno, i, j, value), 1-based i <= j


def _row_entries(A: sp.csr_matrix, b: np.ndarray, r: int, sign: float = 1.0):
    start, end = A.indptr[r], A.indptr[r + 1]
    for col, val in zip(A.indices[start:end], A.data[start:end]):
        if val != 0:
            yield int(col) + 1, sign * float(val)
    if b[r] != 0:
        yield 0, -sign * float(b[r])


def _sdpa_blocks(p: ConicProgram) -> list[_SdpaBlock]:
    diag: list[tuple[int, float]] = []
    diag_entries: list[tuple[int, int, int, float]] = []

    def add_diag(A, b, r, sign):
        k = len(diag) + 1
        diag.append((k, sign))
        for mat, val in _row_entries(A, b, r, sign):
            diag_entries.append((mat, k, k, val))

    out: list[_SdpaBlock] = []
    for blk in p.blocks:
        if blk.kind == "zero":
            for r in range(blk.rows):
                add_diag(blk.A, blk.b, r, 1.0)
                add_diag(blk.A, blk.b, r, -1.0)
        elif blk.kind == "nonneg":
            for r in range(blk.rows):
                add_diag(blk.A, blk.b, r, 1.0)
    if diag:
        out.append(_SdpaBlock(-len(diag), diag_entries))
    for blk in p.blocks:
        if blk.kind in ("zero", "nonneg"):
            continue
        ents: list[tuple[int, int, int, float]] = []
        if blk.kind == "psd":
            for r, (i, j) in enumerate(tri_index(blk.dim)):
                for mat, val in _row_entries(blk.A, blk.b, r):
                    ents.append((mat, i + 1, j + 1, val))
            out.append(_SdpaBlock(blk.dim, ents))
        else:
            k = blk.rows
            if blk.kind == "soc":
                size = k
                for r in range(1, k):
                    for mat, val in _row_entries(blk.A, blk.b, 0):
                        ents.append((mat, r + 1, r + 1, val))
                head = [(mat, 1, 1, val) for mat, val in _row_entries(blk.A, blk.b, 0)]
                off0 = 1
            else:
                size = max(k - 1, 2)
                head = [(mat, 1, 1, 2 * val) for mat, val in _row_entries(blk.A, blk.b, 0)]
                for r in range(1, size):
                    for mat, val in _row_entries(blk.A, blk.b, 1):
                        ents.append((mat, r + 1, r + 1, val))
                off0 = 2
            ents = head + ents
            for r in range(off0, k):
                pos = r - off0 + 2
                for mat, val in _row_entries(blk.A, blk.b, r):
                    ents.append((mat, 1, pos, val))
            out.append(_SdpaBlock(size, ents))
    return out


def export_sdpa(p: ConicProgram, path: str | Path | None = None) -> str:
    """Write the program in sparse SDPA format and return the text."""
    blocks = _sdpa_blocks(p)
    lines = []
    if p.c0 != 0:
        lines.append(f"* objective constant {_fmt(p.c0)}")
    lines.append(str(p.n))
    lines.append(str(len(blocks)))
    lines.append(" ".join(str(b.size) for b in blocks))
    lines.append(" ".join(_fmt(v) for v in p.c))
    for k, blk in enumerate(blocks, start=1):
        merged: dict[tuple[int, int, int], float] = {}
        for mat, i, j, val in blk.entries:
            key = (mat, i, j)
            merged[key] = merged.get(key, 0.0) + val
        for (mat, i, j), val in sorted(merged.items()):
            if val != 0:
                lines.append(f"{mat} {k} {i} {j} {_fmt(val)}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, newline="\n")
    return text


def read_sdpa(source: str | Path) -> ConicProgram:
    """Parse a sparse SDPA file into a program (diagonal blocks become nonneg rows).

    Adjacent diagonal rows that are exact negatives of each other are folded
    back into one equality row.
    """
    text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else str(source)
    c0 = 0.0
    body = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s[0] in "*\"":
            if s.startswith("* objective constant"):
                c0 = float(s.split()[-1])
            continue
        body.append(s)
    tokens_head = []
    idx = 0
    while len(tokens_head) < 2:
        tokens_head.extend(body[idx].replace(",", " ").replace("{", " ").replace("}", " ").split())
        idx += 1
    m, nblocks = int(tokens_head[0]), int(tokens_head[1])
    sizes = [int(t) for t in body[idx].replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " ").split()[:nblocks]]
    idx += 1
    cvec: list[float] = []
    while len(cvec) < m:
        cvec.extend(float(t) for t in body[idx].replace(",", " ").replace("{", " ").replace("}", " ").split())
        idx += 1
    ents: dict[int, list[tuple[int, int, int, float]]] = {k: [] for k in range(1, nblocks + 1)}
    for line in body[idx:]:
        mat, blk, i, j, val = line.split()[:5]
        i, j = int(i), int(j)
        if i > j:
            i, j = j, i
        ents[int(blk)].append((int(mat), i, j, float(val)))
    p = ConicProgram(m, np.array(cvec[:m]), c0)
    for k, size in enumerate(sizes, start=1):
        if size < 0:
            n_rows = -size
            A = sp.lil_matrix((n_rows, m))
            b = np.zeros(n_rows)
            for mat, i, j, val in ents[k]:
                if mat == 0:
                    b[i - 1] -= val
                else:
                    A[i - 1, mat - 1] += val
            A = A.tocsr()
            eq_rows, ineq_rows, r = [], [], 0
            while r < n_rows:
                if r + 1 < n_rows and _negated(A, b, r, r + 1):
                    eq_rows.append(r)
                    r += 2
                else:
                    ineq_rows.append(r)
                    r += 1
            if eq_rows:
                p.add_block("zero", A[eq_rows], b[eq_rows])
            if ineq_rows:
                p.add_block("nonneg", A[ineq_rows], b[ineq_rows])
        else:
            pos = {ij: r for r, ij in enumerate(tri_index(size))}
            A = sp.lil_matrix((tri_size(size), m))
            b = np.zeros(tri_size(size))
            for mat, i, j, val in ents[k]:
                r = pos[(i - 1, j - 1)]
                if mat == 0:
                    b[r] -= val
                else:
                    A[r, mat - 1] += val
            p.add_block("psd", A.tocsr(), b, dim=size)
    return p


def _negated(A: sp.csr_matrix, b: np.ndarray, r1: int, r2: int) -> bool:
    if b[r1] != -b[r2]:
        return False
    d1 = A.getrow(r1)
    d2 = A.getrow(r2)
    if d1.nnz == 0 and b[r1] == 0:
        return False
    return (d1 + d2).count_nonzero() == 0


__all__ = [
    "ConicProgram", "ConeBlock", "Solution", "ResidualReport", "ClarabelBackend", "solve",
    "check_residuals", "optimality_gap", "export_sdpa", "read_sdpa", "tri_index", "tri_size",
    "psd_matrix", "DEFAULT_TOL",
]
