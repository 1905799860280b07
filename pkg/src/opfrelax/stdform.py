"""Standard-form reduction of a conic program and a CVXOPT solve of its dual.

A relaxation with one large PSD block carries ``O(n^2)`` scalar variables, so
any interior point method that forms its Schur complement over the variables
(Clarabel, or CVXOPT on the program as written) pays ``O(n^6)`` per step.
Rewritten with the cone slacks as the unknowns, the same program has one
equality per coupling constraint, a few hundred for the full-matrix case57
relaxation, and the Schur complement over those equalities is cheap when the
constraint matrices are sparse.

The reduction:

1. free variables are eliminated through the equality rows they appear in;
2. a variable that is a plain copy of some cone row (``s_r = a x_k + b_r``) is
   replaced by that slack;
3. whatever stays free is kept as a free variable of the standard form.

CVXOPT is then handed the conic dual of the standard form, so that its dual
variable is the slack vector, and a KKT solver that builds the Schur complement
from the sparse PSD columns replaces the dense default.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .conic import DEFAULT_TOL, ConicProgram, Solution, check_residuals, cone_rows, tri_index

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# reduction


def _eliminate(A0: sp.csr_matrix, b0: np.ndarray, protected: np.ndarray):
    """Pivot unprotected variables out through the equality rows ``A0 x + b0 = 0``.

    Returns ``(T, t, keep, rest)``: ``x = T @ x[keep] + t`` on the equality set,
    and ``rest`` lists the equality rows that found no pivot.
    """
    n = A0.shape[1]
    rows: list[dict[int, float]] = []
    consts = list(map(float, b0))
    A0 = A0.tocsr()
    for r in range(A0.shape[0]):
        lo, hi = A0.indptr[r], A0.indptr[r + 1]
        rows.append({int(j): float(v) for j, v in zip(A0.indices[lo:hi], A0.data[lo:hi]) if v != 0})
    users: dict[int, set[int]] = {}
    for r, row in enumerate(rows):
        for j in row:
            users.setdefault(j, set()).add(r)
    expr: dict[int, tuple[dict[int, float], float]] = {}
    expr_users: dict[int, set[int]] = {}
    rest = []

    def substitute(target: dict[int, float], const: float, v: int, e: dict[int, float], ec: float):
        a = target.pop(v)
        for j, c in e.items():
            val = target.get(j, 0.0) + a * c
            if abs(val) < 1e-14:
                target.pop(j, None)
            else:
                target[j] = val
        return const + a * ec

    for r, row in enumerate(rows):
        cands = [j for j in row if not protected[j] and j not in expr]
        if not cands:
            rest.append(r)
            continue
        v = max(cands, key=lambda j: (abs(row[j]), -j))
        a = row[v]
        e = {j: -c / a for j, c in row.items() if j != v}
        ec = -consts[r] / a
        # rewrite the other rows and earlier expressions that mention v
        for r2 in users.get(v, set()) - {r}:
            if r2 <= r:
                continue
            consts[r2] = substitute(rows[r2], consts[r2], v, e, ec)
            for j in e:
                users.setdefault(j, set()).add(r2)
        for u in list(expr_users.get(v, ())):
            ue, uc = expr[u]
            if v in ue:
                uc = substitute(ue, uc, v, e, ec)
                expr[u] = (ue, uc)
                for j in e:
                    expr_users.setdefault(j, set()).add(u)
        expr[v] = (e, ec)
        for j in e:
            expr_users.setdefault(j, set()).add(v)
        row.clear()

    keep = np.array([j for j in range(n) if j not in expr], dtype=int)
    pos = {int(j): k for k, j in enumerate(keep)}
    ri, ci, vals = [], [], []
    t = np.zeros(n)
    for k, j in enumerate(keep):
        ri.append(j)
        ci.append(k)
        vals.append(1.0)
    for v, (e, ec) in expr.items():
        t[v] = ec
        for j, c in e.items():
            ri.append(v)
            ci.append(pos[j])
            vals.append(c)
    T = sp.csr_matrix((vals, (ri, ci)), shape=(n, len(keep)))
    return T, t, keep, rest


@dataclass
class StandardForm:
    """``min q @ s + cf @ y + const`` s.t. ``Es @ s + Ef @ y == e`` and ``s`` in ``cones``.

    ``cones`` lists ``(kind, size)`` with kind ``nonneg``, ``soc`` or ``psd``; PSD
    slacks use the packed upper-triangle layout of :mod:`opfrelax.conic`.
    """

    Es: sp.csr_matrix
    Ef: sp.csr_matrix
    e: np.ndarray
    q: np.ndarray
    cf: np.ndarray
    const: float
    cones: list[tuple[str, int]]
    # x = T @ (Phi @ s + Psi @ y + phi0) + t
    T: sp.csr_matrix
    t: np.ndarray
    Phi: sp.csr_matrix
    Psi: sp.csr_matrix
    phi0: np.ndarray

    @property
    def n_eq(self) -> int:
        return self.Es.shape[0]

    def recover(self, s: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.T @ (self.Phi @ s + self.Psi @ y + self.phi0) + self.t


def standard_form(p: ConicProgram) -> StandardForm:
    A0, b0, blocks = cone_rows(p)
    Ac = sp.vstack([blk[1] for blk in blocks], format="csr") if blocks else sp.csr_matrix((0, p.n))
    bc = np.concatenate([blk[2] for blk in blocks]) if blocks else np.zeros(0)
    cones = [(kind, dim) for kind, _, _, dim in blocks]

    # a variable is protected from elimination when some cone row copies it
    nnz_row = np.diff(Ac.indptr)
    single = np.flatnonzero(nnz_row == 1)
    protected = np.zeros(p.n, dtype=bool)
    protected[Ac.indices[Ac.indptr[single]]] = True
    T, t, keep, rest = _eliminate(A0, b0, protected)

    Acr = (Ac @ T).tocsr()
    bcr = bc + Ac @ t
    A0r = (A0[rest] @ T).tocsr()
    b0r = b0[rest] + A0[rest] @ t
    cr = T.T @ p.c
    c0 = p.c0 + float(p.c @ t)
    nr = T.shape[1]

    # pick a defining row for every reduced variable that has one
    Acr.eliminate_zeros()
    nnz_row = np.diff(Acr.indptr)
    def_row = np.full(nr, -1)
    for r in np.flatnonzero(nnz_row == 1):
        k = Acr.indices[Acr.indptr[r]]
        if def_row[k] < 0:
            def_row[k] = r
    defined = np.flatnonzero(def_row >= 0)
    free = np.flatnonzero(def_row < 0)
    ns = Acr.shape[0]
    coef = np.array([Acr[def_row[k], k] for k in defined]) if len(defined) else np.zeros(0)
    Phi = sp.csr_matrix((1.0 / coef, (defined, def_row[defined])), shape=(nr, ns))
    phi0 = np.zeros(nr)
    phi0[defined] = -bcr[def_row[defined]] / coef
    Psi = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(nr, len(free)))

    is_def = np.zeros(ns, dtype=bool)
    is_def[def_row[defined]] = True
    N = np.flatnonzero(~is_def)
    AcPhi = (Acr @ Phi).tocsr()
    AcPsi = (Acr @ Psi).tocsr()
    Es_cone = (sp.eye(ns, format="csr") - AcPhi)[N]
    Ef_cone = -AcPsi[N]
    e_cone = (Acr @ phi0 + bcr)[N]
    Es_eq = (A0r @ Phi).tocsr()
    Ef_eq = (A0r @ Psi).tocsr()
    e_eq = -b0r - A0r @ phi0
    Es = sp.vstack([Es_cone, Es_eq], format="csr")
    Ef = sp.vstack([Ef_cone, Ef_eq], format="csr")
    e = np.concatenate([e_cone, e_eq])
    Es.eliminate_zeros()
    Ef.eliminate_zeros()
    # drop rows that reduced to 0 == 0
    live = (np.diff(Es.indptr) + np.diff(Ef.indptr)) > 0
    if np.any(np.abs(e[~live]) > 1e-9):
        log.warning("standard form has inconsistent empty rows")
    Es, Ef, e = Es[live], Ef[live], e[live]
    q = Phi.T @ cr
    cf = Psi.T @ cr
    const = c0 + float(cr @ phi0)
    return StandardForm(Es, Ef, e, np.asarray(q).ravel(), np.asarray(cf).ravel(), const, cones,
                        T, t, Phi, Psi, phi0)


# --------------------------------------------------------------------------
# CVXOPT on the dual of the standard form


def _full_index(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of each packed entry in column-major full storage, as (i, j) and (j, i)."""
    ij = np.array(tri_index(dim))
    return ij[:, 1] * dim + ij[:, 0], ij[:, 0] * dim + ij[:, 1]


class _Layout:
    """Maps packed slack vectors to CVXOPT's full-storage cone vectors."""

    def __init__(self, cones: list[tuple[str, int]]):
        self.cones = cones
        self.l = sum(d for k, d in cones if k == "nonneg")
        self.q = [d for k, d in cones if k == "soc"]
        self.s = [d for k, d in cones if k == "psd"]
        # packed offsets in the order of ``cones``; CVXOPT wants l, then q, then s
        off, packed = 0, []
        for kind, d in cones:
            size = d * (d + 1) // 2 if kind == "psd" else d
            packed.append((kind, d, off, size))
            off += size
        self.packed = packed
        self.n_packed = off
        self.n_full = self.l + sum(self.q) + sum(d * d for d in self.s)

    def to_full(self, M: sp.csr_matrix) -> sp.csr_matrix:
        """Rows indexed by packed slack entries -> rows in full storage (halving off-diagonals)."""
        M = M.tocsr()
        parts_l, parts_q, parts_s = [], [], []
        for kind, d, off, size in self.packed:
            blk = M[off:off + size]
            if kind == "nonneg":
                parts_l.append(blk)
            elif kind == "soc":
                parts_q.append(blk)
            else:
                lo, hi = _full_index(d)
                diag = lo == hi
                w = np.where(diag, 1.0, 0.5)
                scaled = sp.diags(w) @ blk
                rows = np.r_[lo, hi[~diag]]
                src = np.r_[np.arange(size), np.flatnonzero(~diag)]
                sel = sp.csr_matrix((np.ones(len(rows)), (rows, src)), shape=(d * d, size))
                parts_s.append(sel @ scaled)
        parts = parts_l + parts_q + parts_s
        return sp.vstack(parts, format="csr") if parts else sp.csr_matrix((0, M.shape[1]))

    def from_full(self, z: np.ndarray) -> np.ndarray:
        """Full-storage cone vector (lower triangle valid) -> packed slack vector."""
        out = np.zeros(self.n_packed)
        pos_l, pos_q = 0, self.l
        pos_s = self.l + sum(self.q)
        for kind, d, off, size in self.packed:
            if kind == "nonneg":
                out[off:off + size] = z[pos_l:pos_l + size]
                pos_l += size
            elif kind == "soc":
                out[off:off + size] = z[pos_q:pos_q + size]
                pos_q += size
            else:
                lo, _ = _full_index(d)
                # the lower triangle of column-major storage is the (j, i) slot for i <= j
                ij = np.array(tri_index(d))
                lower = ij[:, 0] * d + ij[:, 1]
                out[off:off + size] = z[pos_s + lower]
                pos_s += d * d
        return out


class _KKT:
    """KKT solver for ``min c'u  s.t. G u + s = h, A u = b`` with sparse PSD columns.

    Mirrors CVXOPT's QR-based solver: the columns of ``G`` are scaled once by
    ``W^-T`` and ``H = (W^-T G)' (W^-T G)`` is handled through a QR factor of
    the scaled columns on the null space of ``A``.  Only the scaling of the PSD columns differs: each column touches a
    few matrix entries, so ``rti' U rti`` is a sum of a few outer products.
    """

    def __init__(self, G: sp.csr_matrix, A: sp.csr_matrix, layout: _Layout):
        self.G = G.tocsc()
        self.lay = layout
        self.n = G.shape[1]
        nlq = layout.l + sum(layout.q)
        self.nlq = nlq
        self.G_lq = G[:nlq].toarray()
        self.s_blocks = []
        pos = nlq
        for d in layout.s:
            Gb = G[pos:pos + d * d].tocsc()
            cols = np.flatnonzero(np.diff(Gb.indptr))
            entries = []
            for k in cols:
                lo, hi = Gb.indptr[k], Gb.indptr[k + 1]
                idx = Gb.indices[lo:hi]
                # only the lower triangle carries data; mirror it to a symmetric U
                a, b, g = idx % d, idx // d, Gb.data[lo:hi]
                low = a >= b
                a, b, g = a[low], b[low], g[low]
                off = a != b
                entries.append((np.r_[a, b[off]], np.r_[b, a[off]], np.r_[g, g[off]]))
            il, jl = np.tril_indices(d)
            w = np.where(il == jl, 1.0, math.sqrt(2.0))
            self.s_blocks.append((pos, d, cols, entries, il, jl, w))
            pos += d * d
        A = A.toarray()
        self.p = A.shape[0]
        if self.p:
            Q, R = np.linalg.qr(A.T, mode="complete")
            self.Q1, self.Q2 = Q[:, :self.p], Q[:, self.p:]
            self.RA = R[:self.p]
        else:
            self.Q1 = np.zeros((self.n, 0))
            self.Q2 = np.eye(self.n)
            self.RA = np.zeros((0, 0))

    def _scale_lq(self, X: np.ndarray) -> np.ndarray:
        """``W^-T`` on the l and q rows (both are symmetric scalings)."""
        lay = self.lay
        if lay.l:
            X[:lay.l] = (X[:lay.l].T / self.d).T
        pos = lay.l
        for Wi in self.q_inv:
            k = Wi.shape[0]
            X[pos:pos + k] = Wi @ X[pos:pos + k]
            pos += k
        return X

    def _scaled_packed(self, v: np.ndarray) -> np.ndarray:
        """``W^-T v`` with PSD parts packed (sqrt2 on off-diagonals); input in 'L' storage."""
        parts = [self._scale_lq(v[:self.nlq].copy())]
        for (pos, d, cols, entries, il, jl, w), rti in zip(self.s_blocks, self.rti):
            M = v[pos:pos + d * d].reshape(d, d, order="F")
            S = np.tril(M) + np.tril(M, -1).T
            V = rti.T @ S @ rti
            parts.append(V[il, jl] * w)
        return np.concatenate(parts)

    def factor(self, W):
        lay = self.lay
        self.d = np.array(W["d"]).ravel() if lay.l else np.zeros(0)
        self.q_inv = []
        for v, beta in zip(W["v"], W["beta"]):
            v = np.array(v).ravel()
            J = -np.eye(len(v))
            J[0, 0] = 1.0
            Jv = J @ v
            self.q_inv.append((2 * np.outer(Jv, Jv) - J) / beta)
        self.rti = [np.array(r) for r in W["rti"]]

        blocks = [self._scale_lq(self.G_lq.copy())]
        for (pos, d, cols, entries, il, jl, w), rti in zip(self.s_blocks, self.rti):
            B = np.zeros((len(il), self.n))
            for k, (a, b, g) in zip(cols, entries):
                V = (rti[a].T * g) @ rti[b]
                B[:, k] = V[il, jl] * w
            blocks.append(B)
        self.Gs = np.vstack(blocks)
        # a QR factor of the scaled columns keeps the conditioning of G instead of squaring it
        M = self.Gs @ self.Q2 if self.p else self.Gs
        if M.shape[0] < M.shape[1]:
            raise ArithmeticError("rank([G; A]) < n")
        R = la.qr(M, mode="r", check_finite=False)[0][:M.shape[1]]
        if R.size and not np.all(np.diag(R)):
            raise ArithmeticError("singular KKT system")
        self.R = R
        return self.solve

    def solve(self, x, y, z):
        bx = np.array(x).ravel()
        by = np.array(y).ravel()
        bz = np.array(z).ravel()
        wbz = self._scaled_packed(bz)
        rhs = bx + self.Gs.T @ wbz
        # ux = Q1 RA^-T by + Q2 w with (R'R) w = Q2' (rhs - H Q1 v)
        u1 = la.solve_triangular(self.RA, by, trans="T") if self.p else np.zeros(0)
        ux = self.Q1 @ u1
        H_ux = self.Gs.T @ (self.Gs @ ux) if self.p else np.zeros_like(ux)
        if self.R.size:
            r = self.Q2.T @ (rhs - H_ux)
            w = la.solve_triangular(self.R, la.solve_triangular(self.R, r, trans="T"))
            ux = ux + self.Q2 @ w
        uy = la.solve_triangular(self.RA, self.Q1.T @ (rhs - self.Gs.T @ (self.Gs @ ux))) \
            if self.p else np.zeros(0)
        # W uz = W^-T (G ux - bz), back to 'L' storage with a zero upper triangle
        v = self.Gs @ ux - wbz
        out = np.zeros_like(bz)
        out[:self.nlq] = v[:self.nlq]
        off = self.nlq
        for pos, d, cols, entries, il, jl, w in self.s_blocks:
            k = len(il)
            M = np.zeros((d, d))
            M[il, jl] = v[off:off + k] / w
            out[pos:pos + d * d] = M.ravel(order="F")
            off += k
        x[:] = _cvx(ux)
        if len(uy):
            y[:] = _cvx(uy)
        z[:] = _cvx(out)


def _cvx(v: np.ndarray):
    import cvxopt

    return cvxopt.matrix(np.ascontiguousarray(v, dtype=float))


def _spm(M: sp.spmatrix):
    import cvxopt

    M = M.tocoo()
    return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), M.shape)


class StandardFormBackend:
    """CVXOPT on the dual of the standard form with a sparse Schur-complement KKT solver."""

    name = "cvxopt-dual"
    supports_psd = True

    def __init__(self, tol: float = DEFAULT_TOL, max_iter: int = 200, verbose: bool = False):
        self.tol = tol
        self.max_iter = max_iter
        self.verbose = verbose

    def solve(self, p: ConicProgram) -> Solution:
        from cvxopt import solvers

        t0 = time.perf_counter()
        sf = standard_form(p)
        lay = _Layout(sf.cones)
        qmax = float(np.abs(sf.q).max(initial=0.0))
        qmax = max(qmax, float(np.abs(sf.cf).max(initial=0.0))) or 1.0
        # dual of  min q's + cf'y  s.t.  Es s + Ef y = e:
        #   min -e'u  s.t.  Es'u + s' = q,  Ef'u = cf
        G = lay.to_full(sf.Es.T.tocsr())
        hq = lay.to_full(sp.csr_matrix(sf.q.reshape(-1, 1))).toarray().ravel() / qmax
        A = sf.Ef.T.tocsr()
        b = sf.cf / qmax
        dims = {"l": lay.l, "q": lay.q, "s": lay.s}
        kkt = _KKT(G, A, lay)
        opts = {"show_progress": self.verbose, "maxiters": self.max_iter, "abstol": self.tol,
                "reltol": self.tol, "feastol": self.tol / 10}
        try:
            res = solvers.conelp(_cvx(-sf.e), _spm(G), _cvx(hq), dims, _spm(A), _cvx(b),
                                 kktsolver=kkt.factor, options=opts)
        except (ArithmeticError, ValueError, la.LinAlgError) as exc:
            log.error("cvxopt (standard-form dual) failed: %s", exc)
            return Solution("failed", math.nan, None, backend=self.name,
                            backend_status=f"exception: {exc}",
                            solve_time=time.perf_counter() - t0, tol=self.tol)
        raw = res["status"]
        # infeasibility of the dual program means unboundedness of ours and vice versa
        status = {"optimal": "optimal", "primal infeasible": "unbounded",
                  "dual infeasible": "infeasible"}.get(raw, "inaccurate")
        if res["z"] is None:
            return Solution("failed" if status == "inaccurate" else status, math.nan, None,
                            backend=self.name, backend_status=raw,
                            solve_time=time.perf_counter() - t0, tol=self.tol)
        s = lay.from_full(np.array(res["z"]).ravel())
        yv = np.array(res["y"]).ravel() if len(sf.cf) else np.zeros(0)
        x = sf.recover(s, yv)
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
