"""Relaxation models of AC optimal power flow over a shared variable registry.

Variables are named scalars.  The lifted voltage matrix ``W = V V^H`` is
represented by ``w[i]`` (diagonal), ``wr[i,j]`` and ``wi[i,j]`` (real and
imaginary part of ``W_ij`` for bus indices ``i < j``).  Polar quantities are
``v[i]`` and ``th[i]``; branch-pair quantities ``td``, ``cs``, ``sn`` and ``vv``
stand for the angle difference, its cosine and sine, and ``v_i v_j``.

Variants:

``SDR``          one PSD block over all buses; by default the real 2n x 2n
                 block read through the averaging map (same optimal value,
                 much better conditioned dual), optionally the Hermitian form
``CHR-C``        one Hermitian PSD block per clique, copies of shared
                 off-diagonal entries tied by linking equalities
``CHR-Rms``      per clique a real symmetric 2d x 2d block with the
                 ring-isomorphism structure imposed by equalities
``CHR-R``        per clique an unstructured real 2d x 2d block; W is read off
                 through the averaging map ``(B1 + B3)/2 + i (B2 - B2^T)/2``
``QC``           polar envelopes with recursive McCormick products
``QC-TLM``       QC with extreme-point envelopes for the trilinear terms
``E-CHR-TLM-C``  CHR-C intersected with QC-TLM plus lifted nonlinear cuts and
                 thermal voltage-difference cuts, on tightened bounds
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import cuts as cutmod
from .casefmt import DEFAULT_ANGLE_LIMIT, Network, build_admittance
from .chordal import CliqueDecomposition, decompose
from .conic import DEFAULT_TOL, ConicProgram, Solution, solve, tri_index
from .envelope import (Interval, cos_range, linking_constraints, mccormick_bilinear, sin_range,
                       soc_minor_cut, square_envelope, trig_envelopes, trilinear_lambda_envelope)
from .expr import PSD, RSOC, SOC, Affine, AffineCutSet, Constraint, Linear, constraint_variables, lin

log = logging.getLogger(__name__)

VARIANTS = ("SDR", "CHR-C", "CHR-Rms", "CHR-R", "QC", "QC-TLM", "E-CHR-TLM-C")
ALIASES = {
    "sdr": "SDR", "chr": "CHR-C", "chr-c": "CHR-C", "chr-rms": "CHR-Rms", "chr-r": "CHR-R",
    "qc": "QC", "qc-tlm": "QC-TLM", "e-chr-tlm-c": "E-CHR-TLM-C",
}
CHORDAL_VARIANTS = ("CHR-C", "CHR-Rms", "CHR-R", "E-CHR-TLM-C")
POLAR_VARIANTS = ("QC", "QC-TLM", "E-CHR-TLM-C")
TIGHTENED_VARIANTS = ("QC-TLM", "E-CHR-TLM-C")
LARGE_CASE_BUSES = 1000


def canonical_variant(name: str) -> str:
    if name in VARIANTS:
        return name
    try:
        return ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model variant {name!r}; choose from {', '.join(ALIASES)}") from None


def _pair(i: int, j: int) -> str:
    return f"{i},{j}"


def W_DIAG(i: int) -> str:
    return f"w[{i}]"


def W_RE(i: int, j: int) -> str:
    return f"wr[{_pair(i, j)}]"


def W_IM(i: int, j: int) -> str:
    return f"wi[{_pair(i, j)}]"


# --------------------------------------------------------------------------
# Hermitian blocks and their real lift


@dataclass(frozen=True)
class HermitianBlock:
    """A clique's Hermitian submatrix of W as variable names.

    ``diag[a]`` names ``W_vv`` for ``v = vertices[a]``; ``off[(a, b)]`` with
    ``a < b`` names the real and imaginary parts of ``W_{vertices[a] vertices[b]}``.
    """

    vertices: tuple[int, ...]
    diag: tuple[str, ...]
    off: Mapping[tuple[int, int], tuple[str, str]]

    @property
    def d(self) -> int:
        return len(self.vertices)

    def matrix(self, point: Mapping[str, float]) -> np.ndarray:
        d = self.d
        m = np.zeros((d, d), dtype=complex)
        for a in range(d):
            m[a, a] = point[self.diag[a]]
        for (a, b), (re, im) in self.off.items():
            m[a, b] = complex(point[re], point[im])
            m[b, a] = m[a, b].conjugate()
        return m


@dataclass(frozen=True)
class RealLift:
    """``[[Re W, -Im W], [Im W, Re W]]`` with entries as affine expressions."""

    block: HermitianBlock
    psd: PSD

    @property
    def dim(self) -> int:
        return self.psd.dim

    def matrix(self, point: Mapping[str, float]) -> np.ndarray:
        return self.psd.matrix(point)


def lower_complex_to_real(block: HermitianBlock, tag: str = "psd") -> RealLift:
    d = block.d
    entries: dict[tuple[int, int], Affine] = {}
    for a in range(d):
        entries[(a, a)] = Affine.of(block.diag[a])
        entries[(d + a, d + a)] = Affine.of(block.diag[a])
        entries[(a, d + a)] = Affine()
    for (a, b), (re, im) in block.off.items():
        # W_ab = re + i im (a < b); Im W is skew so Im W_ba = -im
        entries[(a, b)] = Affine.of(re)
        entries[(d + a, d + b)] = Affine.of(re)
        entries[(a, d + b)] = Affine({im: -1.0})   # -Im W_ab
        entries[(b, d + a)] = Affine({im: 1.0})    # -Im W_ba
    return RealLift(block, PSD(2 * d, entries, tag))


def realify(W: np.ndarray) -> np.ndarray:
    """Numeric ring-isomorphism image of a complex matrix."""
    W = np.asarray(W, dtype=complex)
    return np.block([[W.real, -W.imag], [W.imag, W.real]])


def averaged_hermitian(X: np.ndarray) -> np.ndarray:
    """``(B1 + B3)/2 + i (B2 - B2^T)/2`` for ``X = [[B1, B2^T], [B2, B3]]``."""
    n = X.shape[0] // 2
    B1, B2, B3 = X[:n, :n], X[n:, :n], X[n:, n:]
    return (B1 + B3) / 2 + 1j * (B2 - B2.T) / 2


# --------------------------------------------------------------------------
# configuration and model container


@dataclass(frozen=True)
class ModelConfig:
    tighten: bool = True                 # use analytically tightened bounds (QC-TLM, E-CHR-TLM-C)
    lambda_envelopes: bool | None = None  # None: on unless the case exceeds LARGE_CASE_BUSES
    lnc: bool = True
    vdiff: bool = True
    sdr_lift: str = "real"               # "real" (averaging map) or "hermitian"

    def __post_init__(self):
        if self.sdr_lift not in ("real", "hermitian"):
            raise ValueError(f"unknown sdr_lift {self.sdr_lift!r}")

    def to_json(self) -> dict:
        return {"tighten": self.tighten, "lambda_envelopes": self.lambda_envelopes,
                "lnc": self.lnc, "vdiff": self.vdiff, "sdr_lift": self.sdr_lift}


@dataclass
class ModelInstance:
    variant: str
    net: Network
    config: ModelConfig = field(default_factory=ModelConfig)
    variables: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    objective: Affine = field(default_factory=Affine)
    blocks: list[HermitianBlock] = field(default_factory=list)
    lifts: list[list[str]] = field(default_factory=list)   # real-block variable names (CHR-Rms / CHR-R)
    decomposition: CliqueDecomposition | None = None
    bounds: cutmod.TightenedBounds | None = None
    diagnostics: list[str] = field(default_factory=list)
    n_linking: int = 0

    def var(self, name: str) -> str:
        if name not in self.index:
            self.index[name] = len(self.variables)
            self.variables.append(name)
        return name

    def has(self, name: str) -> bool:
        return name in self.index

    def add(self, c: Constraint) -> None:
        missing = [v for v in constraint_variables(c) if v not in self.index]
        if missing:
            raise KeyError(f"constraint {c.tag or type(c).__name__} uses unregistered variables {missing[:3]}")
        self.constraints.append(c)

    def add_all(self, cs: Iterable[Constraint]) -> None:
        for c in cs:
            self.add(c)

    def stats(self) -> dict:
        kinds = Counter()
        tags = Counter()
        psd_sizes = Counter()
        for c in self.constraints:
            if isinstance(c, Linear):
                kinds["equality" if c.sense == "==" else "inequality"] += 1
            elif isinstance(c, PSD):
                kinds["psd"] += 1
                psd_sizes[c.dim] += 1
            else:
                kinds[type(c).__name__.lower()] += 1
            tags[c.tag or "untagged"] += 1
        return {
            "variant": self.variant,
            "variables": len(self.variables),
            "constraints": dict(sorted(kinds.items())),
            "by_tag": dict(sorted(tags.items())),
            "psd_block_sizes": {str(k): v for k, v in sorted(psd_sizes.items())},
            "linking_equalities": self.n_linking,
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.stats(), sort_keys=True).encode())
        h.update("\n".join(self.variables).encode())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# shared pieces


def _angle_side_explicit(br) -> tuple[bool, bool]:
    return br.ang_min > -DEFAULT_ANGLE_LIMIT + 1e-12, br.ang_max < DEFAULT_ANGLE_LIMIT - 1e-12


@dataclass
class _PairInfo:
    i: int
    j: int
    branches: list[int]
    lo: float = -DEFAULT_ANGLE_LIMIT       # bounds on theta_i - theta_j
    hi: float = DEFAULT_ANGLE_LIMIT
    explicit_lo: bool = False
    explicit_hi: bool = False


def _branch_pairs(net: Network, bounds: cutmod.TightenedBounds | None) -> dict[tuple[int, int], _PairInfo]:
    """Bus pairs joined by in-service branches with intersected angle bounds."""
    idx = net.bus_index
    pairs: dict[tuple[int, int], _PairInfo] = {}
    for k, br in net.active_branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        if f == t:
            continue
        i, j = min(f, t), max(f, t)
        info = pairs.setdefault((i, j), _PairInfo(i, j, []))
        info.branches.append(k)
        if bounds is not None and bounds.branches[k] is not None:
            lo, hi = bounds.branches[k].angle
        else:
            lo, hi = br.ang_min, br.ang_max
        ex_lo, ex_hi = _angle_side_explicit(br)
        if bounds is not None and bounds.branches[k] is not None:
            tb = bounds.branches[k]
            ex_lo = ex_lo or tb.angle.lo > tb.input_angle.lo
            ex_hi = ex_hi or tb.angle.hi < tb.input_angle.hi
        if f > t:  # theta_i - theta_j = -(theta_f - theta_t)
            lo, hi = -hi, -lo
            ex_lo, ex_hi = ex_hi, ex_lo
        info.lo, info.hi = max(info.lo, lo), min(info.hi, hi)
        info.explicit_lo |= ex_lo
        info.explicit_hi |= ex_hi
    for info in pairs.values():
        if info.lo > info.hi:
            raise ValueError(f"empty angle interval between buses {info.i} and {info.j}")
    return pairs


def _w_entry(i: int, j: int) -> tuple[Affine, Affine]:
    """Real and imaginary part of ``W_ij`` in canonical variables."""
    if i < j:
        return Affine.of(W_RE(i, j)), Affine.of(W_IM(i, j))
    return Affine.of(W_RE(j, i)), Affine({W_IM(j, i): -1.0})


def _flow(y_self: complex, y_tr: complex, i: int, j: int) -> tuple[Affine, Affine]:
    """``S = conj(y_self) W_ii + conj(y_tr) W_ij`` at the ``i`` end of a branch."""
    re, im = _w_entry(i, j)
    a, c = y_self.conjugate(), y_tr.conjugate()
    P = lin((a.real, W_DIAG(i))) + re * c.real - im * c.imag
    Q = lin((a.imag, W_DIAG(i))) + re * c.imag + im * c.real
    return P, Q


def _add_network_constraints(m: ModelInstance, pairs: dict[tuple[int, int], _PairInfo],
                             angle_mode: str) -> None:
    """Generator limits, cost epigraphs, voltage limits, power balance, thermal and angle limits.

    ``angle_mode`` is ``explicit`` (only bounds present in the data, used by the
    pure W models) or ``all`` (every pair, for models with polar variables).
    """
    net = m.net
    idx = net.bus_index
    n = net.n_bus
    adm = build_admittance(net)
    vmin, vmax = net.vmin(), net.vmax()
    for i in range(n):
        m.var(W_DIAG(i))
        m.add(Linear(lin((1, W_DIAG(i)), const=-vmin[i] ** 2), ">=", "vmag"))
        m.add(Linear(lin((1, W_DIAG(i)), const=-vmax[i] ** 2), "<=", "vmag"))
    for (i, j) in pairs:
        m.var(W_RE(i, j))
        m.var(W_IM(i, j))

    p_bal = [Affine() for _ in range(n)]
    q_bal = [Affine() for _ in range(n)]
    objective = Affine()
    for g, gen in net.active_generators():
        b = idx[gen.bus]
        pg, qg = m.var(f"pg[{g}]"), m.var(f"qg[{g}]")
        pmin, pmax, qmin, qmax = net.gen_limits_pu(gen)
        m.add_all([Linear(lin((1, pg), const=-pmin), ">=", "gen"), Linear(lin((1, pg), const=-pmax), "<=", "gen"),
                   Linear(lin((1, qg), const=-qmin), ">=", "gen"), Linear(lin((1, qg), const=-qmax), "<=", "gen")])
        p_bal[b] = p_bal[b] + Affine.of(pg)
        q_bal[b] = q_bal[b] + Affine.of(qg)
        a2, a1, a0 = net.cost_pu(gen)
        if a2 > 0:
            # t >= P**2 keeps the epigraph variable on the scale of P
            t = m.var(f"psq[{g}]")
            m.add(RSOC(Affine.of(t), Affine(const=0.5), [Affine.of(pg)], "cost"))
            objective = objective + lin((a2, t))
        elif a2 < 0:
            raise ValueError(f"generator {g} has a concave cost; the relaxation needs convex costs")
        objective = objective + lin((a1, pg), const=a0)
    m.objective = objective

    load = net.load_pu()
    for i in range(n):
        ysh = adm.shunts[i].conjugate()
        p_bal[i] = p_bal[i] - lin((ysh.real, W_DIAG(i)), const=load[i].real)
        q_bal[i] = q_bal[i] - lin((ysh.imag, W_DIAG(i)), const=load[i].imag)
    for k, br in net.active_branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = adm.blocks[k]
        Pf, Qf = _flow(yff, yft, f, t)
        Pt, Qt = _flow(ytt, ytf, t, f)
        p_bal[f] = p_bal[f] - Pf
        q_bal[f] = q_bal[f] - Qf
        p_bal[t] = p_bal[t] - Pt
        q_bal[t] = q_bal[t] - Qt
        if br.limited:
            rate = net.rate_pu(br)
            m.add(SOC(Affine(const=rate), [Pf, Qf], "thermal"))
            m.add(SOC(Affine(const=rate), [Pt, Qt], "thermal"))
    for i in range(n):
        m.add(Linear(p_bal[i], "==", "balance-p"))
        m.add(Linear(q_bal[i], "==", "balance-q"))

    for (i, j), info in pairs.items():
        re, im = _w_entry(i, j)
        use_hi = angle_mode == "all" or info.explicit_hi
        use_lo = angle_mode == "all" or info.explicit_lo
        if use_hi:
            m.add(Linear(im * math.cos(info.hi) - re * math.sin(info.hi), "<=", "angle"))
        if use_lo:
            m.add(Linear(re * math.sin(info.lo) - im * math.cos(info.lo), "<=", "angle"))


def _clique_pairs(blocks: Sequence[Sequence[int]]) -> list[tuple[int, int]]:
    out = set()
    for blk in blocks:
        for a, b in zip(*np.triu_indices(len(blk), 1)):
            i, j = blk[a], blk[b]
            out.add((min(i, j), max(i, j)))
    return sorted(out)


def _hermitian_blocks(m: ModelInstance, blocks: Sequence[Sequence[int]], shared_copies: bool) -> None:
    """Register per-clique Hermitian blocks (copies + linking equalities when ``shared_copies``)."""
    owner: dict[tuple[int, int], int] = {}
    for k, blk in enumerate(blocks):
        verts = tuple(sorted(blk))
        off = {}
        for a in range(len(verts)):
            for b in range(a + 1, len(verts)):
                i, j = verts[a], verts[b]
                canon = (W_RE(i, j), W_IM(i, j))
                if (i, j) not in owner:
                    owner[(i, j)] = k
                    m.var(canon[0])
                    m.var(canon[1])
                    off[(a, b)] = canon
                elif shared_copies:
                    copy = (m.var(f"{canon[0]}@{k}"), m.var(f"{canon[1]}@{k}"))
                    off[(a, b)] = copy
                    for c, orig in zip(copy, canon):
                        m.add(Linear(lin((1, c), (-1, orig)), "==", "linking"))
                        m.n_linking += 1
                else:
                    off[(a, b)] = canon
        m.blocks.append(HermitianBlock(verts, tuple(W_DIAG(i) for i in verts), off))


def linking_equalities(decomposition: CliqueDecomposition | Sequence[Sequence[int]]) -> AffineCutSet:
    """Equalities tying every per-block copy of a shared off-diagonal entry to its canonical variable.

    Diagonal entries are shared by identity, so only off-diagonal entries present
    in several blocks produce constraints (two real equalities per complex entry).
    """
    blocks = decomposition.blocks if isinstance(decomposition, CliqueDecomposition) else decomposition
    seen: set[tuple[int, int]] = set()
    out = AffineCutSet()
    for k, blk in enumerate(blocks):
        verts = sorted(blk)
        for a in range(len(verts)):
            for b in range(a + 1, len(verts)):
                i, j = verts[a], verts[b]
                if (i, j) not in seen:
                    seen.add((i, j))
                    continue
                for canon in (W_RE(i, j), W_IM(i, j)):
                    out.add(Linear(lin((1, f"{canon}@{k}"), (-1, canon)), "==", "linking"))
    return out


def _real_blocks(m: ModelInstance, blocks: Sequence[Sequence[int]], structured: bool) -> None:
    """Per-clique real 2d x 2d blocks tied to the canonical W variables.

    ``structured`` imposes ``B1 = B3`` and a skew ``B2``; otherwise W is read
    through the averaging map and the block is otherwise free.
    """
    for k, blk in enumerate(blocks):
        verts = tuple(sorted(blk))
        d = len(verts)
        D = 2 * d
        names = {}
        for (a, b) in tri_index(D):
            names[(a, b)] = m.var(f"x{k}[{a},{b}]")
        X = lambda a, b: names[(min(a, b), max(a, b))]  # noqa: E731
        m.lifts.append([names[ab] for ab in tri_index(D)])
        m.add(PSD(D, {ab: Affine.of(nm) for ab, nm in names.items()}, "psd"))
        if structured:
            for a in range(d):
                for b in range(a, d):
                    m.add(Linear(lin((1, X(a, b)), (-1, X(d + a, d + b))), "==", "ring"))
            for a in range(d):
                m.add(Linear(lin((1, X(d + a, a))), "==", "ring"))
                for b in range(a + 1, d):
                    m.add(Linear(lin((1, X(d + a, b)), (1, X(d + b, a))), "==", "ring"))
            for a in range(d):
                m.add(Linear(lin((1, X(a, a)), (-1, W_DIAG(verts[a]))), "==", "lift-link"))
            for a in range(d):
                for b in range(a + 1, d):
                    i, j = verts[a], verts[b]
                    m.var(W_RE(i, j))
                    m.var(W_IM(i, j))
                    m.add(Linear(lin((1, X(a, b)), (-1, W_RE(i, j))), "==", "lift-link"))
                    m.add(Linear(lin((1, X(d + a, b)), (-1, W_IM(i, j))), "==", "lift-link"))
        else:
            for a in range(d):
                m.add(Linear(lin((0.5, X(a, a)), (0.5, X(d + a, d + a)), (-1, W_DIAG(verts[a]))),
                             "==", "lift-link"))
            for a in range(d):
                for b in range(a + 1, d):
                    i, j = verts[a], verts[b]
                    m.var(W_RE(i, j))
                    m.var(W_IM(i, j))
                    m.add(Linear(lin((0.5, X(a, b)), (0.5, X(d + a, d + b)), (-1, W_RE(i, j))),
                                 "==", "lift-link"))
                    m.add(Linear(lin((0.5, X(d + a, b)), (-0.5, X(d + b, a)), (-1, W_IM(i, j))),
                                 "==", "lift-link"))
        m.blocks.append(HermitianBlock(verts, tuple(W_DIAG(i) for i in verts),
                                       {(a, b): (W_RE(verts[a], verts[b]), W_IM(verts[a], verts[b]))
                                        for a in range(d) for b in range(a + 1, d)}))


def _polar_part(m: ModelInstance, pairs: dict[tuple[int, int], _PairInfo], trilinear: bool,
                soc_minors: bool, v_lo: Sequence[float], v_hi: Sequence[float]) -> dict:
    """Polar variables and envelopes linking them to the W variables of branch pairs."""
    net = m.net
    n = net.n_bus
    ref = net.bus_index[net.ref_bus]
    boxes = [Interval(float(v_lo[i]), float(v_hi[i])) for i in range(n)]
    for i in range(n):
        v = m.var(f"v[{i}]")
        m.var(f"th[{i}]")
        m.add_all(square_envelope(v, boxes[i], hat=W_DIAG(i)))
    m.add(Linear(lin((1, f"th[{ref}]")), "==", "ref-angle"))
    envs = {}
    for (i, j), info in pairs.items():
        key = _pair(i, j)
        td, cs, sn, vv = (m.var(f"td[{key}]"), m.var(f"cs[{key}]"), m.var(f"sn[{key}]"),
                          m.var(f"vv[{key}]"))
        ab = Interval(info.lo, info.hi)
        m.add(Linear(lin((1, td), (-1, f"th[{i}]"), (1, f"th[{j}]")), "==", "angle-diff"))
        cset, sset = trig_envelopes(td, ab, cs, sn)
        m.add_all(cset)
        m.add_all(s for s in sset if s.tag != "box")
        m.add_all(mccormick_bilinear(f"v[{i}]", f"v[{j}]", boxes[i], boxes[j], hat=vv, with_bounds=False))
        wr, wi = W_RE(i, j), W_IM(i, j)
        if trilinear:
            env_c = trilinear_lambda_envelope(f"v[{i}]", f"v[{j}]", cs, boxes[i], boxes[j],
                                              cos_range(ab), hat=wr, prefix=f"lc[{key}]")
            env_s = trilinear_lambda_envelope(f"v[{i}]", f"v[{j}]", sn, boxes[i], boxes[j],
                                              sin_range(ab), hat=wi, prefix=f"ls[{key}]")
            for env in (env_c, env_s):
                for w in env.weights:
                    m.var(w)
                m.add_all(env.cuts)
            m.add_all(linking_constraints(env_c, env_s, boxes[i], boxes[j]))
            envs[(i, j)] = (env_c, env_s)
        else:
            vvbox = Interval(boxes[i].lo * boxes[j].lo, boxes[i].hi * boxes[j].hi)
            m.add_all(mccormick_bilinear(vv, cs, vvbox, cos_range(ab), hat=wr, with_bounds=False))
            m.add_all(mccormick_bilinear(vv, sn, vvbox, sin_range(ab), hat=wi, with_bounds=False))
        if soc_minors:
            m.add(soc_minor_cut(W_DIAG(i), W_DIAG(j), wr, wi))
    return envs


# --------------------------------------------------------------------------
# model construction


def build_model(net: Network, variant: str, decomposition: CliqueDecomposition | None = None,
                bounds: cutmod.TightenedBounds | None = None,
                config: ModelConfig | None = None) -> ModelInstance:
    variant = canonical_variant(variant)
    config = config or ModelConfig()
    if variant in CHORDAL_VARIANTS and decomposition is None:
        raise ValueError(f"{variant} needs a clique decomposition")
    m = ModelInstance(variant, net, config, decomposition=decomposition)
    use_tight = variant in TIGHTENED_VARIANTS and config.tighten
    if use_tight and bounds is None:
        bounds = cutmod.tighten_angle_bounds(net)
    m.bounds = bounds if use_tight else None
    if m.bounds is not None:
        m.diagnostics.extend(m.bounds.diagnostics)
    pairs = _branch_pairs(net, m.bounds)
    for i in range(net.n_bus):
        m.var(W_DIAG(i))
    lam = config.lambda_envelopes
    if lam is None:
        lam = net.n_bus <= LARGE_CASE_BUSES

    sdr_hermitian = variant == "SDR" and config.sdr_lift == "hermitian"
    if variant == "SDR":
        full = [list(range(net.n_bus))]
        if sdr_hermitian:
            _hermitian_blocks(m, full, shared_copies=False)
        else:
            _real_blocks(m, full, structured=False)
    elif variant in ("CHR-C", "E-CHR-TLM-C"):
        _hermitian_blocks(m, decomposition.blocks, shared_copies=True)
    elif variant == "CHR-Rms":
        _real_blocks(m, decomposition.blocks, structured=True)
    elif variant == "CHR-R":
        _real_blocks(m, decomposition.blocks, structured=False)

    _add_network_constraints(m, pairs, "all" if variant in POLAR_VARIANTS else "explicit")

    if sdr_hermitian or variant in ("CHR-C", "E-CHR-TLM-C"):
        for blk in m.blocks:
            m.add(lower_complex_to_real(blk).psd)

    if variant in POLAR_VARIANTS:
        v_lo, v_hi = net.vmin(), net.vmax()
        trilinear = variant != "QC" and lam
        _polar_part(m, pairs, trilinear=trilinear, soc_minors=variant != "E-CHR-TLM-C",
                    v_lo=v_lo, v_hi=v_hi)

    if variant == "E-CHR-TLM-C":
        _valid_inequalities(m, pairs)
    return m


def _valid_inequalities(m: ModelInstance, pairs: dict[tuple[int, int], _PairInfo]) -> None:
    net = m.net
    idx = net.bus_index
    vmin, vmax = net.vmin(), net.vmax()
    boxes = [Interval(float(a), float(b)) for a, b in zip(vmin, vmax)]
    if m.config.lnc:
        for (i, j), info in pairs.items():
            m.add_all(cutmod.lnc_cuts(W_DIAG(i), W_DIAG(j), W_RE(i, j), W_IM(i, j), boxes[i], boxes[j],
                                      Interval(info.lo, info.hi)))
    if m.config.vdiff and m.bounds is not None:
        for k, br in net.active_branches():
            bb = m.bounds.branches[k]
            if bb is None or not bb.surfaces:
                continue
            f, t = idx[br.from_bus], idx[br.to_bus]
            if f == t:
                continue
            vv = f"vv[{_pair(min(f, t), max(f, t))}]"
            for direction, (a, b) in ((cutmod.FORWARD, (f, t)), (cutmod.REVERSE, (t, f))):
                s = bb.surfaces[direction]
                iv = bb.vdiff.get(direction)
                if iv is None:
                    m.diagnostics.append(f"branch {k} {direction}: voltage-difference cut dropped")
                m.add_all(cutmod.vdiff_envelope_cuts(s, f"v[{a}]", f"v[{b}]", W_DIAG(a), W_DIAG(b), vv, iv))


def build(net: Network, variant: str, merge: str = "none", coeffs=None, k_max: int | None = None,
          weight_mode: str = "normalized", config: ModelConfig | None = None) -> ModelInstance:
    """Convenience wrapper: decompose if the variant needs it, then build."""
    variant = canonical_variant(variant)
    dec = None
    if variant in CHORDAL_VARIANTS:
        _, dec = decompose(net, merge, coeffs, k_max=k_max, mode=weight_mode)
    return build_model(net, variant, dec, None, config)


# --------------------------------------------------------------------------
# lowering and solving


def assemble(m: ModelInstance) -> ConicProgram:
    """Lower a model to conic standard form in registry order."""
    n = len(m.variables)
    index = m.index

    def row_of(e: Affine, sign: float = 1.0):
        cols, vals = [], []
        for name, coef in e.terms.items():
            if coef != 0:
                try:
                    cols.append(index[name])
                except KeyError:
                    raise KeyError(f"unregistered variable {name!r}") from None
                vals.append(sign * coef)
        return cols, vals, sign * e.const

    def block(rows):
        r_idx, c_idx, v_all, b = [], [], [], []
        for r, (cols, vals, const) in enumerate(rows):
            r_idx += [r] * len(cols)
            c_idx += cols
            v_all += vals
            b.append(const)
        A = sp.csr_matrix((v_all, (r_idx, c_idx)), shape=(len(rows), n))
        return A, np.array(b, dtype=float)

    c = np.zeros(n)
    for name, coef in m.objective.terms.items():
        c[index[name]] += coef
    prog = ConicProgram(n, c, m.objective.const, names=list(m.variables))
    eq, ineq = [], []
    cones = []
    for con in m.constraints:
        if isinstance(con, Linear):
            if con.sense == "==":
                eq.append(row_of(con.expr))
            else:
                ineq.append(row_of(con.expr, 1.0 if con.sense == ">=" else -1.0))
        else:
            cones.append(con)
    if eq:
        prog.add_block("zero", *block(eq), tag="linear")
    if ineq:
        prog.add_block("nonneg", *block(ineq), tag="linear")
    for con in cones:
        if isinstance(con, SOC):
            prog.add_block("soc", *block([row_of(con.head)] + [row_of(a) for a in con.args]), tag=con.tag)
        elif isinstance(con, RSOC):
            prog.add_block("rsoc", *block([row_of(con.u), row_of(con.v)] + [row_of(a) for a in con.args]),
                           tag=con.tag)
        else:
            zero = Affine()
            rows = [row_of(con.entries.get(ij, zero)) for ij in tri_index(con.dim)]
            prog.add_block("psd", *block(rows), dim=con.dim, tag=con.tag)
    return prog


@dataclass
class ModelSolution:
    model: ModelInstance
    program: ConicProgram
    solution: Solution

    @property
    def status(self) -> str:
        return self.solution.status

    @property
    def objective(self) -> float:
        return self.solution.objective

    def values(self) -> dict[str, float]:
        if self.solution.x is None:
            return {}
        return dict(zip(self.model.variables, map(float, self.solution.x)))


def solve_model(m: ModelInstance, tol: float = DEFAULT_TOL, backend=None) -> ModelSolution:
    prog = assemble(m)
    return ModelSolution(m, prog, solve(prog, backend=backend, tol=tol))


def polish_rank(sol: ModelSolution, slack: float = 1e-7, tol: float = DEFAULT_TOL,
                backend=None) -> ModelSolution:
    """Re-solve over the near-optimal face minimising ``tr(W)``.

    Interior-point solvers return the analytic centre of the optimal face, which
    has maximal rank when the optimum is not unique (free reactive dispatch, for
    instance).  Minimising the trace among solutions within ``slack`` (relative)
    of the bound selects a low-rank point, so exact instances recover cleanly.
    The lower bound itself is the objective of ``sol``, not of the polished solve.
    """
    if not math.isfinite(sol.objective):
        raise ValueError("polishing needs a solved model")
    m = sol.model
    cap = sol.objective + slack * max(abs(sol.objective), 1.0)
    polished = replace(m, constraints=[*m.constraints, Linear(m.objective - cap, "<=", "polish")],
                       objective=Affine({W_DIAG(i): 1.0 for i in range(m.net.n_bus)}))
    return solve_model(polished, tol=tol, backend=backend)


# --------------------------------------------------------------------------
# voltage recovery


@dataclass
class Recovery:
    voltages: np.ndarray
    rank_ratios: list[float]
    balance_residual: float
    exact: bool

    @property
    def max_ratio(self) -> float:
        return max(self.rank_ratios, default=0.0)

    def to_json(self) -> dict:
        return {"max_rank_ratio": self.max_ratio, "balance_residual": self.balance_residual,
                "exact": self.exact}


def power_balance_residual(net: Network, V: np.ndarray, values: Mapping[str, float]) -> float:
    adm = build_admittance(net)
    idx = net.bus_index
    inj = V * np.conj(adm.ybus @ V)
    sg = np.zeros(net.n_bus, dtype=complex)
    for g, gen in net.active_generators():
        sg[idx[gen.bus]] += complex(values.get(f"pg[{g}]", 0.0), values.get(f"qg[{g}]", 0.0))
    return float(np.abs(sg - net.load_pu() - inj).max())


def recover_voltages(values: Mapping[str, float], model: ModelInstance,
                     threshold: float = 1e-5) -> Recovery:
    """Leading-eigenvector voltages per block, phase-aligned across block overlaps."""
    net = model.net
    n = net.n_bus
    V = np.full(n, np.nan, dtype=complex)
    ratios: list[float] = []
    if model.blocks:
        order = _block_order(model.blocks)
        for k in order:
            blk = model.blocks[k]
            Wb = blk.matrix(values)
            lam, vec = np.linalg.eigh(Wb)
            top = max(lam[-1], 1e-300)
            ratios.append(float(max(lam[-2], 0.0) / top) if blk.d > 1 else 0.0)
            u = vec[:, -1] * math.sqrt(max(lam[-1], 0.0))
            known = [a for a, v in enumerate(blk.vertices) if not np.isnan(V[v])]
            if known:
                z = sum(V[blk.vertices[a]] * np.conj(u[a]) for a in known)
                if abs(z) > 0:
                    u = u * (z / abs(z))
            for a, v in enumerate(blk.vertices):
                if np.isnan(V[v]):
                    V[v] = u[a]
    else:
        for i in range(n):
            V[i] = values[f"v[{i}]"] * np.exp(1j * values[f"th[{i}]"])
    missing = np.isnan(V)
    if missing.any():
        V[missing] = np.sqrt([values.get(W_DIAG(i), 1.0) for i in np.flatnonzero(missing)])
    ref = net.bus_index[net.ref_bus]
    if abs(V[ref]) > 0:
        V = V * (abs(V[ref]) / V[ref])
    resid = power_balance_residual(net, V, values)
    exact = max(ratios, default=0.0) <= threshold
    return Recovery(V, ratios, resid, exact)


def _block_order(blocks: Sequence[HermitianBlock]) -> list[int]:
    """Breadth-first order over the maximum-overlap tree of the blocks."""
    from .chordal import clique_tree

    edges = clique_tree([b.vertices for b in blocks])
    adj: dict[int, list[int]] = {k: [] for k in range(len(blocks))}
    for e in edges:
        adj[e.a].append(e.b)
        adj[e.b].append(e.a)
    seen, order = set(), []
    for root in range(len(blocks)):
        if root in seen:
            continue
        queue = [root]
        seen.add(root)
        while queue:
            k = queue.pop(0)
            order.append(k)
            for c in sorted(adj[k]):
                if c not in seen:
                    seen.add(c)
                    queue.append(c)
    return order


__all__ = [
    "VARIANTS", "ModelConfig", "ModelInstance", "HermitianBlock", "RealLift", "build_model", "build",
    "lower_complex_to_real", "realify", "averaged_hermitian", "linking_equalities", "assemble",
    "solve_model", "ModelSolution", "recover_voltages", "Recovery", "canonical_variant",
    "power_balance_residual",
]
