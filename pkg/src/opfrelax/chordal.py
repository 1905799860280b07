"""Sparsity graphs, chordal extensions, clique trees and clique merging.

Vertices are bus indices ``0..n-1`` (positions in ``Network.buses``); bus ids are
kept alongside for reporting.  The chordal extension uses an approximate minimum
degree ordering followed by symbolic elimination.  Two merge strategies are
provided: a parent-child sweep over the clique tree and a greedy merge over the
clique graph driven by the per-iteration cost model.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .casefmt import Network

WEIGHT_MODES = ("normalized", "raw")


# --------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class SparsityGraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    labels: tuple = ()

    def __post_init__(self):
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.n} vertices")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(self.n)))

    @classmethod
    def from_network(cls, net: Network) -> "SparsityGraph":
        idx = net.bus_index
        edges = [(idx[br.from_bus], idx[br.to_bus]) for _, br in net.active_branches()
                 if br.from_bus != br.to_bus]
        return cls(net.n_bus, tuple(edges), tuple(b.id for b in net.buses))

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj


@dataclass(frozen=True)
class ChordalExtension:
    graph: SparsityGraph
    order: tuple[int, ...]          # elimination order, order[k] eliminated k-th
    fill: tuple[tuple[int, int], ...]
    edges: tuple[tuple[int, int], ...]
    higher: tuple[tuple[int, ...], ...]  # filled higher neighbours per vertex

    @property
    def n(self) -> int:
        return self.graph.n

    def position(self) -> list[int]:
        pos = [0] * self.n
        for k, v in enumerate(self.order):
            pos[v] = k
        return pos


def amd_order(g: SparsityGraph) -> list[int]:
    """Approximate minimum degree ordering of the graph's pattern."""
    from cvxopt import amd, spmatrix

    if g.n == 0:
        return []
    rows = list(range(g.n)) + [j for i, j in g.edges]
    cols = list(range(g.n)) + [i for i, j in g.edges]
    pattern = spmatrix(1.0, rows, cols, (g.n, g.n))
    return [int(p) for p in amd.order(pattern)]


def symbolic_elimination(g: SparsityGraph, order: Sequence[int]) -> list[list[int]]:
    """Filled higher-neighbour sets of every vertex for the given elimination order."""
    n = g.n
    pos = [0] * n
    for k, v in enumerate(order):
        pos[v] = k
    higher: list[set[int]] = [set() for _ in range(n)]
    for i, j in g.edges:
        if pos[i] < pos[j]:
            higher[i].add(j)
        else:
            higher[j].add(i)
    for v in order:
        if not higher[v]:
            continue
        parent = min(higher[v], key=pos.__getitem__)
        higher[parent] |= higher[v] - {parent}
    return [sorted(h, key=pos.__getitem__) for h in higher]


def chordal_extend(g: SparsityGraph, order: Sequence[int] | None = None) -> ChordalExtension:
    order = list(order) if order is not None else amd_order(g)
    if sorted(order) != list(range(g.n)):
        raise ValueError("ordering is not a permutation of the vertices")
    higher = symbolic_elimination(g, order)
    combined = {(min(v, u), max(v, u)) for v in range(g.n) for u in higher[v]}
    original = set(g.edges)
    fill = sorted(combined - original)
    return ChordalExtension(g, tuple(order), tuple(fill), tuple(sorted(combined)),
                            tuple(tuple(h) for h in higher))


def is_perfect_elimination_order(n: int, edges: Iterable[tuple[int, int]],
                                 order: Sequence[int]) -> bool:
    """True if every vertex's later neighbours form a clique."""
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        later = [u for u in adj[v] if pos[u] > pos[v]]
        for a, b in itertools.combinations(later, 2):
            if b not in adj[a]:
                return False
    return True


def maximum_cardinality_search(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Elimination order from maximum cardinality search (reverse of the visit order)."""
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    weight = [0] * n
    visited = [False] * n
    visit = []
    for _ in range(n):
        v = max((u for u in range(n) if not visited[u]), key=lambda u: (weight[u], -u))
        visited[v] = True
        visit.append(v)
        for u in adj[v]:
            if not visited[u]:
                weight[u] += 1
    return visit[::-1]


def is_chordal(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    edges = list(edges)
    return is_perfect_elimination_order(n, edges, maximum_cardinality_search(n, edges))


# --------------------------------------------------------------------------
# cliques and clique trees


def maximal_cliques(ext: ChordalExtension) -> list[tuple[int, ...]]:
    """Maximal cliques of the extension, read off the elimination order.

    The candidate clique of ``v`` is ``{v} | higher(v)``; it fails to be maximal
    exactly when some child ``w`` in the elimination tree has one more member.
    """
    higher = ext.higher
    absorbed = [False] * ext.n
    for w in range(ext.n):
        if higher[w]:
            parent = higher[w][0]
            if len(higher[w]) == len(higher[parent]) + 1:
                absorbed[parent] = True
    return [tuple(sorted((v, *higher[v]))) for v in ext.order if not absorbed[v]]


@dataclass(frozen=True)
class TreeEdge:
    a: int
    b: int
    separator: int


def clique_tree(cliques: Sequence[Iterable[int]]) -> list[TreeEdge]:
    """Maximum-weight spanning forest of the clique intersection graph (Prim)."""
    sets = [frozenset(c) for c in cliques]
    k = len(sets)
    if k == 0:
        raise ValueError("clique tree needs at least one clique")
    members: dict[int, list[int]] = {}
    for idx, c in enumerate(sets):
        for v in c:
            members.setdefault(v, []).append(idx)
    nbrs: list[dict[int, int]] = [dict() for _ in range(k)]
    for idxs in members.values():
        for a, b in itertools.combinations(idxs, 2):
            if b not in nbrs[a]:
                s = len(sets[a] & sets[b])
                nbrs[a][b] = s
                nbrs[b][a] = s
    in_tree = [False] * k
    edges: list[TreeEdge] = []
    for root in range(k):
        if in_tree[root]:
            continue
        in_tree[root] = True
        heap = [(-s, root, b) for b, s in nbrs[root].items()]
        heapq.heapify(heap)
        while heap:
            neg, a, b = heapq.heappop(heap)
            if in_tree[b]:
                continue
            in_tree[b] = True
            edges.append(TreeEdge(a, b, -neg))
            for c, s in nbrs[b].items():
                if not in_tree[c]:
                    heapq.heappush(heap, (-s, b, c))
    return edges


def running_intersection_holds(cliques: Sequence[Iterable[int]], edges: Iterable) -> bool:
    """Each vertex's containing cliques must induce a connected subtree."""
    sets = [frozenset(c) for c in cliques]
    adj: list[list[int]] = [[] for _ in sets]
    for e in edges:
        a, b = (e.a, e.b) if isinstance(e, TreeEdge) else (e[0], e[1])
        adj[a].append(b)
        adj[b].append(a)
    vertices = set().union(*sets) if sets else set()
    for v in vertices:
        holders = {i for i, c in enumerate(sets) if v in c}
        start = next(iter(holders))
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if y in holders and y not in seen:
                    seen.add(y)
                    stack.append(y)
        if seen != holders:
            return False
    return True


def clique_graph_edges(blocks: Sequence[frozenset]) -> dict[tuple[int, int], int]:
    """Pairs of blocks with nonempty intersection and the overlap size."""
    members: dict[int, list[int]] = {}
    for idx, c in enumerate(blocks):
        for v in c:
            members.setdefault(v, []).append(idx)
    out: dict[tuple[int, int], int] = {}
    for idxs in members.values():
        for a, b in itertools.combinations(idxs, 2):
            key = (min(a, b), max(a, b))
            if key not in out:
                out[key] = len(blocks[a] & blocks[b])
    return out


# --------------------------------------------------------------------------
# cost model


@dataclass(frozen=True)
class CostCoeffs:
    kappa: float = 0.0
    chi: float = 0.0
    mu: float = 0.0
    psi: float = 0.0
    residual: float | None = None
    probes: tuple = ()

    def __post_init__(self):
        for name in ("kappa", "chi", "mu", "psi"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"cost coefficient {name} must be finite and nonnegative, got {v}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["probes"] = [list(p) for p in self.probes]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "CostCoeffs":
        return cls(float(data["kappa"]), float(data["chi"]), float(data["mu"]), float(data["psi"]),
                   data.get("residual"), tuple(tuple(p) for p in data.get("probes", ())))

    @classmethod
    def load(cls, path: str | Path) -> "CostCoeffs":
        return cls.from_json(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def default_coeffs() -> CostCoeffs:
    text = resources.files("opfrelax.data").joinpath("default_coeffs.json").read_text()
    return CostCoeffs.from_json(json.loads(text))


def linking_count(overlap: int) -> int:
    """Shared upper-triangle entries of two Hermitian blocks overlapping in ``overlap`` vertices."""
    return overlap * (overlap + 1) // 2


def f_time(d: float, lc: float, c: CostCoeffs) -> float:
    return c.kappa * d**3 + c.chi * d**2 + c.mu * lc**3 + c.psi


def f_size(d: float, lc: float) -> float:
    return lc + d * (d + 1) / 2


@dataclass(frozen=True)
class MergeScore:
    ft: tuple[float, float, float]
    fs: tuple[float, float, float]
    dt: float
    ds: float
    weight: float


def cost_model(di: int, dj: int, lc: float, coeffs: CostCoeffs, d_union: int | None = None,
               lc_union: float = 0.0, mode: str = "normalized") -> MergeScore:
    """Time and size estimates for two blocks and their union, and the merge weight.

    ``lc`` is the linking count of the edge between the two blocks; after the
    merge those entries are shared inside one block so the union's own linking
    count defaults to zero.  ``d_union`` defaults to ``di + dj - s`` recovered
    from ``lc``.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {mode!r}")
    if d_union is None:
        s = int(round((math.sqrt(8 * lc + 1) - 1) / 2))
        d_union = di + dj - s
    ft = (f_time(di, lc, coeffs), f_time(dj, lc, coeffs), f_time(d_union, lc_union, coeffs))
    fs = (f_size(di, lc), f_size(dj, lc), f_size(d_union, lc_union))
    dt = ft[0] + ft[1] - ft[2]
    ds = fs[0] + fs[1] - fs[2]
    if mode == "raw":
        w = dt + ds
    else:
        tden = ft[0] + ft[1]
        w = (dt / tden if tden > 0 else 0.0) + ds / (fs[0] + fs[1])
    return MergeScore(ft, fs, dt, ds, w)


# --------------------------------------------------------------------------
# decompositions


@dataclass
class CliqueDecomposition:
    blocks: list[tuple[int, ...]]
    tree_edges: list[TreeEdge]
    graph_edges: dict[tuple[int, int], float] = field(default_factory=dict)
    linking: dict[tuple[int, int], int] = field(default_factory=dict)
    strategy: str = "none"
    merges: int = 0
    initial_blocks: int = 0
    fill: int = 0

    @property
    def sizes(self) -> list[int]:
        return [len(b) for b in self.blocks]

    def covers(self, edges: Iterable[tuple[int, int]]) -> bool:
        owner: dict[int, set[int]] = {}
        for k, b in enumerate(self.blocks):
            for v in b:
                owner.setdefault(v, set()).add(k)
        return all(owner.get(i, set()) & owner.get(j, set()) for i, j in edges)

    def stats(self) -> dict:
        sizes = self.sizes
        return {
            "blocks": len(sizes),
            "max_block": max(sizes, default=0),
            "mean_block": float(np.mean(sizes)) if sizes else 0.0,
            "initial_blocks": self.initial_blocks,
            "merges": self.merges,
            "fill_edges": self.fill,
        }

    def to_json(self, labels: Sequence | None = None) -> dict:
        lab = (lambda v: labels[v]) if labels is not None else (lambda v: v)
        return {
            "strategy": self.strategy,
            "blocks": [[lab(v) for v in b] for b in self.blocks],
            "tree_edges": [[e.a, e.b, e.separator] for e in self.tree_edges],
            "graph_edges": [[a, b, w] for (a, b), w in sorted(self.graph_edges.items())],
            "linking": [[a, b, lc] for (a, b), lc in sorted(self.linking.items())],
            "stats": self.stats(),
        }


def _drop_subsumed(blocks: list[frozenset]) -> list[frozenset]:
    keep = []
    for i, b in enumerate(blocks):
        if any(i != j and b <= c and (b != c or j < i) for j, c in enumerate(blocks)):
            continue
        keep.append(b)
    return keep


def _finish(blocks: list[frozenset], strategy: str, merges: int, initial: int, fill: int,
            coeffs: CostCoeffs | None, mode: str) -> CliqueDecomposition:
    blocks = _drop_subsumed(blocks)
    blocks.sort(key=lambda b: (min(b), sorted(b)))
    tup = [tuple(sorted(b)) for b in blocks]
    overlaps = clique_graph_edges(blocks)
    weights = {}
    linking = {}
    for (a, b), s in overlaps.items():
        lc = linking_count(s)
        linking[(a, b)] = lc
        if coeffs is not None:
            weights[(a, b)] = cost_model(len(blocks[a]), len(blocks[b]), lc, coeffs,
                                         len(blocks[a] | blocks[b]), mode=mode).weight
    return CliqueDecomposition(tup, clique_tree(tup), weights, linking, strategy, merges,
                               initial, fill)


def no_merge(cliques: Sequence[Iterable[int]], fill: int = 0,
             coeffs: CostCoeffs | None = None, mode: str = "normalized") -> CliqueDecomposition:
    blocks = [frozenset(c) for c in cliques]
    return _finish(blocks, "none", 0, len(blocks), fill, coeffs, mode)


def _edge_weight(bi: frozenset, bj: frozenset, coeffs: CostCoeffs, mode: str) -> float:
    s = len(bi & bj)
    return cost_model(len(bi), len(bj), linking_count(s), coeffs, len(bi | bj), mode=mode).weight


def merge_graph(cliques: Sequence[Iterable[int]], coeffs: CostCoeffs, mode: str = "normalized",
                full_recompute: bool = False, fill: int = 0) -> CliqueDecomposition:
    """Greedy clique-graph merging: repeatedly unite the pair with the largest positive weight.

    Ties go to the pair with the smallest block ids (original cliques are
    numbered in input order, merged blocks get fresh increasing ids).
    """
    blocks: dict[int, frozenset] = {i: frozenset(c) for i, c in enumerate(cliques)}
    initial = len(blocks)
    nbrs: dict[int, set[int]] = {i: set() for i in blocks}
    for (a, b) in clique_graph_edges([blocks[i] for i in range(initial)]):
        nbrs[a].add(b)
        nbrs[b].add(a)
    weight: dict[tuple[int, int], float] = {}

    def set_weight(a, b):
        key = (min(a, b), max(a, b))
        weight[key] = _edge_weight(blocks[key[0]], blocks[key[1]], coeffs, mode)
        return key

    for a in blocks:
        for b in nbrs[a]:
            if a < b:
                set_weight(a, b)
    heap = [(-w, a, b) for (a, b), w in weight.items()]
    heapq.heapify(heap)
    next_id = initial
    merges = 0
    while True:
        if full_recompute:
            for key in list(weight):
                set_weight(*key)
            best = min(((-w, a, b) for (a, b), w in weight.items()), default=None)
        else:
            best = None
            while heap:
                neg, a, b = heap[0]
                if weight.get((a, b)) == -neg:
                    best = heap[0]
                    break
                heapq.heappop(heap)
        if best is None or -best[0] <= 0:
            break
        _, a, b = best
        if not full_recompute:
            heapq.heappop(heap)
        new = next_id
        next_id += 1
        blocks[new] = blocks[a] | blocks[b]
        around = (nbrs[a] | nbrs[b]) - {a, b}
        for old in (a, b):
            for c in nbrs[old]:
                weight.pop((min(old, c), max(old, c)), None)
                nbrs[c].discard(old)
            del nbrs[old], blocks[old]
        nbrs[new] = set(around)
        for c in sorted(around):
            nbrs[c].add(new)
            key = set_weight(c, new)
            if not full_recompute:
                heapq.heappush(heap, (-weight[key], *key))
        merges += 1
    final = [blocks[i] for i in sorted(blocks)]
    return _finish(final, "graph", merges, initial, fill, coeffs, mode)


def merge_tree(cliques: Sequence[Iterable[int]], coeffs: CostCoeffs, k_max: int | None = None,
               L: int | None = None, mode: str = "normalized", fill: int = 0) -> CliqueDecomposition:
    """Parent-child merging along a depth-first sweep of the clique tree.

    While there are more than ``k_max`` blocks a merge is accepted when it
    shrinks the size estimate; afterwards when it shrinks the time estimate.
    ``k_max=None`` applies the time criterion throughout.  Merges that would
    exceed ``L`` vertices are rejected and the sweep stops once the largest
    block reaches ``L``.
    """
    sets = [frozenset(c) for c in cliques]
    initial = len(sets)
    if k_max is None:
        k_max = initial
    limit = L if L is not None else math.inf
    edges = clique_tree(sets)
    children: dict[int, list[int]] = {i: [] for i in range(initial)}
    has_parent = set()
    adj: dict[int, list[int]] = {i: [] for i in range(initial)}
    for e in edges:
        adj[e.a].append(e.b)
        adj[e.b].append(e.a)
    roots = []
    for r in range(initial):
        if r in has_parent:
            continue
        roots.append(r)
        stack = [r]
        has_parent.add(r)
        while stack:
            x = stack.pop()
            for y in sorted(adj[x]):
                if y not in has_parent:
                    has_parent.add(y)
                    children[x].append(y)
                    stack.append(y)
    blocks = dict(enumerate(sets))
    count = initial
    merges = 0

    def accept(p: int, c: int) -> bool:
        union = blocks[p] | blocks[c]
        if len(union) > limit:
            return False
        s = len(blocks[p] & blocks[c])
        score = cost_model(len(blocks[p]), len(blocks[c]), linking_count(s), coeffs,
                           len(union), mode=mode)
        return (score.ds if count > k_max else score.dt) > 0

    changed = True
    while changed:
        changed = False
        for r in roots:
            stack = [r]
            while stack:
                if max(len(b) for b in blocks.values()) >= limit:
                    break
                p = stack.pop()
                i = 0
                while i < len(children[p]):
                    c = children[p][i]
                    if accept(p, c):
                        blocks[p] = blocks[p] | blocks[c]
                        del blocks[c]
                        children[p][i:i + 1] = children.pop(c)
                        count -= 1
                        merges += 1
                        changed = True
                        continue
                    i += 1
                stack.extend(reversed(children[p]))
    final = [blocks[i] for i in sorted(blocks)]
    return _finish(final, "tree", merges, initial, fill, coeffs, mode)


def estimated_time(decomp: CliqueDecomposition, coeffs: CostCoeffs) -> float:
    """Sum of per-block time estimates; each clique-graph edge charges its links to both ends."""
    return sum(f_time(len(blk), 0.0, coeffs) for blk in decomp.blocks) + \
        coeffs.mu * sum(lc**3 for lc in decomp.linking.values()) * 2


def decompose(net_or_graph, strategy: str = "none", coeffs: CostCoeffs | None = None,
              k_max: int | None = None, L: int | None = None, mode: str = "normalized") -> tuple[ChordalExtension, CliqueDecomposition]:
    g = net_or_graph if isinstance(net_or_graph, SparsityGraph) else SparsityGraph.from_network(net_or_graph)
    ext = chordal_extend(g)
    cliques = maximal_cliques(ext)
    if coeffs is None:
        coeffs = default_coeffs()
    if strategy == "none":
        dec = no_merge(cliques, len(ext.fill), coeffs, mode)
    elif strategy == "graph":
        dec = merge_graph(cliques, coeffs, mode, fill=len(ext.fill))
    elif strategy == "tree":
        dec = merge_tree(cliques, coeffs, k_max, L, mode, fill=len(ext.fill))
    else:
        raise ValueError(f"unknown merge strategy {strategy!r}")
    return ext, dec


# --------------------------------------------------------------------------
# calibration


def calibrate(probes: Sequence[tuple[float, float, float]]) -> CostCoeffs:
    """Least-squares fit of the per-iteration time model with coefficients clipped at zero."""
    data = np.asarray(probes, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError("probes must be (d, l_c, seconds) triples")
    if len(data) < 8:
        raise ValueError(f"need at least 8 probe points, got {len(data)}")
    d, lc, t = data.T
    design = np.column_stack([d**3, d**2, lc**3, np.ones_like(d)])
    scale = np.abs(design).max(axis=0)
    scale[scale == 0] = 1.0
    scaled = design / scale
    if np.linalg.matrix_rank(scaled, tol=1e-10) < 4:
        raise ValueError("probe design matrix is rank deficient; vary block sizes and linking counts")
    coef = np.linalg.lstsq(scaled, t, rcond=None)[0]
    active = coef > 0
    # refit on the columns that survive clipping so the remaining ones absorb the slack
    while not active.all() and active.any():
        sub = np.linalg.lstsq(scaled[:, active], t, rcond=None)[0]
        coef = np.zeros(4)
        coef[active] = sub
        if (sub > 0).all():
            break
        active = coef > 0
    coef = np.clip(coef, 0.0, None) / scale
    resid = float(np.linalg.norm(design @ coef - t))
    return CostCoeffs(*map(float, coef), residual=resid,
                      probes=tuple(tuple(map(float, p)) for p in data))


def _probe_program(d: int, lc_overlap: int, n_blocks: int, rng: np.random.Generator):
    """Random block-diagonal SDP with ``n_blocks`` Hermitian ``d x d`` blocks (real lift).

    Consecutive blocks share their leading ``lc_overlap`` x ``lc_overlap`` principal submatrix.
    """
    from .conic import ConicProgram

    m = 2 * d
    tri = [(i, j) for j in range(m) for i in range(j + 1)]
    nv = n_blocks * len(tri)
    prog = ConicProgram(nv)
    c = np.zeros(nv)
    for k in range(n_blocks):
        g = rng.standard_normal((m, m))
        cost = g + g.T
        base = k * len(tri)
        for t, (i, j) in enumerate(tri):
            c[base + t] = cost[i, j] * (1 if i == j else 2)
        rows = np.arange(len(tri))
        cols = base + rows
        import scipy.sparse as sp

        prog.add_block("psd", sp.csr_matrix((np.ones(len(tri)), (rows, cols)), shape=(len(tri), nv)),
                       np.zeros(len(tri)), dim=m)
        trace = sp.csr_matrix(([1.0] * m, ([0] * m, [base + tri.index((i, i)) for i in range(m)])),
                              shape=(1, nv))
        prog.add_block("zero", trace, np.array([-1.0]))
        if k + 1 < n_blocks and lc_overlap:
            nxt = (k + 1) * len(tri)
            shared = [t for t, (i, j) in enumerate(tri) if j < lc_overlap]
            r = np.arange(len(shared))
            link = sp.csr_matrix((np.r_[np.ones(len(shared)), -np.ones(len(shared))],
                                  (np.r_[r, r], np.r_[[base + t for t in shared], [nxt + t for t in shared]])),
                                 shape=(len(shared), nv))
            prog.add_block("zero", link, np.zeros(len(shared)))
    prog.c = c
    return prog


def probe_timings(sizes: Sequence[int] = (2, 3, 4, 6, 8, 10), overlaps: Sequence[int] = (0, 1, 2),
                  n_blocks: int = 6, seed: int = 0, repeats: int = 1) -> list[tuple[float, float, float]]:
    """Time random block-diagonal SDPs; returns ``(d, l_c, seconds per iteration per block)``."""
    from .conic import ClarabelBackend

    backend = ClarabelBackend()
    rng = np.random.default_rng(seed)
    out = []
    for d in sizes:
        for s in overlaps:
            if s >= d:
                continue
            best = math.inf
            for _ in range(repeats):
                prog = _probe_program(d, s, n_blocks, rng)
                t0 = time.perf_counter()
                res = backend.solve(prog)
                elapsed = time.perf_counter() - t0
                its = max(res.iterations, 1)
                best = min(best, elapsed / its / n_blocks)
            out.append((float(d), float(linking_count(s)), best))
    return out
