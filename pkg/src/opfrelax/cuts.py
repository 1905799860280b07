"""Valid inequalities and analytic bound tightening derived from branch thermal limits.

The current magnitude through one end of a branch is

    I(v_i, v_j, t)**2 = a1 v_i**2 + a2 v_j**2 + 2 v_i v_j (a3 sin t - a4 cos t)

with ``t`` the angle difference measured from the near end ``i``.  For a branch
end with self admittance ``Y_ii`` and transfer admittance ``Y_ij`` the
coefficients are ``a1 = |Y_ii|**2``, ``a2 = |Y_ij|**2`` and
``a3 + 1j*a4 = -1j * conj(Y_ii * conj(Y_ij))``; this covers taps and phase
shifters as well as the plain pi-model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .casefmt import Branch, Network, branch_block
from .envelope import Interval
from .expr import Affine, AffineCutSet, Linear, lin, square_le

log = logging.getLogger(__name__)

FORWARD, REVERSE = "from->to", "to->from"


@dataclass(frozen=True)
class BranchSurface:
    a1: float
    a2: float
    a3: float
    a4: float
    i_max: float
    direction: str = FORWARD

    @property
    def rho(self) -> float:
        return math.sqrt(self.a1 / self.a2)

    @property
    def gamma(self) -> float:
        return self.i_max / math.sqrt(self.a2)

    @property
    def phase(self) -> float:
        return math.atan2(self.a3, self.a4)

    def current_sq(self, vi: float, vj: float, theta: float) -> float:
        return (self.a1 * vi * vi + self.a2 * vj * vj
                + 2 * vi * vj * (self.a3 * math.sin(theta) - self.a4 * math.cos(theta)))

    def tau(self, vi: float, vj: float) -> float:
        return self.a1 * vi / vj + self.a2 * vj / vi - self.i_max**2 / (vi * vj)

    def identity_residual(self) -> float:
        lhs = self.a1 * self.a2
        return abs(lhs - (self.a3**2 + self.a4**2)) / max(abs(lhs), 1e-300)


def surface_from_admittance(y_self: complex, y_transfer: complex, i_max: float,
                            direction: str = FORWARD) -> BranchSurface:
    c = y_self * y_transfer.conjugate()
    a1, a2 = abs(y_self) ** 2, abs(y_transfer) ** 2
    if a1 <= 0 or a2 <= 0:
        raise ValueError("branch has zero admittance")
    return BranchSurface(a1, a2, -c.imag, -c.real, i_max, direction)


def surface_from_pi(g: float, b: float, b_sh: float, i_max: float) -> BranchSurface:
    """Untapped pi-model with series ``g + jb`` and per-end shunt susceptance ``b_sh``."""
    y = complex(g, b)
    return surface_from_admittance(y + 1j * b_sh, -y, i_max)


def branch_surface(branch: Branch, v_min_from: float, v_min_to: float | None = None,
                   base_mva: float = 1.0) -> tuple[BranchSurface, BranchSurface]:
    """Forward and reverse current surfaces of a rated branch.

    The current limit of each end is the MVA rating divided by the smallest
    voltage that end can have, which over-approximates every thermally
    feasible current.
    """
    if branch.rate_a <= 0:
        raise ValueError("unrated branch has no thermal surface")
    v_min_to = v_min_from if v_min_to is None else v_min_to
    yff, yft, ytf, ytt = branch_block(branch)
    s = branch.rate_a / base_mva
    fwd = surface_from_admittance(yff, yft, s / v_min_from, FORWARD)
    rev = surface_from_admittance(ytt, ytf, s / v_min_to, REVERSE)
    return fwd, rev


def _clamp_cos(x: float) -> float:
    if x > 1.0 and x - 1.0 < 1e-12:
        return 1.0
    if x < -1.0 and -1.0 - x < 1e-12:
        return -1.0
    return x


def theta_on_surface(vi: float, vj: float, s: BranchSurface) -> tuple[float, float] | None:
    """Angle differences where the current reaches its limit, or ``None``."""
    if vi <= 0 or vj <= 0:
        raise ValueError("voltages must be positive")
    k = _clamp_cos(s.tau(vi, vj) / (2 * math.sqrt(s.a1 * s.a2)))
    if abs(k) > 1:
        return None
    a = math.acos(k)
    return a - s.phase, -a - s.phase


def _edge_tau_min(s: BranchSurface, free: Interval, fixed: float, free_is_i: bool) -> tuple[float, float]:
    """Minimise tau along one box edge; returns ``(tau, argmin)``.

    With ``v_j`` fixed, ``tau(v_i) = a1 v_i / v_j + (a2 v_j**2 - I**2) / (v_i v_j)`` has
    its stationary point at ``v_i**2 = (a2 v_j**2 - I**2) / a1``; symmetric for ``v_i``
    fixed.
    """
    if free_is_i:
        num = s.a2 * fixed**2 - s.i_max**2
        stat = math.sqrt(num / s.a1) if num > 0 else free.lo
    else:
        num = s.a1 * fixed**2 - s.i_max**2
        stat = math.sqrt(num / s.a2) if num > 0 else free.lo
    v = min(max(stat, free.lo), free.hi)
    vi, vj = (v, fixed) if free_is_i else (fixed, v)
    return s.tau(vi, vj), v


def max_theta(s: BranchSurface, box_i: Interval, box_j: Interval) -> tuple[float, float] | None:
    """Feasible angle range ``[lo, hi]`` of one branch end over a voltage box.

    ``tau`` grows when both magnitudes are scaled up, so its minimum over the
    box lies on the edges ``v_j = v_j_min`` or ``v_i = v_i_min``; the widest
    arccos branch sits at that minimum.  Returns ``None`` when the limit cannot
    bind anywhere in the box (no tightening possible) or when no point of the
    box can satisfy it.
    """
    tau_a, _ = _edge_tau_min(s, box_i, box_j.lo, True)
    tau_b, _ = _edge_tau_min(s, box_j, box_i.lo, False)
    k = _clamp_cos(min(tau_a, tau_b) / (2 * math.sqrt(s.a1 * s.a2)))
    if k < -1 or k > 1:
        return None
    a = math.acos(k)
    return -a - s.phase, a - s.phase


def _angle_window(fwd: BranchSurface, rev: BranchSurface, vi, vj, lo: float, hi: float):
    """Angle interval allowed at ``(v_i, v_j)`` by both current limits and ``[lo, hi]``.

    Vectorised over ``vi``, ``vj``; empty windows come back with ``upper < lower``.
    """
    vi, vj = np.asarray(vi, dtype=float), np.asarray(vj, dtype=float)
    upper = np.full(np.broadcast(vi, vj).shape, hi)
    lower = np.full_like(upper, lo)
    for s, sign, a, b in ((fwd, 1.0, vi, vj), (rev, -1.0, vj, vi)):
        k = (s.a1 * a / b + s.a2 * b / a - s.i_max**2 / (a * b)) / (2 * math.sqrt(s.a1 * s.a2))
        half = np.arccos(np.clip(k, -1.0, 1.0))
        half = np.where(k < -1.0, np.inf, half)
        half = np.where(k > 1.0 + 1e-12, -np.inf, half)
        # the reverse end measures theta_ji = -theta_ij
        centre = -s.phase if sign > 0 else s.phase
        upper = np.minimum(upper, centre + half)
        lower = np.maximum(lower, centre - half)
    return lower, upper


def joint_angle_range(fwd: BranchSurface, rev: BranchSurface, box_i: Interval, box_j: Interval,
                      lo: float, hi: float, grid: int = 61, margin: float = 1e-8) -> tuple[float, float]:
    """Angle range over the voltage box with both branch ends at or below their limits.

    Per-end tightening bounds each end separately; the two limits can bind at
    different voltages, so their joint projection can be strictly narrower.
    A grid search seeds a local solve for each side and ``margin`` is added
    so that a local solution never cuts a feasible angle.  The result stays
    inside ``[lo, hi]``.
    """
    from scipy.optimize import minimize

    gi = np.linspace(box_i.lo, box_i.hi, grid)
    gj = np.linspace(box_j.lo, box_j.hi, grid)
    VI, VJ = np.meshgrid(gi, gj, indexing="ij")
    lower, upper = _angle_window(fwd, rev, VI, VJ, lo, hi)
    ok = upper >= lower
    if not ok.any():
        return lo, hi

    def cur(s, a, b, t):
        return s.i_max**2 - (s.a1 * a * a + s.a2 * b * b + 2 * a * b * (s.a3 * math.sin(t) - s.a4 * math.cos(t)))

    cons = [{"type": "ineq", "fun": lambda x: cur(fwd, x[0], x[1], x[2])},
            {"type": "ineq", "fun": lambda x: cur(rev, x[1], x[0], -x[2])}]
    bounds = [(box_i.lo, box_i.hi), (box_j.lo, box_j.hi), (lo, hi)]
    out = []
    for side, vals in ((1.0, np.where(ok, upper, -np.inf)), (-1.0, np.where(ok, -lower, -np.inf))):
        a, b = np.unravel_index(np.argmax(vals), vals.shape)
        best = float(vals[a, b])
        res = minimize(lambda x: -side * x[2], [VI[a, b], VJ[a, b], side * best], method="SLSQP",
                       bounds=bounds, constraints=cons, options={"ftol": 1e-13, "maxiter": 200})
        x = res.x
        if min(cur(fwd, x[0], x[1], x[2]), cur(rev, x[1], x[0], -x[2])) >= -1e-12:
            best = max(best, side * float(x[2]))
        out.append(best + margin)
    return max(lo, -out[1]), min(hi, out[0])


@dataclass
class BranchBounds:
    angle: Interval
    input_angle: Interval
    vdiff: dict[str, Interval | None] = field(default_factory=dict)
    surfaces: dict[str, BranchSurface] = field(default_factory=dict)

    @property
    def phi(self) -> float:
        return (self.angle.hi + self.angle.lo) / 2

    @property
    def delta(self) -> float:
        return (self.angle.hi - self.angle.lo) / 2


@dataclass
class TightenedBounds:
    """Per-branch angle and voltage-difference bounds (``None`` for out-of-service branches)."""

    branches: list[BranchBounds | None]
    v_lo: list[float]
    v_hi: list[float]
    diagnostics: list[str] = field(default_factory=list)

    @property
    def v_sigma(self) -> list[float]:
        return [lo + hi for lo, hi in zip(self.v_lo, self.v_hi)]

    def to_json(self) -> list[dict]:
        out = []
        for k, bb in enumerate(self.branches):
            if bb is None:
                continue
            fwd = bb.vdiff.get(FORWARD)
            rev = bb.vdiff.get(REVERSE)
            out.append({
                "branch": k,
                "theta_lo": bb.angle.lo, "theta_hi": bb.angle.hi,
                "vdiff_lo": fwd.lo if fwd else None, "vdiff_hi": fwd.hi if fwd else None,
                "vdiff_rev_lo": rev.lo if rev else None, "vdiff_rev_hi": rev.hi if rev else None,
            })
        return out


def voltage_diff_bounds(s: BranchSurface, box_i: Interval, box_j: Interval) -> Interval | None:
    """Bounds on ``v_j - rho * v_i`` implied by the box and the current limit.

    ``min_t I**2 = (sqrt(a1) v_i - sqrt(a2) v_j)**2`` so any feasible point has
    ``|v_j - rho v_i| <= gamma``.  Returns ``None`` if the result is empty.
    """
    rho, gamma = s.rho, s.gamma
    lo = max(-gamma, box_j.lo - rho * box_i.hi)
    hi = min(gamma, box_j.hi - rho * box_i.lo)
    if lo > hi:
        return None
    return Interval(lo, hi)


def tighten_angle_bounds(net: Network) -> TightenedBounds:
    idx = net.bus_index
    vmin, vmax = net.vmin(), net.vmax()
    out = TightenedBounds(branches=[None] * len(net.branches),
                          v_lo=list(vmin), v_hi=list(vmax))
    for k, br in net.active_branches():
        f, t = idx[br.from_bus], idx[br.to_bus]
        given = Interval(br.ang_min, br.ang_max)
        bb = BranchBounds(angle=given, input_angle=given)
        out.branches[k] = bb
        if not br.limited:
            continue
        box_f, box_t = Interval(vmin[f], vmax[f]), Interval(vmin[t], vmax[t])
        try:
            fwd, rev = branch_surface(br, vmin[f], vmin[t], net.base_mva)
        except ValueError as exc:
            out.diagnostics.append(f"branch {k}: {exc}")
            continue
        bb.surfaces = {FORWARD: fwd, REVERSE: rev}
        lo, hi = given.lo, given.hi
        # forward end: angle theta_ft directly
        rng = max_theta(fwd, box_f, box_t)
        if rng is not None:
            lo, hi = max(lo, rng[0]), min(hi, rng[1])
        # reverse end measures theta_tf = -theta_ft
        rng = max_theta(rev, box_t, box_f)
        if rng is not None:
            lo, hi = max(lo, -rng[1]), min(hi, -rng[0])
        if lo <= hi:
            lo, hi = joint_angle_range(fwd, rev, box_f, box_t, lo, hi)
        if lo > hi:
            out.diagnostics.append(f"branch {k}: tightened angle interval is empty; kept input bounds")
            lo, hi = given.lo, given.hi
        bb.angle = Interval(lo, hi)
        for direction, s, bi, bj in ((FORWARD, fwd, box_f, box_t), (REVERSE, rev, box_t, box_f)):
            iv = voltage_diff_bounds(s, bi, bj)
            if iv is None:
                out.diagnostics.append(f"branch {k} {direction}: empty voltage-difference interval")
            bb.vdiff[direction] = iv
    for msg in out.diagnostics:
        log.warning(msg)
    return out


# --------------------------------------------------------------------------
# cut generators over W / polar variables


def lnc_cuts(w_ii: str, w_jj: str, w_re: Affine | str, w_im: Affine | str,
             box_i: Interval, box_j: Interval, angle: Interval) -> AffineCutSet:
    """Lifted nonlinear cuts for one bus pair with angle difference in ``angle``."""
    w_re, w_im = Affine.of(w_re), Affine.of(w_im)
    vli, vui = box_i
    vlj, vuj = box_j
    si, sj = vli + vui, vlj + vuj
    phi = (angle.hi + angle.lo) / 2
    cd = math.cos((angle.hi - angle.lo) / 2)
    rot = w_re * math.cos(phi) + w_im * math.sin(phi)
    out = AffineCutSet()
    upper = (rot * (si * sj) - lin((vuj * cd * sj, w_ii)) - lin((vui * cd * si, w_jj))
             - vui * vuj * cd * (vli * vlj - vui * vuj))
    lower = (rot * (si * sj) - lin((vlj * cd * sj, w_ii)) - lin((vli * cd * si, w_jj))
             - vli * vlj * cd * (vui * vuj - vli * vlj))
    out.add(Linear(upper, ">=", "lnc-upper"))
    out.add(Linear(lower, ">=", "lnc-lower"))
    return out


def vdiff_envelope_cuts(s: BranchSurface, v_i: str, v_j: str, w_ii: str, w_jj: str, vv_ij: str,
                        interval: Interval | None) -> AffineCutSet:
    """``(v_j - rho v_i)**2 <= rho**2 W_ii + W_jj - 2 rho <v_i v_j>`` plus its interval bounds.

    ``v_i`` is the near end of the surface; ``vv_ij`` is the McCormick product variable.
    """
    rho = s.rho
    diff = lin((1, v_j), (-rho, v_i))
    rhs = lin((rho * rho, w_ii), (1, w_jj), (-2 * rho, vv_ij))
    out = AffineCutSet()
    out.add(square_le(diff, rhs, "vdiff-envelope"))
    if interval is not None:
        out.add(Linear(diff - interval.lo, ">=", "vdiff-bound"))
        out.add(Linear(diff - interval.hi, "<=", "vdiff-bound"))
    return out


__all__ = [
    "BranchSurface", "BranchBounds", "TightenedBounds", "branch_surface", "surface_from_pi",
    "surface_from_admittance", "theta_on_surface", "max_theta", "tighten_angle_bounds",
    "voltage_diff_bounds", "joint_angle_range", "lnc_cuts", "vdiff_envelope_cuts", "FORWARD", "REVERSE",
]
