"""Thermal-limit surfaces, angle tightening and the valid inequalities built on them."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq, minimize_scalar

from opfrelax.cuts import (FORWARD, REVERSE, _edge_tau_min, branch_surface, lnc_cuts, max_theta,
                           surface_from_admittance, surface_from_pi, theta_on_surface,
                           tighten_angle_bounds, vdiff_envelope_cuts, voltage_diff_bounds)
from opfrelax.envelope import Interval

from conftest import network

RNG_SEED = 7


def test_surface_coefficients_example():
    s = surface_from_pi(1.0, -2.0, 0.2, 1.0)
    assert (s.a1, s.a2, s.a3, s.a4) == pytest.approx((4.24, 5.0, 0.2, 4.6))
    assert s.a1 * s.a2 == pytest.approx(21.2)
    assert s.a3**2 + s.a4**2 == pytest.approx(21.2)


def test_surface_without_shunt_is_symmetric():
    s = surface_from_pi(0.5, -3.0, 0.0, 1.0)
    assert s.a3 == pytest.approx(0.0, abs=1e-15)
    assert s.a4 == pytest.approx(s.a2)
    assert s.rho == pytest.approx(1.0)
    assert s.current_sq(0.95, 1.05, 0.2) == pytest.approx(s.current_sq(1.05, 0.95, 0.2))


@given(g=st.floats(-5, 5), b=st.floats(-50, 50), bsh=st.floats(-1, 1))
@settings(max_examples=300, deadline=None)
def test_surface_identity(g, b, bsh):
    if abs(complex(g, b)) < 1e-3 or abs(complex(g, b + bsh)) < 1e-3:
        return
    assert surface_from_pi(g, b, bsh, 1.0).identity_residual() < 1e-9


def test_surface_identity_random_sweep():
    rng = np.random.default_rng(RNG_SEED)
    worst = 0.0
    for g, b, bsh in zip(rng.uniform(0, 5, 10_000), rng.uniform(-50, -0.1, 10_000),
                         rng.uniform(0, 1, 10_000)):
        worst = max(worst, surface_from_pi(g, b, bsh, 1.0).identity_residual())
    assert worst < 1e-9


def test_tapped_surfaces_satisfy_identity():
    net = network("case118")
    for _, br in net.active_branches():
        if br.rate_a > 0:
            for s in branch_surface(br, 0.94, 0.94, net.base_mva):
                assert s.identity_residual() < 1e-9


# points on the surface


@given(vi=st.floats(0.9, 1.1), vj=st.floats(0.9, 1.1), imax=st.floats(0.1, 5.0))
@settings(max_examples=200, deadline=None)
def test_theta_on_surface_back_substitution(vi, vj, imax):
    s = surface_from_pi(2.0, -10.0, 0.05, imax)
    roots = theta_on_surface(vi, vj, s)
    if roots is None:
        return
    for t in roots:
        assert s.current_sq(vi, vj, t) == pytest.approx(imax**2, rel=1e-8, abs=1e-8)


def test_theta_on_surface_double_root():
    base = surface_from_pi(2.0, -10.0, 0.05, 1.0)
    vi, vj = 1.0, 1.02
    imax = abs(math.sqrt(base.a1) * vi - math.sqrt(base.a2) * vj)
    s = surface_from_admittance(complex(2.0, -10.0) + 0.05j, -complex(2.0, -10.0), imax)
    hi, lo = theta_on_surface(vi, vj, s)
    assert hi == pytest.approx(lo, abs=1e-6)
    assert hi == pytest.approx(-math.atan2(s.a3, s.a4), abs=1e-6)


def test_theta_on_surface_unreachable():
    s = surface_from_pi(2.0, -10.0, 0.05, 0.1)
    vi, vj = 0.9, 1.1
    assert (math.sqrt(s.a1) * vi - math.sqrt(s.a2) * vj) ** 2 > s.i_max**2
    assert theta_on_surface(vi, vj, s) is None


def test_theta_on_surface_rejects_nonpositive():
    with pytest.raises(ValueError):
        theta_on_surface(0.0, 1.0, surface_from_pi(1.0, -2.0, 0.0, 1.0))


# stationary points along the box edges


@given(g=st.floats(0.1, 5), b=st.floats(-30, -1), bsh=st.floats(0, 0.5), imax=st.floats(0.2, 6),
       fixed=st.floats(0.9, 1.1), free_is_i=st.booleans())
@settings(max_examples=200, deadline=None)
def test_edge_minimum_matches_bounded_search(g, b, bsh, imax, fixed, free_is_i):
    s = surface_from_pi(g, b, bsh, imax)
    box = Interval(0.9, 1.1)
    tau, _ = _edge_tau_min(s, box, fixed, free_is_i)
    f = (lambda v: s.tau(v, fixed)) if free_is_i else (lambda v: s.tau(fixed, v))
    res = minimize_scalar(f, bounds=(box.lo, box.hi), method="bounded", options={"xatol": 1e-12})
    best = min(res.fun, f(box.lo), f(box.hi))
    assert tau <= best + 1e-9 * max(1.0, abs(best))


# soundness of the tightened angle interval


def _feasible_theta_extremes(fwd, rev, vi, vj, lo, hi, samples=721):
    """Largest and smallest feasible angle on a fine theta grid, refined by root finding."""
    ts = np.linspace(lo, hi, samples)

    def slack(t):
        return min(fwd.i_max**2 - fwd.current_sq(vi, vj, t), rev.i_max**2 - rev.current_sq(vj, vi, -t))

    vals = np.minimum(
        fwd.i_max**2 - (fwd.a1 * vi * vi + fwd.a2 * vj * vj + 2 * vi * vj * (fwd.a3 * np.sin(ts) - fwd.a4 * np.cos(ts))),
        rev.i_max**2 - (rev.a1 * vj * vj + rev.a2 * vi * vi + 2 * vi * vj * (rev.a3 * np.sin(-ts) - rev.a4 * np.cos(-ts))))
    ok = np.flatnonzero(vals >= 0)
    if ok.size == 0:
        return None
    out = []
    for k, step in ((ok[-1], 1), (ok[0], -1)):
        nxt = k + step
        if 0 <= nxt < samples and slack(ts[nxt]) < 0:
            out.append(brentq(slack, ts[k], ts[nxt], xtol=1e-13))
        else:
            out.append(ts[k])
    return out[0], out[1]


def _soundness(net, grid=200, stride=1):
    tb = tighten_angle_bounds(net)
    idx = net.bus_index
    vmin, vmax = net.vmin(), net.vmax()
    checked = 0
    for k, br in net.active_branches()[::stride]:
        bb = tb.branches[k]
        if not br.limited or not bb.surfaces:
            continue
        fwd, rev = bb.surfaces[FORWARD], bb.surfaces[REVERSE]
        f, t = idx[br.from_bus], idx[br.to_bus]
        given_ = bb.input_angle
        for vi in np.linspace(vmin[f], vmax[f], grid):
            for vj in np.linspace(vmin[t], vmax[t], grid):
                ext = _feasible_theta_extremes(fwd, rev, vi, vj, given_.lo, given_.hi)
                if ext is None:
                    continue
                assert ext[0] <= bb.angle.hi + 1e-6, (k, vi, vj, ext[0], bb.angle.hi)
                assert ext[1] >= bb.angle.lo - 1e-6, (k, vi, vj, ext[1], bb.angle.lo)
        checked += 1
    return checked


def test_tightening_sound_case3():
    assert _soundness(network("case3_lmbd")) == 3


@pytest.mark.slow
def test_tightening_sound_case5_pjm():
    assert _soundness(network("case5_pjm"), grid=100) > 0


def test_joint_range_within_per_end_range():
    net = network("case3_lmbd")
    tb = tighten_angle_bounds(net)
    for k, br in net.active_branches():
        bb = tb.branches[k]
        f, t = net.bus_index[br.from_bus], net.bus_index[br.to_bus]
        box_f = Interval(net.vmin()[f], net.vmax()[f])
        box_t = Interval(net.vmin()[t], net.vmax()[t])
        rng = max_theta(bb.surfaces[FORWARD], box_f, box_t)
        if rng is not None:
            assert bb.angle.hi <= rng[1] + 1e-7


def test_tightened_inside_input_case57():
    net = network("case57")
    tb = tighten_angle_bounds(net)
    for bb in tb.branches:
        if bb is not None:
            assert bb.input_angle.lo <= bb.angle.lo <= bb.angle.hi <= bb.input_angle.hi
            assert bb.phi == pytest.approx((bb.angle.lo + bb.angle.hi) / 2)
            assert bb.delta == pytest.approx((bb.angle.hi - bb.angle.lo) / 2)


def test_tightening_idempotent():
    net = network("case3_lmbd")
    a, b = tighten_angle_bounds(net), tighten_angle_bounds(net)
    assert a.to_json() == b.to_json()
    assert a.v_sigma == pytest.approx([lo + hi for lo, hi in zip(net.vmin(), net.vmax())])


def test_loose_limit_leaves_bounds_unchanged():
    s = surface_from_pi(1.0, -10.0, 0.0, 100.0)
    box = Interval(0.9, 1.1)
    assert max_theta(s, box, box) is None


def test_case3_tightening_shrinks_limited_branch():
    net = network("case3_lmbd")
    tb = tighten_angle_bounds(net)
    widths = [bb.angle.hi - bb.angle.lo for bb in tb.branches]
    inputs = [bb.input_angle.hi - bb.input_angle.lo for bb in tb.branches]
    assert any(w < i - 1e-3 for w, i in zip(widths, inputs))


# voltage differences


def test_vdiff_loose_limit_equals_box():
    s = surface_from_pi(1.0, -10.0, 0.0, 1e6)
    bi, bj = Interval(0.9, 1.1), Interval(0.95, 1.05)
    iv = voltage_diff_bounds(s, bi, bj)
    assert (iv.lo, iv.hi) == pytest.approx((bj.lo - s.rho * bi.hi, bj.hi - s.rho * bi.lo))


def test_vdiff_symmetric_when_rho_one():
    s = surface_from_pi(1.0, -10.0, 0.0, 0.5)
    box = Interval(0.9, 1.1)
    iv = voltage_diff_bounds(s, box, box)
    assert iv.lo == pytest.approx(-iv.hi)


def test_vdiff_bounds_valid_by_sampling():
    rng = np.random.default_rng(RNG_SEED)
    s = surface_from_pi(2.0, -10.0, 0.1, 0.6)
    bi, bj = Interval(0.9, 1.1), Interval(0.92, 1.08)
    iv = voltage_diff_bounds(s, bi, bj)
    n = 0
    while n < 10_000:
        vi, vj, t = rng.uniform(bi.lo, bi.hi), rng.uniform(bj.lo, bj.hi), rng.uniform(-0.5, 0.5)
        if s.current_sq(vi, vj, t) > s.i_max**2:
            continue
        n += 1
        d = vj - s.rho * vi
        assert abs(d) <= s.gamma + 1e-12
        assert iv.lo - 1e-12 <= d <= iv.hi + 1e-12


def test_vdiff_empty_interval():
    s = surface_from_pi(1.0, -10.0, 0.0, 0.01)
    assert voltage_diff_bounds(s, Interval(0.9, 0.9), Interval(1.1, 1.1)) is None


def _vdiff_point(vi, vj):
    return {"vi": vi, "vj": vj, "wii": vi * vi, "wjj": vj * vj, "vv": vi * vj}


def test_vdiff_cut_exact_point_is_tight():
    s = surface_from_pi(2.0, -10.0, 0.1, 0.6)
    cuts = vdiff_envelope_cuts(s, "vi", "vj", "wii", "wjj", "vv", None)
    (cut,) = cuts
    pt = _vdiff_point(1.02, 0.97)
    lhs = (0.97 - s.rho * 1.02) ** 2
    rhs = s.rho**2 * 1.02**2 + 0.97**2 - 2 * s.rho * 1.02 * 0.97
    assert lhs == pytest.approx(rhs, abs=1e-14)
    assert cut.violation(pt) <= 1e-14


def test_vdiff_cut_rho_one_equal_voltages():
    s = surface_from_pi(1.0, -10.0, 0.0, 0.5)
    cuts = vdiff_envelope_cuts(s, "vi", "vj", "wii", "wjj", "vv",
                               voltage_diff_bounds(s, Interval(0.9, 1.1), Interval(0.9, 1.1)))
    for v in np.linspace(0.9, 1.1, 11):
        assert cuts.max_violation(_vdiff_point(v, v)) <= 1e-14


def test_vdiff_cuts_contain_feasible_samples():
    rng = np.random.default_rng(RNG_SEED)
    s = surface_from_pi(2.0, -10.0, 0.1, 0.6)
    bi, bj = Interval(0.9, 1.1), Interval(0.92, 1.08)
    cuts = vdiff_envelope_cuts(s, "vi", "vj", "wii", "wjj", "vv", voltage_diff_bounds(s, bi, bj))
    n = 0
    while n < 10_000:
        vi, vj, t = rng.uniform(bi.lo, bi.hi), rng.uniform(bj.lo, bj.hi), rng.uniform(-0.5, 0.5)
        if s.current_sq(vi, vj, t) > s.i_max**2:
            continue
        n += 1
        assert cuts.max_violation(_vdiff_point(vi, vj)) <= 1e-10


# lifted nonlinear cuts


def _lnc_point(vi, vj, t):
    return {"wii": vi * vi, "wjj": vj * vj, "re": vi * vj * math.cos(t), "im": vi * vj * math.sin(t)}


def test_lnc_valid_by_sampling():
    rng = np.random.default_rng(RNG_SEED)
    bi, bj, ang = Interval(0.9, 1.1), Interval(0.95, 1.05), Interval(-0.3, 0.5)
    cuts = lnc_cuts("wii", "wjj", "re", "im", bi, bj, ang)
    worst = max(cuts.max_violation(_lnc_point(rng.uniform(*bi), rng.uniform(*bj), rng.uniform(*ang)))
                for _ in range(10_000))
    assert worst <= 1e-10


def test_lnc_degenerate_box_is_tight():
    v1, v2, t = 1.03, 0.97, 0.2
    cuts = lnc_cuts("wii", "wjj", "re", "im", Interval(v1, v1), Interval(v2, v2), Interval(t, t))
    pt = _lnc_point(v1, v2, t)
    for c in cuts:
        assert c.expr.value(pt) == pytest.approx(0.0, abs=1e-12)


def test_lnc_wider_angle_loosens():
    rng = np.random.default_rng(RNG_SEED)
    bi, bj = Interval(0.9, 1.1), Interval(0.95, 1.05)
    phi = 0.1
    for _ in range(200):
        vi, vj = rng.uniform(*bi), rng.uniform(*bj)
        t = phi + rng.uniform(-0.2, 0.2)
        pt = _lnc_point(vi, vj, t)
        narrow = lnc_cuts("wii", "wjj", "re", "im", bi, bj, Interval(phi - 0.2, phi + 0.2))
        wide = lnc_cuts("wii", "wjj", "re", "im", bi, bj, Interval(phi - 0.4, phi + 0.4))
        for a, b in zip(narrow, wide):
            assert b.expr.value(pt) >= a.expr.value(pt) - 1e-12
